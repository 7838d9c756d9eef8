mod support;

use flare_core::analysis::{fisher_score, kl_divergence};
use flare_core::features::{flow_features, packet_features, per_second_counts, summary_stats, FeatureConfig};
use flare_core::fusion::{binarize_labels, build_meta_features, fusion_loss, ArchFamily, ArchLabel, TargetClass};
use flare_core::ingest::{Direction, PacketRecord, StationId};
use flare_core::learners::{
    fit_forest, fit_gbt, grid_search, stratified_kfold, Dataset, ForestParams, GbtParams, LogisticParams,
    ModelSpec, ProbabilityModel,
};
use flare_core::segmentation::{TrafficWindow, WindowOrigin};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;

fn pkt(t_us: u64, size: u32, dir: Direction) -> PacketRecord {
    PacketRecord {
        timestamp_us: t_us,
        size_bytes: size,
        direction: dir,
        station_id: StationId([2, 0, 0, 0, 0, 9]),
    }
}

fn window(start_us: u64, duration_us: u64, packets: Vec<PacketRecord>, label: Option<ArchLabel>) -> TrafficWindow {
    TrafficWindow {
        start_us,
        duration_us,
        packets,
        origin: WindowOrigin {
            client_id: StationId([2, 0, 0, 0, 0, 9]),
            trace_id: "t".into(),
            index: 0,
        },
        label,
    }
}

#[test]
fn summary_stats_against_brute_force() {
    for v in random_samples(1, 300) {
        let err = summary_stats_error(&v);
        assert!(err < 1e-9, "{v:?}: {err}");
    }
}

#[test]
fn summary_stats_outlier_sample() {
    let v = [1.0, 2.0, 3.0, 4.0, 100.0];
    assert!(summary_stats_error(&v) < 1e-9);
    let s = summary_stats(&v).unwrap();
    assert_eq!(s.mean, 22.0);
    assert_eq!(s.median(), 3.0);
    assert_eq!(s.mad, 1.0);
    assert!(s.skewness > 1.0);
}

#[test]
fn stump_matches_exhaustive_search() {
    let bad = stump_mismatches();
    assert!(bad.is_empty(), "{} mismatches, first: {}", bad.len(), bad[0]);
}

#[test]
fn forest_probability_is_tree_average() {
    assert!(forest_average_error() < 1e-12);
}

#[test]
fn logistic_gradient_against_finite_differences() {
    let err = logistic_gradient_error(10);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn kl_against_direct_sum() {
    assert!(kl_error(500) < 1e-12);
}

#[test]
fn kl_of_identical_histograms_is_zero() {
    let p = [0.1, 0.0, 0.6, 0.3];
    assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-15);
}

#[test]
fn folds_balanced_103_samples() {
    let y: Vec<u8> = (0..103).map(|i| u8::from(i < 70)).collect();
    for seed in 0..20 {
        assert!(folds_balanced(&y, 5, seed));
    }
    let folds = stratified_kfold(&y, 5, 3).unwrap();
    for f in &folds {
        let neg = f.iter().filter(|&&i| y[i] == 0).count();
        assert!(neg == 6 || neg == 7, "{neg}");
        assert_eq!(f.len() - neg, 14);
    }
}

#[test]
fn grid_search_recomputes_mean_f1() {
    let ds = forest_fixture(9, 60);
    let grid: Vec<ModelSpec> = [(3, 2), (3, 6), (9, 2), (9, 6)]
        .into_iter()
        .map(|(n_trees, max_depth)| {
            ModelSpec::Forest(ForestParams {
                n_trees,
                max_depth,
                seed: 1,
                ..ForestParams::default()
            })
        })
        .collect();
    let res = grid_search(&ds, &grid, 3, 11).unwrap();
    assert_eq!(res.rows.len(), 4);
    let folds = stratified_kfold(ds.labels(), 3, 11).unwrap();
    for row in &res.rows {
        let mean = row.fold_f1.iter().sum::<f64>() / row.fold_f1.len() as f64;
        assert!((mean - row.mean_f1).abs() < 1e-12);
        // refit each fold independently and score it
        for (f, test) in folds.iter().enumerate() {
            let train = flare_core::learners::fold_complement(&folds, f);
            let model = row.spec.fit(&ds.subset(&train)).unwrap();
            let y_true: Vec<u8> = test.iter().map(|&i| ds.labels()[i]).collect();
            let y_pred: Vec<u8> = test.iter().map(|&i| u8::from(model.predict_proba(ds.row(i)) >= 0.5)).collect();
            assert!((f1_from_counts(&y_true, &y_pred) - row.fold_f1[f]).abs() < 1e-12);
        }
    }
    let best = res.rows.iter().map(|r| r.mean_f1).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(res.rows[res.best_index].mean_f1, best);
    assert_eq!(res.rows.iter().position(|r| r.mean_f1 == best), Some(res.best_index));
}

#[test]
fn grid_search_singleton_and_duplicates() {
    let ds = forest_fixture(2, 40);
    let spec = ModelSpec::Logistic(LogisticParams::default());
    let single = grid_search(&ds, std::slice::from_ref(&spec), 4, 0).unwrap();
    assert_eq!(single.best_index, 0);
    let dup = grid_search(&ds, &[spec.clone(), spec], 4, 0).unwrap();
    assert_eq!(dup.rows[0].mean_f1, dup.rows[1].mean_f1);
    assert_eq!(dup.best_index, 0);
}

#[test]
fn fusion_loss_against_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let n = rng.random_range(1..50);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let direct = p
            .iter()
            .zip(&y)
            .map(|(&pi, &yi)| {
                let pi = pi.clamp(1e-12, 1.0 - 1e-12);
                -(yi as f64 * pi.ln() + (1.0 - yi as f64) * (1.0 - pi).ln())
            })
            .sum::<f64>()
            / n as f64;
        assert!((fusion_loss(&p, &y).unwrap() - direct).abs() < 1e-12);
    }
    assert!((fusion_loss(&[0.5], &[1]).unwrap() - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn meta_features_recompute() {
    let ds_flow = forest_fixture(5, 50);
    let ds_pkt = forest_fixture(6, 50);
    let fp = ForestParams {
        n_trees: 7,
        ..ForestParams::default()
    };
    let hf = fit_forest(&ds_flow, &fp).unwrap();
    let hp = fit_forest(&ds_pkt, &fp).unwrap();
    let flow: Vec<Vec<f64>> = ds_flow.rows().map(<[f64]>::to_vec).collect();
    let packet: Vec<Vec<f64>> = ds_pkt.rows().map(<[f64]>::to_vec).collect();
    let meta = build_meta_features(&hf, &hp, &flow, &packet, TargetClass::Rnn).unwrap();
    assert_eq!(meta.len(), 50);
    for (i, m) in meta.iter().enumerate() {
        assert_eq!(m.p_flow, hf.predict_proba(&flow[i]));
        assert_eq!(m.p_pkt, hp.predict_proba(&packet[i]));
        assert_eq!(m.as_row(), vec![m.p_flow, m.p_pkt]);
    }
}

#[test]
fn binarize_label_census() {
    let labels = [
        (ArchFamily::Cnn, "resnet18"),
        (ArchFamily::Cnn, "custom_cnn"),
        (ArchFamily::Rnn, "lstm"),
        (ArchFamily::Other, "mlp"),
        (ArchFamily::Rnn, "gru"),
    ];
    let windows: Vec<TrafficWindow> = labels
        .iter()
        .map(|(f, m)| window(0, 1, vec![], Some(ArchLabel::new(*f, *m, "d").unwrap())))
        .collect();
    assert_eq!(binarize_labels(&windows, TargetClass::Cnn).unwrap(), vec![1, 1, 0, 0, 0]);
    assert_eq!(binarize_labels(&windows, TargetClass::Rnn).unwrap(), vec![0, 0, 1, 0, 1]);
}

#[test]
fn fisher_score_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let rows: Vec<Vec<f64>> = (0..20)
        .map(|i| (0..5).map(|j| rng.random_range(0.0..1.0) + if i < 8 { j as f64 * 0.3 } else { 0.0 }).collect())
        .collect();
    let y: Vec<u8> = (0..20).map(|i| u8::from(i < 8)).collect();
    let got = fisher_score(&rows, &y).unwrap();
    for j in 0..5 {
        let col = |c: u8| -> Vec<f64> { (0..20).filter(|&i| y[i] == c).map(|i| rows[i][j]).collect() };
        let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let all: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let (a, b) = (col(1), col(0));
        let (mu, ma, mb) = (m(&all), m(&a), m(&b));
        let sa = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>();
        let sb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>();
        let want = (a.len() as f64 * (ma - mu).powi(2) + b.len() as f64 * (mb - mu).powi(2)) / (sa + sb);
        assert!(close(got[j], want, 1e-12), "{j}: {} vs {want}", got[j]);
    }
}

#[test]
fn flow_features_against_manual_binning() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let start = 5_000_000;
    let mut packets: Vec<PacketRecord> = (0..400)
        .map(|_| {
            let dir = if rng.random_bool(0.4) { Direction::Uplink } else { Direction::Downlink };
            pkt(start + rng.random_range(0..30_000_000), rng.random_range(40..1500), dir)
        })
        .collect();
    packets.sort_by_key(|p| p.timestamp_us);
    let w = window(start, 30_000_000, packets.clone(), None);
    let counts = per_second_counts(&w);
    assert_eq!(counts.len(), 30);
    for (s, c) in counts.iter().enumerate() {
        let lo = start + s as u64 * 1_000_000;
        let n = packets.iter().filter(|p| p.timestamp_us >= lo && p.timestamp_us < lo + 1_000_000).count();
        assert_eq!(*c, n as f64);
    }
    let ff = flow_features(&w).unwrap();
    let rate = summary_stats(&counts).unwrap();
    assert_eq!(ff.rate_stats, [rate.mean, rate.max, rate.min, rate.median(), rate.std]);
    let up: Vec<f64> = packets
        .iter()
        .filter(|p| p.direction == Direction::Uplink)
        .map(|p| p.size_bytes as f64)
        .collect();
    assert!(summary_stats_error(&up) < 1e-9);
    assert_eq!(ff.up_size, summary_stats(&up).unwrap());
    assert_eq!(ff.to_vec().len(), 39);
}

#[test]
fn packet_features_small_window() {
    let w = window(
        1_000_000,
        10_000_000,
        vec![
            pkt(1_500_000, 70, Direction::Uplink),
            pkt(2_000_000, 130, Direction::Downlink),
            pkt(2_250_000, 1500, Direction::Downlink),
        ],
        None,
    );
    let f = packet_features(&w, &FeatureConfig::default()).unwrap();
    let mut hist = vec![0.0; 25];
    hist[70 / 64] += 1.0 / 3.0;
    hist[130 / 64] += 1.0 / 3.0;
    hist[1500 / 64] += 1.0 / 3.0;
    assert_eq!(f.length_histogram, hist);
    assert_eq!((f.first_size, f.last_size), (70.0, 1500.0));
    assert!((f.first_iat - 0.5).abs() < 1e-12);
    assert!((f.last_iat - 0.25).abs() < 1e-12);
    assert_eq!(f.to_vec().len(), 29);
}

#[test]
fn gbt_single_stump_separates() {
    let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
    let y: Vec<u8> = (0..20).map(|i| u8::from(i >= 10)).collect();
    let ds = Dataset::new(&rows, y.clone(), vec![]).unwrap();
    let fit = fit_gbt(
        &ds,
        &GbtParams {
            n_rounds: 1,
            learning_rate: 1.0,
            max_depth: 1,
            min_leaf: 1,
        },
    )
    .unwrap();
    assert_eq!(fit.model.trees.len(), 1);
    let correct = rows
        .iter()
        .zip(&y)
        .filter(|(r, &t)| u8::from(fit.model.predict_proba(r) >= 0.5) == t)
        .count();
    assert_eq!(correct, 20);
    assert!(fit.loss_trace[1] < fit.loss_trace[0]);
}

#[test]
fn forest_variance_shrinks_with_more_trees() {
    let ds = forest_fixture(14, 60);
    let probe: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 15.0; 4]).collect();
    let spread = |n_trees: usize| -> f64 {
        let preds: Vec<Vec<f64>> = (0..8)
            .map(|seed| {
                let f = fit_forest(
                    &ds,
                    &ForestParams {
                        n_trees,
                        seed,
                        ..ForestParams::default()
                    },
                )
                .unwrap();
                probe.iter().map(|x| f.predict_proba(x)).collect()
            })
            .collect();
        (0..probe.len())
            .map(|j| {
                let col: Vec<f64> = preds.iter().map(|p| p[j]).collect();
                let m = col.iter().sum::<f64>() / col.len() as f64;
                col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64
            })
            .sum::<f64>()
    };
    assert!(spread(100) < spread(5));
}
