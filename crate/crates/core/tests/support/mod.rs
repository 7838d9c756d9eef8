//! Independent reference implementations used by the oracle tests and the
//! acceptance suite. Nothing here calls into the code under test except to
//! obtain the value being checked.

#![allow(dead_code)]

use flare_core::analysis::{kl_divergence, precision_recall_f1};
use flare_core::features::summary_stats;
use flare_core::learners::{
    fit_forest, fit_tree, logistic_objective, stratified_kfold, Dataset, ForestParams, Node,
    ProbabilityModel, TreeParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

// ---- descriptive statistics ----

/// Linear-interpolation percentile computed from rank `q (n - 1)`.
pub fn brute_percentile(values: &[f64], q: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = q * (s.len() as f64 - 1.0);
    let below = rank.floor() as usize;
    if below + 1 >= s.len() {
        return s[s.len() - 1];
    }
    let w = rank - below as f64;
    (1.0 - w) * s[below] + w * s[below + 1]
}

/// `(mean, variance, skewness, kurtosis, mad)` by direct definition.
pub fn brute_moments(values: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let central = |k: i32| values.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / n;
    let var = central(2);
    let (skew, kurt) = if var > 0.0 {
        (central(3) / var.powf(1.5), central(4) / (var * var))
    } else {
        (0.0, 0.0)
    };
    let med = brute_percentile(values, 0.5);
    let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    (mean, var, skew, kurt, brute_percentile(&dev, 0.5))
}

/// Largest deviation between `summary_stats` and the brute-force values.
pub fn summary_stats_error(values: &[f64]) -> f64 {
    let s = summary_stats(values).unwrap();
    let (mean, var, skew, kurt, mad) = brute_moments(values);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let rel = |a: f64, b: f64| (a - b).abs() / (1.0 + b.abs());
    let mut err = [
        rel(s.mean, mean),
        rel(s.variance, var),
        rel(s.std, var.sqrt()),
        rel(s.skewness, skew),
        rel(s.kurtosis, kurt),
        rel(s.mad, mad),
        rel(s.max, max),
        rel(s.min, min),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    for (i, d) in s.deciles.iter().enumerate() {
        err = err.max(rel(*d, brute_percentile(values, (i + 1) as f64 / 10.0)));
    }
    err
}

pub fn random_samples(seed: u64, cases: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases)
        .map(|_| {
            let n = rng.random_range(1..60);
            let scale = 10f64.powi(rng.random_range(-2..5));
            (0..n)
                .map(|_| {
                    // mix of continuous values and repeats
                    if rng.random_bool(0.3) {
                        rng.random_range(0..4) as f64
                    } else {
                        rng.random_range(-1.0..1.0) * scale
                    }
                })
                .collect()
        })
        .collect()
}

// ---- depth-1 split search ----

fn gini_total(labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let n = labels.len() as f64;
    let p = labels.iter().filter(|&&v| v == 1).count() as f64 / n;
    n * (1.0 - p * p - (1.0 - p) * (1.0 - p))
}

/// Exhaustive best stump: every feature, every midpoint between distinct
/// consecutive values. Ties resolve to the lowest feature, then the lowest
/// threshold. `None` when no split lowers the impurity.
pub fn exhaustive_stump(rows: &[Vec<f64>], y: &[u8]) -> Option<(usize, f64, f64)> {
    let parent = gini_total(y);
    let mut cands = Vec::new();
    for f in 0..rows[0].len() {
        let mut vals: Vec<f64> = rows.iter().map(|r| r[f]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        for pair in vals.windows(2) {
            let thr = (pair[0] + pair[1]) / 2.0;
            let (mut l, mut r) = (Vec::new(), Vec::new());
            for (row, &lab) in rows.iter().zip(y) {
                if row[f] <= thr {
                    l.push(lab)
                } else {
                    r.push(lab)
                }
            }
            cands.push((f, thr, parent - gini_total(&l) - gini_total(&r)));
        }
    }
    let best = cands.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    if best <= 1e-12 {
        return None;
    }
    cands.into_iter().find(|c| c.2 >= best - 1e-9)
}

/// Every labelling of six samples crossed with fixed feature layouts
/// (distinct values, ties, a constant column, reversed order) plus random
/// integer-valued layouts.
pub fn six_sample_fixtures() -> Vec<(Vec<Vec<f64>>, Vec<u8>)> {
    let mut layouts: Vec<[[f64; 2]; 6]> = vec![
        [[0.0, 5.0], [1.0, 4.0], [2.0, 3.0], [3.0, 2.0], [4.0, 1.0], [5.0, 0.0]],
        [[0.0, 1.0], [0.0, 1.0], [1.0, 0.0], [1.0, 0.0], [2.0, 2.0], [2.0, 2.0]],
        [[3.0, 7.0], [1.0, 7.0], [4.0, 7.0], [1.0, 7.0], [5.0, 7.0], [9.0, 7.0]],
        [[0.5, 0.1], [0.25, 0.9], [0.75, 0.3], [0.125, 0.7], [0.625, 0.5], [0.375, 0.2]],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for _ in 0..6 {
        let mut l = [[0.0; 2]; 6];
        for row in &mut l {
            *row = [rng.random_range(0..4) as f64, rng.random_range(0..4) as f64];
        }
        layouts.push(l);
    }
    let mut out = Vec::new();
    for layout in &layouts {
        for mask in 0u32..64 {
            let y: Vec<u8> = (0..6).map(|i| ((mask >> i) & 1) as u8).collect();
            out.push((layout.iter().map(|r| r.to_vec()).collect(), y));
        }
    }
    out
}

/// Fixtures where the fitted stump disagrees with the exhaustive search.
pub fn stump_mismatches() -> Vec<String> {
    let params = TreeParams {
        max_depth: 1,
        min_leaf: 1,
        features_per_split: Some(2),
    };
    let mut bad = Vec::new();
    for (rows, y) in six_sample_fixtures() {
        let ds = Dataset::new(&rows, y.clone(), vec![]).unwrap();
        let tree = fit_tree(&ds, &params, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let got = match tree.nodes()[0] {
            Node::Split {
                feature, threshold, ..
            } => Some((feature, threshold)),
            Node::Leaf { .. } => None,
        };
        let want = exhaustive_stump(&rows, &y).map(|(f, t, _)| (f, t));
        let same = match (got, want) {
            (None, None) => true,
            (Some((f1, t1)), Some((f2, t2))) => f1 == f2 && (t1 - t2).abs() < 1e-12,
            _ => false,
        };
        if !same {
            bad.push(format!("{rows:?} {y:?}: got {got:?}, want {want:?}"));
        }
    }
    bad
}

// ---- forest ----

pub fn forest_fixture(seed: u64, n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let c = (i % 2) as u8;
        let shift = if c == 1 { 0.8 } else { 0.0 };
        rows.push((0..4).map(|_| rng.random_range(0.0..1.0) + shift).collect::<Vec<f64>>());
        y.push(c);
    }
    Dataset::new(&rows, y, vec![]).unwrap()
}

/// Largest gap between the forest probability and the mean of its trees.
pub fn forest_average_error() -> f64 {
    let ds = forest_fixture(3, 80);
    let forest = fit_forest(
        &ds,
        &ForestParams {
            n_trees: 10,
            max_depth: 4,
            seed: 5,
            ..ForestParams::default()
        },
    )
    .unwrap();
    let mut err: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-0.5..2.0)).collect();
        let avg = forest.trees().iter().map(|t| t.predict(&x)).sum::<f64>() / forest.trees().len() as f64;
        err = err.max((forest.predict_proba(&x) - avg).abs());
    }
    err
}

// ---- logistic gradient ----

/// Largest relative error of the analytic gradient against central
/// differences at `points` random parameter vectors.
pub fn logistic_gradient_error(points: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let d = 3;
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let y: Vec<u8> = rows.iter().map(|r| u8::from(r[0] - 0.5 * r[1] + rng.random_range(-1.0..1.0) > 0.0)).collect();
    let l2 = 0.1;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b = rng.random_range(-1.0..1.0);
        let (_, gw, gb) = logistic_objective(&rows, &y, &w, b, l2);
        let f = |w: &[f64], b: f64| logistic_objective(&rows, &y, w, b, l2).0;
        let mut fd = Vec::new();
        for j in 0..d {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[j] += h;
            wm[j] -= h;
            fd.push((f(&wp, b) - f(&wm, b)) / (2.0 * h));
        }
        fd.push((f(&w, b + h) - f(&w, b - h)) / (2.0 * h));
        let analytic: Vec<f64> = gw.iter().copied().chain([gb]).collect();
        for (a, n) in analytic.iter().zip(&fd) {
            worst = worst.max((a - n).abs() / a.abs().max(1e-3));
        }
    }
    worst
}

// ---- KL ----

pub fn direct_kl(p: &[f64], q: &[f64], eps: f64) -> f64 {
    let sp: f64 = p.iter().map(|v| v + eps).sum();
    let sq: f64 = q.iter().map(|v| v + eps).sum();
    let mut total = 0.0;
    for i in 0..p.len() {
        let a = (p[i] + eps) / sp;
        let b = (q[i] + eps) / sq;
        total += a * (a.ln() - b.ln());
    }
    total
}

pub fn random_histogram(rng: &mut ChaCha8Rng, bins: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..bins)
        .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..1.0) })
        .collect();
    let s: f64 = raw.iter().sum::<f64>().max(1e-300);
    raw.into_iter().map(|v| v / s).collect()
}

pub fn kl_error(cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let bins = rng.random_range(1..40);
        let p = random_histogram(&mut rng, bins);
        let q = random_histogram(&mut rng, bins);
        let got = kl_divergence(&p, &q).unwrap();
        worst = worst.max((got - direct_kl(&p, &q, 1e-10)).abs());
    }
    worst
}

// ---- folds ----

/// Checks that every fold holds `floor` or `ceil` of each class's share and
/// that the folds partition the indices.
pub fn folds_balanced(y: &[u8], k: usize, seed: u64) -> bool {
    let folds = stratified_kfold(y, k, seed).unwrap();
    let mut seen = vec![0usize; y.len()];
    for f in &folds {
        for &i in f {
            seen[i] += 1;
        }
    }
    if seen.iter().any(|&c| c != 1) {
        return false;
    }
    for class in [0u8, 1] {
        let total = y.iter().filter(|&&v| v == class).count();
        let counts: Vec<usize> = folds
            .iter()
            .map(|f| f.iter().filter(|&&i| y[i] == class).count())
            .collect();
        let lo = total / k;
        let hi = total.div_ceil(k);
        if counts.iter().any(|&c| c < lo || c > hi) {
            return false;
        }
    }
    let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
    sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1
}

/// F1 from the confusion counts, for cross-checking metrics.
pub fn f1_from_counts(y_true: &[u8], y_pred: &[u8]) -> f64 {
    let tp = y_true.iter().zip(y_pred).filter(|(&t, &p)| t == 1 && p == 1).count() as f64;
    let fp = y_true.iter().zip(y_pred).filter(|(&t, &p)| t == 0 && p == 1).count() as f64;
    let fne = y_true.iter().zip(y_pred).filter(|(&t, &p)| t == 1 && p == 0).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    2.0 * tp / (2.0 * tp + fp + fne)
}

pub fn f1_matches(y_true: &[u8], y_pred: &[u8]) -> bool {
    (precision_recall_f1(y_true, y_pred).unwrap().f1 - f1_from_counts(y_true, y_pred)).abs() < 1e-12
}
