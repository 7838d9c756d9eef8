//! Evaluation harnesses and separability analytics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{
    featurize_corpus, predict_features, train_on_features, ArchFamily, FusionError, LabeledFeatures,
    PipelineConfig, TargetClass,
};
use crate::ingest::{ClientTrace, PacketRecord};
use crate::par;
use crate::segmentation::WindowConfig;

/// Smallest and largest window lengths accepted by the sweep, in seconds.
pub const SWEEP_RANGE_S: (f64, f64) = (60.0, 900.0);

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("label at index {0} is not binary")]
    NonBinary(usize),
    #[error("expected exactly {expected} runs, got {got}")]
    WrongRunCount { expected: usize, got: usize },
    #[error("both classes must be present")]
    SingleClass,
    #[error("histograms have {0} and {1} bins")]
    BinMismatch(usize, usize),
    #[error("held-out model `{0}` does not occur in the corpus")]
    UnknownModelName(String),
    #[error("window length {0} s is outside [60, 900]")]
    InvalidWindow(f64),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("csv: {0}")]
    Csv(String),
}

impl AnalysisError {
    pub fn kind(&self) -> &'static str {
        match self {
            AnalysisError::LengthMismatch(..) => "length_mismatch",
            AnalysisError::NonBinary(_) => "non_binary",
            AnalysisError::WrongRunCount { .. } => "wrong_run_count",
            AnalysisError::SingleClass => "single_class",
            AnalysisError::BinMismatch(..) => "bin_mismatch",
            AnalysisError::UnknownModelName(_) => "unknown_model_name",
            AnalysisError::InvalidWindow(_) => "invalid_window",
            AnalysisError::EmptyInput(_) => "empty_input",
            AnalysisError::InvalidParam(_) => "invalid_param",
            AnalysisError::Fusion(e) => e.kind(),
            AnalysisError::Csv(_) => "csv",
        }
    }
}

impl From<csv::Error> for AnalysisError {
    fn from(e: csv::Error) -> Self {
        AnalysisError::Csv(e.to_string())
    }
}

/// Point metrics for one binary decision set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a zero denominator forced a metric to 0.
    pub degenerate: bool,
}

impl Prf {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
            Metric::F1 => self.f1,
        }
    }
}

pub fn precision_recall_f1(y_true: &[u8], y_pred: &[u8]) -> Result<Prf, AnalysisError> {
    if y_true.len() != y_pred.len() {
        return Err(AnalysisError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        if t > 1 || p > 1 {
            return Err(AnalysisError::NonBinary(i));
        }
        match (t, p) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (1, 0) => fne += 1,
            _ => {}
        }
    }
    let mut degenerate = false;
    let mut ratio = |num: usize, den: usize| {
        if den == 0 {
            degenerate = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fne);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        degenerate = true;
        0.0
    };
    Ok(Prf {
        precision,
        recall,
        f1,
        degenerate,
    })
}

/// Two-sided 95% Student t quantiles for df = 1..=30.
const T95: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160, 2.145,
    2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048,
    2.045, 2.042,
];

/// Two-sided 95% t quantile; the normal 1.96 beyond 30 degrees of freedom.
pub fn t_critical(df: usize) -> f64 {
    match df {
        0 => f64::NAN,
        1..=30 => T95[df - 1],
        _ => 1.96,
    }
}

/// Runs required by the paper protocol in strict mode.
pub const PAPER_RUNS: usize = 5;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn population_std(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// `(mean, half_width)` with `half_width = t(n-1) * s / sqrt(n)`. A single
/// run has half-width 0. `strict` demands exactly five runs.
pub fn ci95(run_scores: &[f64], strict: bool) -> Result<(f64, f64), AnalysisError> {
    if strict && run_scores.len() != PAPER_RUNS {
        return Err(AnalysisError::WrongRunCount {
            expected: PAPER_RUNS,
            got: run_scores.len(),
        });
    }
    if run_scores.is_empty() {
        return Err(AnalysisError::EmptyInput("no run scores".into()));
    }
    let n = run_scores.len();
    let m = mean(run_scores);
    if n == 1 {
        return Ok((m, 0.0));
    }
    let half = t_critical(n - 1) * sample_std(run_scores) / (n as f64).sqrt();
    Ok((m, half))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Flow,
    Packet,
    Fusion,
}

impl View {
    pub const ALL: [View; 3] = [View::Flow, View::Packet, View::Fusion];

    pub fn name(self) -> &'static str {
        match self {
            View::Flow => "flow",
            View::Packet => "packet",
            View::Fusion => "fusion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Precision,
    Recall,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Precision, Metric::Recall, Metric::F1];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
        }
    }
}

/// Scores of one run for one class and view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub run: usize,
    pub seed: u64,
    pub target: TargetClass,
    pub view: View,
    pub prf: Prf,
    /// Std of each metric over bootstrap resamples of this run's test windows.
    pub boot_std: [f64; 3],
    pub n_test: usize,
}

/// One aggregated row: a (class, view, metric) cell of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub target: TargetClass,
    pub view: View,
    pub metric: Metric,
    pub mean: f64,
    /// Std across runs; absent for a single run.
    pub std_runs: Option<f64>,
    /// Mean over runs of the per-run bootstrap std; absent for a single run.
    pub std_samples: Option<f64>,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub run_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub rows: Vec<MetricsRow>,
    pub runs: Vec<RunScore>,
}

impl MetricsReport {
    pub fn row(&self, target: TargetClass, view: View, metric: Metric) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.target == target && r.view == view && r.metric == metric)
    }

    /// Per-run scores for one cell, in run order.
    pub fn run_values(&self, target: TargetClass, view: View, metric: Metric) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.target == target && r.view == view)
            .map(|r| r.prf.get(metric))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub pipeline: PipelineConfig,
    /// One run per seed.
    pub seeds: Vec<u64>,
    /// Fraction of each model's traces held out for testing.
    pub test_frac: f64,
    pub bootstrap_groups: usize,
    /// Require exactly five runs for the confidence interval.
    pub strict_runs: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            pipeline: PipelineConfig::default(),
            seeds: vec![1, 2, 3, 4, 5],
            test_frac: 1.0 / 3.0,
            bootstrap_groups: 20,
            strict_runs: false,
        }
    }
}

fn trace_model(trace: &ClientTrace) -> Result<String, FusionError> {
    trace
        .label
        .as_ref()
        .map(|l| l.model_name.clone())
        .ok_or_else(|| FusionError::UnlabeledWindow(trace.trace_id()))
}

/// Trace-level train/test split stratified by model name. Models with a
/// single trace stay in training. Returns `(train, test)` trace ids.
pub fn split_traces(
    corpus: &[ClientTrace],
    test_frac: f64,
    seed: u64,
) -> Result<(BTreeSet<String>, BTreeSet<String>), AnalysisError> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(AnalysisError::InvalidParam(format!(
            "test_frac must be in (0, 1), got {test_frac}"
        )));
    }
    let mut by_model: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for t in corpus {
        by_model.entry(trace_model(t)?).or_default().push(t.trace_id());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (BTreeSet::new(), BTreeSet::new());
    for (_, mut ids) in by_model {
        ids.sort();
        ids.shuffle(&mut rng);
        let n = ids.len();
        let n_test = if n < 2 {
            0
        } else {
            ((test_frac * n as f64).round() as usize).clamp(1, n - 1)
        };
        for (i, id) in ids.into_iter().enumerate() {
            if i < n_test {
                test.insert(id);
            } else {
                train.insert(id);
            }
        }
    }
    Ok((train, test))
}

fn select(data: &LabeledFeatures, ids: &BTreeSet<String>) -> LabeledFeatures {
    let idx: Vec<usize> = (0..data.len())
        .filter(|&i| ids.contains(&data.trace_ids[i]))
        .collect();
    data.subset(&idx)
}

fn bootstrap_std(y: &[u8], pred: &[u8], groups: usize, rng: &mut ChaCha8Rng) -> [f64; 3] {
    if groups < 2 || y.is_empty() {
        return [0.0; 3];
    }
    let n = y.len();
    let mut samples: [Vec<f64>; 3] = Default::default();
    for _ in 0..groups {
        let (mut ys, mut ps) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let i = rng.random_range(0..n);
            ys.push(y[i]);
            ps.push(pred[i]);
        }
        let m = precision_recall_f1(&ys, &ps).expect("equal-length binary vectors");
        for (k, metric) in Metric::ALL.into_iter().enumerate() {
            samples[k].push(m.get(metric));
        }
    }
    samples.map(|s| sample_std(&s))
}

fn score_run(
    train: &LabeledFeatures,
    test: &LabeledFeatures,
    cfg: &EvalConfig,
    run: usize,
    seed: u64,
) -> Result<Vec<RunScore>, AnalysisError> {
    if test.is_empty() {
        return Err(AnalysisError::EmptyInput("test split has no active windows".into()));
    }
    let pcfg = PipelineConfig {
        seed: par::derive_seed(seed, 1),
        ..cfg.pipeline.clone()
    };
    let (pipeline, _, _) = train_on_features(train, &pcfg)?;
    let preds = (0..test.len())
        .map(|i| predict_features(&pipeline, &test.flow[i], &test.packet[i]))
        .collect::<Result<Vec<_>, _>>()?;
    let thr = pcfg.threshold;
    let mut out = Vec::new();
    for target in TargetClass::ALL {
        let y = test.binary_labels(target)?;
        for view in View::ALL {
            let pred: Vec<u8> = preds
                .iter()
                .map(|p| {
                    let c = p.class(target);
                    let prob = match view {
                        View::Flow => c.p_flow,
                        View::Packet => c.p_pkt,
                        View::Fusion => c.p_fused,
                    };
                    u8::from(prob >= thr)
                })
                .collect();
            let prf = precision_recall_f1(&y, &pred)?;
            let stream = 10 + 3 * (target as u64) + view as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(par::derive_seed(seed, stream));
            out.push(RunScore {
                run,
                seed,
                target,
                view,
                prf,
                boot_std: bootstrap_std(&y, &pred, cfg.bootstrap_groups, &mut rng),
                n_test: y.len(),
            });
        }
    }
    Ok(out)
}

fn aggregate(scenario: &str, runs: Vec<RunScore>, strict: bool) -> Result<MetricsReport, AnalysisError> {
    let mut rows = Vec::new();
    for target in TargetClass::ALL {
        for view in View::ALL {
            let cell: Vec<&RunScore> = runs
                .iter()
                .filter(|r| r.target == target && r.view == view)
                .collect();
            for (k, metric) in Metric::ALL.into_iter().enumerate() {
                let scores: Vec<f64> = cell.iter().map(|r| r.prf.get(metric)).collect();
                let (m, half) = ci95(&scores, strict)?;
                let multi = scores.len() > 1;
                rows.push(MetricsRow {
                    scenario: scenario.to_string(),
                    target,
                    view,
                    metric,
                    mean: m,
                    std_runs: multi.then(|| sample_std(&scores)),
                    std_samples: multi.then(|| mean(&cell.iter().map(|r| r.boot_std[k]).collect::<Vec<_>>())),
                    ci95_low: m - half,
                    ci95_high: m + half,
                    run_scores: scores,
                });
            }
        }
    }
    Ok(MetricsReport {
        scenario: scenario.to_string(),
        rows,
        runs,
    })
}

fn closed_world_on(
    scenario: &str,
    corpus: &[ClientTrace],
    data: &LabeledFeatures,
    cfg: &EvalConfig,
) -> Result<MetricsReport, AnalysisError> {
    if cfg.seeds.is_empty() {
        return Err(AnalysisError::EmptyInput("no seeds".into()));
    }
    let mut runs = Vec::new();
    for (run, &seed) in cfg.seeds.iter().enumerate() {
        let (train_ids, test_ids) = split_traces(corpus, cfg.test_frac, par::derive_seed(seed, 0))?;
        runs.extend(score_run(&select(data, &train_ids), &select(data, &test_ids), cfg, run, seed)?);
    }
    aggregate(scenario, runs, cfg.strict_runs)
}

/// Every model is seen in training; test windows come from held-out traces.
pub fn evaluate_closed_world(corpus: &[ClientTrace], cfg: &EvalConfig) -> Result<MetricsReport, AnalysisError> {
    let data = featurize_corpus(corpus, &cfg.pipeline.window, &cfg.pipeline.features)?;
    closed_world_on("closed_world", corpus, &data, cfg)
}

/// Traces of `holdout_models` never reach training and all land in the test
/// split, where they count as Rest unless their family is the target.
pub fn evaluate_open_world(
    corpus: &[ClientTrace],
    holdout_models: &[String],
    cfg: &EvalConfig,
) -> Result<MetricsReport, AnalysisError> {
    if holdout_models.is_empty() {
        return Err(AnalysisError::InvalidParam("holdout_models must not be empty".into()));
    }
    if cfg.seeds.is_empty() {
        return Err(AnalysisError::EmptyInput("no seeds".into()));
    }
    let holdout: BTreeSet<&str> = holdout_models.iter().map(String::as_str).collect();
    let mut known = Vec::new();
    let mut held_ids = BTreeSet::new();
    for t in corpus {
        if holdout.contains(trace_model(t)?.as_str()) {
            held_ids.insert(t.trace_id());
        } else {
            known.push(t.clone());
        }
    }
    for m in &holdout {
        if !corpus.iter().any(|t| t.label.as_ref().is_some_and(|l| l.model_name == *m)) {
            return Err(AnalysisError::UnknownModelName(m.to_string()));
        }
    }
    let data = featurize_corpus(corpus, &cfg.pipeline.window, &cfg.pipeline.features)?;
    let mut runs = Vec::new();
    for (run, &seed) in cfg.seeds.iter().enumerate() {
        let (train_ids, mut test_ids) = split_traces(&known, cfg.test_frac, par::derive_seed(seed, 0))?;
        test_ids.extend(held_ids.iter().cloned());
        runs.extend(score_run(&select(&data, &train_ids), &select(&data, &test_ids), cfg, run, seed)?);
    }
    aggregate("open_world", runs, cfg.strict_runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub window_s: f64,
    pub target: TargetClass,
    pub view: View,
    pub mean_f1: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub n_windows: usize,
}

/// Re-segments the corpus at each window length (stride = length) and runs
/// the closed-world evaluation.
pub fn window_sweep(
    corpus: &[ClientTrace],
    window_lengths: &[f64],
    cfg: &EvalConfig,
) -> Result<Vec<SweepRow>, AnalysisError> {
    if window_lengths.is_empty() {
        return Err(AnalysisError::EmptyInput("no window lengths".into()));
    }
    for &w in window_lengths {
        if !(SWEEP_RANGE_S.0..=SWEEP_RANGE_S.1).contains(&w) {
            return Err(AnalysisError::InvalidWindow(w));
        }
    }
    let mut rows = Vec::new();
    for &w in window_lengths {
        let mut c = cfg.clone();
        c.pipeline.window = WindowConfig {
            tau_bytes: cfg.pipeline.window.tau_bytes,
            ..WindowConfig::with_window(w)
        };
        let data = featurize_corpus(corpus, &c.pipeline.window, &c.pipeline.features)?;
        let report = closed_world_on(&format!("sweep_{w}"), corpus, &data, &c)?;
        for target in TargetClass::ALL {
            for view in View::ALL {
                let r = report.row(target, view, Metric::F1).expect("all cells reported");
                rows.push(SweepRow {
                    window_s: w,
                    target,
                    view,
                    mean_f1: r.mean,
                    ci95_low: r.ci95_low,
                    ci95_high: r.ci95_high,
                    n_windows: data.len(),
                });
            }
        }
    }
    Ok(rows)
}

/// Between-class over within-class variance per feature. Zero within-class
/// variance with distinct class means yields `f64::INFINITY`.
pub fn fisher_score(rows: &[Vec<f64>], y: &[u8]) -> Result<Vec<f64>, AnalysisError> {
    if rows.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(rows.len(), y.len()));
    }
    if let Some(i) = y.iter().position(|&v| v > 1) {
        return Err(AnalysisError::NonBinary(i));
    }
    let n1 = y.iter().filter(|&&v| v == 1).count();
    let n0 = y.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(AnalysisError::SingleClass);
    }
    let d = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(AnalysisError::LengthMismatch(r.len(), d));
    }
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        let col = |class: u8| -> Vec<f64> {
            rows.iter()
                .zip(y)
                .filter(|(_, &c)| c == class)
                .map(|(r, _)| r[j])
                .collect()
        };
        let (c0, c1) = (col(0), col(1));
        let all: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let (mu, mu0, mu1) = (mean(&all), mean(&c0), mean(&c1));
        let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
        let between = n1 as f64 * (mu1 - mu).powi(2) + n0 as f64 * (mu0 - mu).powi(2);
        let within = n1 as f64 * var(&c1, mu1) + n0 as f64 * var(&c0, mu0);
        out.push(if within > 0.0 {
            between / within
        } else if between > 0.0 {
            f64::INFINITY
        } else {
            0.0
        });
    }
    Ok(out)
}

/// Features ranked by Fisher score, best first; ties keep column order.
pub fn fisher_ranking(names: &[String], scores: &[f64]) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64)> = names.iter().cloned().zip(scores.iter().copied()).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked
}

pub const KL_EPS: f64 = 1e-10;

/// `sum p ln(p/q)` after adding `eps` to every bin of both inputs and
/// renormalising each to unit mass.
pub fn kl_divergence_eps(p: &[f64], q: &[f64], eps: f64) -> Result<f64, AnalysisError> {
    if p.len() != q.len() {
        return Err(AnalysisError::BinMismatch(p.len(), q.len()));
    }
    if p.is_empty() {
        return Err(AnalysisError::EmptyInput("empty histogram".into()));
    }
    let smooth = |h: &[f64]| -> Vec<f64> {
        let s: Vec<f64> = h.iter().map(|v| v + eps).collect();
        let total: f64 = s.iter().sum();
        s.into_iter().map(|v| v / total).collect()
    };
    let (ps, qs) = (smooth(p), smooth(q));
    Ok(ps.iter().zip(&qs).map(|(a, b)| a * (a / b).ln()).sum())
}

pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, AnalysisError> {
    kl_divergence_eps(p, q, KL_EPS)
}

/// Normalised histogram over `[lo, hi]` with equal-width bins; values on the
/// upper edge fall into the last bin. A degenerate range puts all mass in bin 0.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    if values.is_empty() || bins == 0 {
        return h;
    }
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let b = if width > 0.0 {
            (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1)
        } else {
            0
        };
        h[b] += 1.0;
    }
    let n = values.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlFeature {
    MeanFrame,
    MeanIat,
    StdIat,
}

impl KlFeature {
    pub const ALL: [KlFeature; 3] = [KlFeature::MeanFrame, KlFeature::MeanIat, KlFeature::StdIat];

    pub fn name(self) -> &'static str {
        match self {
            KlFeature::MeanFrame => "mean_frame",
            KlFeature::MeanIat => "mean_iat",
            KlFeature::StdIat => "std_iat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KlConfig {
    pub bins: usize,
    pub eps: f64,
    /// Traces are cut into slices of this length; each slice yields one
    /// feature sample.
    pub slice_s: f64,
}

impl Default for KlConfig {
    fn default() -> Self {
        KlConfig {
            bins: 30,
            eps: KL_EPS,
            slice_s: 10.0,
        }
    }
}

fn slice_value(packets: &[PacketRecord], kind: KlFeature) -> Option<f64> {
    match kind {
        KlFeature::MeanFrame => {
            (!packets.is_empty()).then(|| mean(&packets.iter().map(|p| p.size_bytes as f64).collect::<Vec<_>>()))
        }
        KlFeature::MeanIat | KlFeature::StdIat => {
            let iats = crate::ingest::inter_arrivals(packets);
            if iats.is_empty() {
                return None;
            }
            Some(if kind == KlFeature::MeanIat {
                mean(&iats)
            } else {
                population_std(&iats)
            })
        }
    }
}

/// One feature sample per `slice_s`-second slice of the trace (slices too
/// sparse to define the feature are skipped).
pub fn trace_feature_samples(trace: &ClientTrace, kind: KlFeature, slice_s: f64) -> Vec<f64> {
    if trace.packets.is_empty() || slice_s <= 0.0 {
        return Vec::new();
    }
    let slice_us = (slice_s * 1e6).round().max(1.0) as u64;
    let t0 = trace.packets[0].timestamp_us;
    let mut out = Vec::new();
    let mut start = 0;
    while start < trace.packets.len() {
        let k = (trace.packets[start].timestamp_us - t0) / slice_us;
        let end_us = t0 + (k + 1) * slice_us;
        let end = start + trace.packets[start..].partition_point(|p| p.timestamp_us < end_us);
        if let Some(v) = slice_value(&trace.packets[start..end], kind) {
            out.push(v);
        }
        start = end;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlStat {
    pub mean: f64,
    /// Population std over per-trace scores.
    pub std: f64,
    pub n_traces: usize,
}

/// Compares each P trace's feature histogram with the pooled Q histogram over
/// the pooled min-max range of both sides.
pub fn per_trace_kl(
    traces_p: &[ClientTrace],
    traces_q: &[ClientTrace],
    kind: KlFeature,
    cfg: &KlConfig,
) -> Result<KlStat, AnalysisError> {
    if traces_p.is_empty() || traces_q.is_empty() {
        return Err(AnalysisError::EmptyInput("per_trace_kl needs traces on both sides".into()));
    }
    if cfg.bins == 0 {
        return Err(AnalysisError::InvalidParam("bins must be positive".into()));
    }
    let p_samples: Vec<Vec<f64>> = traces_p
        .iter()
        .map(|t| trace_feature_samples(t, kind, cfg.slice_s))
        .collect();
    let q_pooled: Vec<f64> = traces_q
        .iter()
        .flat_map(|t| trace_feature_samples(t, kind, cfg.slice_s))
        .collect();
    per_sample_kl(&p_samples, &q_pooled, cfg)
}

/// `per_trace_kl` on pre-extracted samples: one vector per P trace and the
/// pooled Q samples.
pub fn per_sample_kl(p_samples: &[Vec<f64>], q_pooled: &[f64], cfg: &KlConfig) -> Result<KlStat, AnalysisError> {
    if q_pooled.is_empty() || p_samples.iter().all(Vec::is_empty) {
        return Err(AnalysisError::EmptyInput("no feature samples".into()));
    }
    let (lo, hi) = p_samples
        .iter()
        .flatten()
        .chain(q_pooled)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let q_hist = histogram(q_pooled, lo, hi, cfg.bins);
    let scores = p_samples
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| kl_divergence_eps(&histogram(s, lo, hi, cfg.bins), &q_hist, cfg.eps))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(KlStat {
        mean: mean(&scores),
        std: population_std(&scores),
        n_traces: scores.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlRow {
    pub client: String,
    pub feature: KlFeature,
    /// Family of the per-trace side; the other family is pooled.
    pub reference: ArchFamily,
    pub stat: KlStat,
    pub bins: usize,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlReport {
    pub config: KlConfig,
    pub rows: Vec<KlRow>,
}

impl KlReport {
    pub fn get(&self, client: &str, feature: KlFeature, reference: ArchFamily) -> Option<&KlStat> {
        self.rows
            .iter()
            .find(|r| r.client == client && r.feature == feature && r.reference == reference)
            .map(|r| &r.stat)
    }
}

/// Client grouping key: the `client` metadata entry, else the client MAC.
pub fn client_group(trace: &ClientTrace) -> String {
    trace
        .meta
        .get("client")
        .cloned()
        .unwrap_or_else(|| trace.client_id.to_string())
}

/// CNN-vs-RNN KL per client, feature and reference direction.
pub fn kl_report(corpus: &[ClientTrace], cfg: &KlConfig) -> Result<KlReport, AnalysisError> {
    let mut groups: BTreeMap<String, (Vec<ClientTrace>, Vec<ClientTrace>)> = BTreeMap::new();
    for t in corpus {
        match t.label.as_ref().map(|l| l.family) {
            Some(ArchFamily::Cnn) => groups.entry(client_group(t)).or_default().0.push(t.clone()),
            Some(ArchFamily::Rnn) => groups.entry(client_group(t)).or_default().1.push(t.clone()),
            _ => {}
        }
    }
    let mut rows = Vec::new();
    for (client, (cnn, rnn)) in groups {
        if cnn.is_empty() || rnn.is_empty() {
            continue;
        }
        for feature in KlFeature::ALL {
            for (reference, p, q) in [(ArchFamily::Cnn, &cnn, &rnn), (ArchFamily::Rnn, &rnn, &cnn)] {
                rows.push(KlRow {
                    client: client.clone(),
                    feature,
                    reference,
                    stat: per_trace_kl(p, q, feature, cfg)?,
                    bins: cfg.bins,
                    eps: cfg.eps,
                });
            }
        }
    }
    if rows.is_empty() {
        return Err(AnalysisError::EmptyInput("no client has both CNN and RNN traces".into()));
    }
    Ok(KlReport {
        config: cfg.clone(),
        rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_metrics_csv<W: Write>(report: &MetricsReport, out: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario", "class", "view", "metric", "mean", "std_runs", "std_samples", "ci95_low", "ci95_high",
        "run_scores",
    ])?;
    for r in &report.rows {
        let runs: Vec<String> = r.run_scores.iter().map(|v| format!("{v:.6}")).collect();
        w.write_record([
            r.scenario.clone(),
            r.target.to_string(),
            r.view.name().to_string(),
            r.metric.name().to_string(),
            format!("{:.6}", r.mean),
            opt(r.std_runs),
            opt(r.std_samples),
            format!("{:.6}", r.ci95_low),
            format!("{:.6}", r.ci95_high),
            runs.join(";"),
        ])?;
    }
    w.flush().map_err(|e| AnalysisError::Csv(e.to_string()))
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["window_s", "class", "view", "mean_f1", "ci95_low", "ci95_high", "n_windows"])?;
    for r in rows {
        w.write_record([
            format!("{}", r.window_s),
            r.target.to_string(),
            r.view.name().to_string(),
            format!("{:.6}", r.mean_f1),
            format!("{:.6}", r.ci95_low),
            format!("{:.6}", r.ci95_high),
            r.n_windows.to_string(),
        ])?;
    }
    w.flush().map_err(|e| AnalysisError::Csv(e.to_string()))
}

pub fn write_kl_csv<W: Write>(report: &KlReport, out: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["client", "feature", "reference", "mean", "std", "n_traces", "bins", "eps"])?;
    for r in &report.rows {
        w.write_record([
            r.client.clone(),
            r.feature.name().to_string(),
            r.reference.to_string(),
            format!("{:.6}", r.stat.mean),
            format!("{:.6}", r.stat.std),
            r.stat.n_traces.to_string(),
            r.bins.to_string(),
            format!("{:e}", r.eps),
        ])?;
    }
    w.flush().map_err(|e| AnalysisError::Csv(e.to_string()))
}

pub fn write_fisher_csv<W: Write>(ranked: &[(String, f64)], out: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "feature", "fisher_score"])?;
    for (i, (name, s)) in ranked.iter().enumerate() {
        let score = if s.is_infinite() {
            "perfectly_separating".to_string()
        } else {
            format!("{s:.6}")
        };
        w.write_record([(i + 1).to_string(), name.clone(), score])?;
    }
    w.flush().map_err(|e| AnalysisError::Csv(e.to_string()))
}
