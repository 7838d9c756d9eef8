//! The two one-vs-rest fingerprinting pipelines (CNN vs. rest, RNN vs. rest).
//!
//! For each target class a random forest is trained on the flow view and
//! another on the packet view. Their probabilities form a two-value
//! meta-feature `[p_flow, p_pkt]` which a fusion classifier (logistic
//! regression or gradient-boosted trees) maps to the final decision. The
//! fusion classifier is trained on out-of-fold base probabilities so it never
//! sees a base model's predictions on that model's own training rows.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{flow_feature_names, flow_features, packet_features, FeatureConfig, FeatureError};
use crate::ingest::ClientTrace;
use crate::learners::{
    fit_forest, fold_complement, grid_search, stratified_kfold, BinaryModel, Dataset, ForestParams, GbtParams,
    LearnError, LogisticParams, ModelSpec, ProbabilityModel, RandomForest,
};
use crate::par;
use crate::segmentation::{filter_active, segment, trace_is_active, SegmentError, TrafficWindow, WindowConfig};

pub const PIPELINE_FORMAT: &str = "flare-pipeline";
pub const PIPELINE_VERSION: u32 = 1;

/// Probabilities are clipped to `[CLIP, 1 - CLIP]` inside the fusion loss.
const CLIP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("window {0} has no label")]
    UnlabeledWindow(String),
    #[error("insufficient data for target {target}: {reason}")]
    InsufficientData { target: TargetClass, reason: String },
    #[error("dimension mismatch: model expects {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("window {0} has no packet above the activity threshold")]
    FilteredWindow(String),
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("model `{model}` is registered as {registered}, not {given}")]
    FamilyMismatch {
        model: String,
        registered: ArchFamily,
        given: ArchFamily,
    },
    #[error("pipeline artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

impl FusionError {
    pub fn kind(&self) -> &'static str {
        match self {
            FusionError::UnlabeledWindow(_) => "unlabeled_window",
            FusionError::InsufficientData { .. } => "insufficient_data",
            FusionError::DimensionMismatch { .. } => "dimension_mismatch",
            FusionError::FilteredWindow(_) => "filtered_window",
            FusionError::LengthMismatch(..) => "length_mismatch",
            FusionError::FamilyMismatch { .. } => "family_mismatch",
            FusionError::Artifact(_) => "artifact",
            FusionError::Learn(_) => "learn",
            FusionError::Segment(_) => "segment",
            FusionError::Feature(_) => "feature",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchFamily {
    Cnn,
    Rnn,
    Other,
}

impl fmt::Display for ArchFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchFamily::Cnn => "cnn",
            ArchFamily::Rnn => "rnn",
            ArchFamily::Other => "other",
        })
    }
}

impl FromStr for ArchFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Ok(ArchFamily::Cnn),
            "rnn" => Ok(ArchFamily::Rnn),
            "other" | "rest" => Ok(ArchFamily::Other),
            _ => Err(format!("unknown architecture family `{s}`")),
        }
    }
}

/// Known model names and their families. Names outside the registry are
/// accepted with any family.
pub const MODEL_REGISTRY: &[(&str, ArchFamily)] = &[
    ("custom_cnn", ArchFamily::Cnn),
    ("resnet18", ArchFamily::Cnn),
    ("mobilenetv2", ArchFamily::Cnn),
    ("densenet121", ArchFamily::Cnn),
    ("vanilla_rnn", ArchFamily::Rnn),
    ("lstm", ArchFamily::Rnn),
    ("bilstm", ArchFamily::Rnn),
    ("gru", ArchFamily::Rnn),
    ("lstm_gru", ArchFamily::Rnn),
    ("mlp", ArchFamily::Other),
    ("autoencoder", ArchFamily::Other),
    ("transformer", ArchFamily::Other),
];

pub fn registered_family(model: &str) -> Option<ArchFamily> {
    MODEL_REGISTRY
        .iter()
        .find(|(m, _)| *m == model)
        .map(|&(_, f)| f)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchLabel {
    pub family: ArchFamily,
    pub model_name: String,
    pub dataset_name: String,
}

impl ArchLabel {
    pub fn new(
        family: ArchFamily,
        model_name: impl Into<String>,
        dataset_name: impl Into<String>,
    ) -> Result<Self, FusionError> {
        let model_name = model_name.into();
        if let Some(registered) = registered_family(&model_name) {
            if registered != family {
                return Err(FusionError::FamilyMismatch {
                    model: model_name,
                    registered,
                    given: family,
                });
            }
        }
        Ok(ArchLabel {
            family,
            model_name,
            dataset_name: dataset_name.into(),
        })
    }
}

/// Target of one one-vs-rest pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetClass {
    Cnn,
    Rnn,
}

impl TargetClass {
    pub const ALL: [TargetClass; 2] = [TargetClass::Cnn, TargetClass::Rnn];

    pub fn family(self) -> ArchFamily {
        match self {
            TargetClass::Cnn => ArchFamily::Cnn,
            TargetClass::Rnn => ArchFamily::Rnn,
        }
    }

    pub fn matches(self, family: ArchFamily) -> bool {
        self.family() == family
    }

    fn stream(self) -> u64 {
        match self {
            TargetClass::Cnn => 1,
            TargetClass::Rnn => 2,
        }
    }
}

impl fmt::Display for TargetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.family().fmt(f)
    }
}

/// `[p_flow, p_pkt]` for one window and target class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaFeature {
    pub p_flow: f64,
    pub p_pkt: f64,
    pub target: TargetClass,
}

impl MetaFeature {
    pub fn as_row(&self) -> Vec<f64> {
        vec![self.p_flow, self.p_pkt]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    #[default]
    MetaLr,
    MetaXgb,
}

impl FromStr for FusionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "meta-lr" | "lr" | "metalr" => Ok(FusionKind::MetaLr),
            "meta-xgb" | "xgb" | "metaxgb" => Ok(FusionKind::MetaXgb),
            _ => Err(format!("unknown fusion kind `{s}` (expected meta-lr or meta-xgb)")),
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionKind::MetaLr => "meta-lr",
            FusionKind::MetaXgb => "meta-xgb",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub window: WindowConfig,
    pub features: FeatureConfig,
    pub forest: ForestParams,
    pub fusion_kind: FusionKind,
    pub logistic: LogisticParams,
    pub gbt: GbtParams,
    /// Folds for out-of-fold stacking (and grid search when tuning).
    pub folds: usize,
    pub threshold: f64,
    /// Grid-search base and fusion hyperparameters before the final fit.
    pub tune: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window: WindowConfig::default(),
            features: FeatureConfig::default(),
            forest: ForestParams::default(),
            fusion_kind: FusionKind::MetaLr,
            logistic: LogisticParams::default(),
            gbt: GbtParams::default(),
            folds: 5,
            threshold: 0.5,
            tune: false,
            seed: 7,
        }
    }
}

impl PipelineConfig {
    fn fusion_spec(&self) -> ModelSpec {
        match self.fusion_kind {
            FusionKind::MetaLr => ModelSpec::Logistic(self.logistic.clone()),
            FusionKind::MetaXgb => ModelSpec::Gbt(self.gbt.clone()),
        }
    }

    fn fusion_grid(&self) -> Vec<ModelSpec> {
        match self.fusion_kind {
            FusionKind::MetaLr => ModelSpec::default_logistic_grid(&self.logistic),
            FusionKind::MetaXgb => ModelSpec::default_gbt_grid(&self.gbt),
        }
    }
}

/// Featurised windows of a labelled corpus, one row per active window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledFeatures {
    pub window_ids: Vec<String>,
    pub trace_ids: Vec<String>,
    pub labels: Vec<Option<ArchLabel>>,
    pub flow: Vec<Vec<f64>>,
    pub packet: Vec<Vec<f64>>,
}

impl LabeledFeatures {
    pub fn len(&self) -> usize {
        self.flow.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flow.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledFeatures {
        LabeledFeatures {
            window_ids: idx.iter().map(|&i| self.window_ids[i].clone()).collect(),
            trace_ids: idx.iter().map(|&i| self.trace_ids[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
            flow: idx.iter().map(|&i| self.flow[i].clone()).collect(),
            packet: idx.iter().map(|&i| self.packet[i].clone()).collect(),
        }
    }

    pub fn families(&self) -> Result<Vec<ArchFamily>, FusionError> {
        self.labels
            .iter()
            .zip(&self.window_ids)
            .map(|(l, id)| {
                l.as_ref()
                    .map(|l| l.family)
                    .ok_or_else(|| FusionError::UnlabeledWindow(id.clone()))
            })
            .collect()
    }

    /// One-vs-rest labels for `target`.
    pub fn binary_labels(&self, target: TargetClass) -> Result<Vec<u8>, FusionError> {
        Ok(self
            .families()?
            .into_iter()
            .map(|f| u8::from(target.matches(f)))
            .collect())
    }

    fn append(&mut self, other: LabeledFeatures) {
        self.window_ids.extend(other.window_ids);
        self.trace_ids.extend(other.trace_ids);
        self.labels.extend(other.labels);
        self.flow.extend(other.flow);
        self.packet.extend(other.packet);
    }
}

/// Both feature views of one window.
pub fn featurize_window(
    window: &TrafficWindow,
    cfg: &FeatureConfig,
) -> Result<(Vec<f64>, Vec<f64>), FeatureError> {
    Ok((flow_features(window)?.to_vec(), packet_features(window, cfg)?.to_vec()))
}

/// Segments every active trace, drops idle windows and featurises the rest.
pub fn featurize_corpus(
    traces: &[ClientTrace],
    window: &WindowConfig,
    features: &FeatureConfig,
) -> Result<LabeledFeatures, FusionError> {
    window.validate()?;
    let parts = par::map_slice(traces, |trace| -> Result<LabeledFeatures, FusionError> {
        let mut out = LabeledFeatures::default();
        if trace.packets.is_empty() || !trace_is_active(trace, window.tau_bytes) {
            return Ok(out);
        }
        for w in filter_active(segment(trace, window)?, window.tau_bytes) {
            let (f, p) = featurize_window(&w, features)?;
            out.window_ids.push(w.window_id());
            out.trace_ids.push(w.origin.trace_id.clone());
            out.labels.push(w.label.clone());
            out.flow.push(f);
            out.packet.push(p);
        }
        Ok(out)
    });
    let mut all = LabeledFeatures::default();
    for part in parts {
        all.append(part?);
    }
    Ok(all)
}

/// One-vs-rest labels of labelled windows.
pub fn binarize_labels(windows: &[TrafficWindow], target: TargetClass) -> Result<Vec<u8>, FusionError> {
    windows
        .iter()
        .map(|w| {
            w.label
                .as_ref()
                .map(|l| u8::from(target.matches(l.family)))
                .ok_or_else(|| FusionError::UnlabeledWindow(w.window_id()))
        })
        .collect()
}

fn check_dim(model: &dyn ProbabilityModel, row: &[f64]) -> Result<(), FusionError> {
    match model.n_features() {
        Some(expected) if expected != row.len() => Err(FusionError::DimensionMismatch {
            expected,
            got: row.len(),
        }),
        _ => Ok(()),
    }
}

/// `[h_f(x_flow), h_p(x_pkt)]` for each window, in input order.
pub fn build_meta_features(
    h_flow: &dyn ProbabilityModel,
    h_pkt: &dyn ProbabilityModel,
    flow_rows: &[Vec<f64>],
    packet_rows: &[Vec<f64>],
    target: TargetClass,
) -> Result<Vec<MetaFeature>, FusionError> {
    if flow_rows.len() != packet_rows.len() {
        return Err(FusionError::LengthMismatch(flow_rows.len(), packet_rows.len()));
    }
    flow_rows
        .iter()
        .zip(packet_rows)
        .map(|(f, p)| {
            check_dim(h_flow, f)?;
            check_dim(h_pkt, p)?;
            Ok(MetaFeature {
                p_flow: h_flow.predict_proba(f),
                p_pkt: h_pkt.predict_proba(p),
                target,
            })
        })
        .collect()
}

/// Mean binary cross-entropy with probabilities clipped to `[1e-12, 1-1e-12]`.
pub fn fusion_loss(predictions: &[f64], labels: &[u8]) -> Result<f64, FusionError> {
    if predictions.len() != labels.len() {
        return Err(FusionError::LengthMismatch(predictions.len(), labels.len()));
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(CLIP, 1.0 - CLIP);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Trained models for one target class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassHead {
    pub target: TargetClass,
    pub flow_model: RandomForest,
    pub packet_model: RandomForest,
    pub fusion: BinaryModel,
}

impl ClassHead {
    pub fn meta(&self, flow: &[f64], packet: &[f64]) -> Result<MetaFeature, FusionError> {
        check_dim(&self.flow_model, flow)?;
        check_dim(&self.packet_model, packet)?;
        Ok(MetaFeature {
            p_flow: self.flow_model.predict_proba(flow),
            p_pkt: self.packet_model.predict_proba(packet),
            target: self.target,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlarePipeline {
    pub format: String,
    pub version: u32,
    pub config: PipelineConfig,
    pub heads: Vec<ClassHead>,
}

impl FlarePipeline {
    pub fn head(&self, target: TargetClass) -> &ClassHead {
        self.heads
            .iter()
            .find(|h| h.target == target)
            .expect("pipelines hold a head per target class")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pipeline serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, FusionError> {
        let p: FlarePipeline =
            serde_json::from_str(text).map_err(|e| FusionError::Artifact(e.to_string()))?;
        if p.format != PIPELINE_FORMAT {
            return Err(FusionError::Artifact(format!("unexpected format `{}`", p.format)));
        }
        if p.version != PIPELINE_VERSION {
            return Err(FusionError::Artifact(format!(
                "unsupported version {} (expected {PIPELINE_VERSION})",
                p.version
            )));
        }
        for t in TargetClass::ALL {
            if !p.heads.iter().any(|h| h.target == t) {
                return Err(FusionError::Artifact(format!("missing head for {t}")));
            }
        }
        for h in &p.heads {
            let kind_ok = matches!(
                (&h.fusion, p.config.fusion_kind),
                (BinaryModel::Logistic(_), FusionKind::MetaLr) | (BinaryModel::Gbt(_), FusionKind::MetaXgb)
            );
            if !kind_ok {
                return Err(FusionError::Artifact(format!(
                    "fusion model for {} does not match fusion kind {}",
                    h.target, p.config.fusion_kind
                )));
            }
        }
        Ok(p)
    }
}

/// Cross-validated scores gathered while training one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCvReport {
    pub target: TargetClass,
    pub positives: usize,
    pub negatives: usize,
    pub oof_flow_f1: f64,
    pub oof_packet_f1: f64,
    pub oof_fusion_f1: f64,
    pub oof_fusion_loss: f64,
    pub flow_params: ForestParams,
    pub packet_params: ForestParams,
    pub fusion_spec: ModelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub n_windows: usize,
    pub classes: Vec<ClassCvReport>,
}

/// Out-of-fold base predictions for one head, kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct OutOfFold {
    pub target: TargetClass,
    pub meta: Vec<MetaFeature>,
    pub fused: Vec<f64>,
}

fn f1_at(probs: &[f64], y: &[u8], threshold: f64) -> f64 {
    let pred: Vec<u8> = probs.iter().map(|&p| u8::from(p >= threshold)).collect();
    crate::analysis::precision_recall_f1(y, &pred)
        .map(|m| m.f1)
        .unwrap_or(0.0)
}

fn forest_params(base: &ForestParams, seed: u64) -> ForestParams {
    ForestParams {
        seed,
        ..base.clone()
    }
}

fn tuned_forest(ds: &Dataset, cfg: &PipelineConfig, seed: u64) -> Result<ForestParams, FusionError> {
    let base = forest_params(&cfg.forest, seed);
    if !cfg.tune {
        return Ok(base);
    }
    let grid = ModelSpec::default_forest_grid(&base);
    let res = grid_search(ds, &grid, cfg.folds, seed)?;
    match res.best() {
        ModelSpec::Forest(p) => Ok(p.clone()),
        _ => unreachable!("forest grid holds forests"),
    }
}

fn train_head(
    data: &LabeledFeatures,
    target: TargetClass,
    cfg: &PipelineConfig,
) -> Result<(ClassHead, ClassCvReport, OutOfFold), FusionError> {
    let y = data.binary_labels(target)?;
    let positives = y.iter().filter(|&&v| v == 1).count();
    let negatives = y.len() - positives;
    if positives < cfg.folds || negatives < cfg.folds {
        return Err(FusionError::InsufficientData {
            target,
            reason: format!(
                "{positives} positive and {negatives} negative windows, need at least {} of each",
                cfg.folds
            ),
        });
    }
    let flow_ds = Dataset::new(&data.flow, y.clone(), flow_feature_names())?;
    let pkt_ds = Dataset::new(&data.packet, y.clone(), cfg.features.packet_feature_names())?;

    let head_seed = par::derive_seed(cfg.seed, target.stream());
    let flow_params = tuned_forest(&flow_ds, cfg, par::derive_seed(head_seed, 1))?;
    let pkt_params = tuned_forest(&pkt_ds, cfg, par::derive_seed(head_seed, 2))?;

    // out-of-fold base probabilities
    let folds = stratified_kfold(&y, cfg.folds, par::derive_seed(head_seed, 3))?;
    let mut meta = vec![
        MetaFeature {
            p_flow: 0.0,
            p_pkt: 0.0,
            target
        };
        y.len()
    ];
    for (f, test) in folds.iter().enumerate() {
        let train = fold_complement(&folds, f);
        let fseed = par::derive_seed(head_seed, 100 + f as u64);
        let hf = fit_forest(
            &flow_ds.subset(&train),
            &forest_params(&flow_params, par::derive_seed(fseed, 1)),
        )?;
        let hp = fit_forest(
            &pkt_ds.subset(&train),
            &forest_params(&pkt_params, par::derive_seed(fseed, 2)),
        )?;
        for &i in test {
            meta[i] = MetaFeature {
                p_flow: hf.predict_proba(&data.flow[i]),
                p_pkt: hp.predict_proba(&data.packet[i]),
                target,
            };
        }
    }
    let meta_rows: Vec<Vec<f64>> = meta.iter().map(MetaFeature::as_row).collect();
    let meta_ds = Dataset::new(&meta_rows, y.clone(), vec!["p_flow".into(), "p_pkt".into()])?;

    let fusion_spec = if cfg.tune {
        grid_search(&meta_ds, &cfg.fusion_grid(), cfg.folds, par::derive_seed(head_seed, 4))?
            .best()
            .clone()
    } else {
        cfg.fusion_spec()
    };

    // cross-validated fusion score on the out-of-fold meta-features
    let mut fused = vec![0.0; y.len()];
    for (f, test) in folds.iter().enumerate() {
        let train = fold_complement(&folds, f);
        let g = fusion_spec.fit(&meta_ds.subset(&train))?;
        for &i in test {
            fused[i] = g.predict_proba(&meta_rows[i]);
        }
    }

    let p_flow: Vec<f64> = meta.iter().map(|m| m.p_flow).collect();
    let p_pkt: Vec<f64> = meta.iter().map(|m| m.p_pkt).collect();
    let report = ClassCvReport {
        target,
        positives,
        negatives,
        oof_flow_f1: f1_at(&p_flow, &y, cfg.threshold),
        oof_packet_f1: f1_at(&p_pkt, &y, cfg.threshold),
        oof_fusion_f1: f1_at(&fused, &y, cfg.threshold),
        oof_fusion_loss: fusion_loss(&fused, &y)?,
        flow_params: flow_params.clone(),
        packet_params: pkt_params.clone(),
        fusion_spec: fusion_spec.clone(),
    };

    let head = ClassHead {
        target,
        flow_model: fit_forest(&flow_ds, &flow_params)?,
        packet_model: fit_forest(&pkt_ds, &pkt_params)?,
        fusion: fusion_spec.fit(&meta_ds)?,
    };
    Ok((head, report, OutOfFold { target, meta, fused }))
}

/// Trains both heads on pre-computed window features.
pub fn train_on_features(
    data: &LabeledFeatures,
    cfg: &PipelineConfig,
) -> Result<(FlarePipeline, TrainReport, Vec<OutOfFold>), FusionError> {
    let families = data.families()?;
    let mut distinct = families.clone();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < 2 {
        let target = if distinct.first() == Some(&ArchFamily::Cnn) {
            TargetClass::Rnn
        } else {
            TargetClass::Cnn
        };
        return Err(FusionError::InsufficientData {
            target,
            reason: "corpus needs windows from at least two families".into(),
        });
    }
    let mut heads = Vec::new();
    let mut classes = Vec::new();
    let mut oof = Vec::new();
    for target in TargetClass::ALL {
        let (h, r, o) = train_head(data, target, cfg)?;
        heads.push(h);
        classes.push(r);
        oof.push(o);
    }
    Ok((
        FlarePipeline {
            format: PIPELINE_FORMAT.to_string(),
            version: PIPELINE_VERSION,
            config: cfg.clone(),
            heads,
        },
        TrainReport {
            n_windows: data.len(),
            classes,
        },
        oof,
    ))
}

/// End-to-end training on labelled traces.
pub fn train_flare(
    corpus: &[ClientTrace],
    cfg: &PipelineConfig,
) -> Result<(FlarePipeline, TrainReport), FusionError> {
    let data = featurize_corpus(corpus, &cfg.window, &cfg.features)?;
    let (p, r, _) = train_on_features(&data, cfg)?;
    Ok((p, r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Cnn,
    Rnn,
    Unknown,
    Conflict,
}

impl Verdict {
    pub fn from_decisions(cnn: bool, rnn: bool) -> Verdict {
        match (cnn, rnn) {
            (true, false) => Verdict::Cnn,
            (false, true) => Verdict::Rnn,
            (false, false) => Verdict::Unknown,
            (true, true) => Verdict::Conflict,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDecision {
    pub target: TargetClass,
    pub p_flow: f64,
    pub p_pkt: f64,
    pub p_fused: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub classes: Vec<ClassDecision>,
    pub verdict: Verdict,
}

impl Prediction {
    pub fn class(&self, target: TargetClass) -> &ClassDecision {
        self.classes
            .iter()
            .find(|c| c.target == target)
            .expect("predictions cover both targets")
    }
}

/// Applies both heads to already-featurised views of one window.
pub fn predict_features(
    pipeline: &FlarePipeline,
    flow: &[f64],
    packet: &[f64],
) -> Result<Prediction, FusionError> {
    let mut classes = Vec::with_capacity(2);
    for target in TargetClass::ALL {
        let head = pipeline.head(target);
        let m = head.meta(flow, packet)?;
        let p_fused = head.fusion.predict_proba(&m.as_row());
        classes.push(ClassDecision {
            target,
            p_flow: m.p_flow,
            p_pkt: m.p_pkt,
            p_fused,
            positive: p_fused >= pipeline.config.threshold,
        });
    }
    let verdict = Verdict::from_decisions(classes[0].positive, classes[1].positive);
    Ok(Prediction { classes, verdict })
}

/// Fingerprints one window. Windows without a packet above τ are refused.
pub fn predict(pipeline: &FlarePipeline, window: &TrafficWindow) -> Result<Prediction, FusionError> {
    if !window.is_active(pipeline.config.window.tau_bytes) {
        return Err(FusionError::FilteredWindow(window.window_id()));
    }
    let (flow, packet) = featurize_window(window, &pipeline.config.features)?;
    predict_features(pipeline, &flow, &packet)
}
