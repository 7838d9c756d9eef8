//! Experiment configuration: a TOML file, then command-line overrides.
//!
//! Every table is optional; missing keys take the library defaults.
//!
//! ```toml
//! [paths]
//! corpus_dir = "corpus"
//! output_dir = "out"
//!
//! [pipeline]
//! fusion_kind = "meta_xgb"
//! seed = 7
//!
//! [pipeline.window]
//! window_s = 300.0
//! stride_s = 300.0
//! tau_bytes = 66
//!
//! [eval]
//! seeds = [1, 2, 3, 4, 5]
//! holdout_models = ["mobilenetv2", "mlp"]
//!
//! [scenario]
//! traces_per_template = 3
//! seed = 2024
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use flare_core::analysis::{EvalConfig, KlConfig};
use flare_core::flsim::{default_model_profiles, default_open_world_holdout, sha256_hex, LinkProfile, ScenarioConfig, SyncMode};
use flare_core::fusion::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub pipeline: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub seeds: Vec<u64>,
    pub test_frac: f64,
    pub bootstrap_groups: usize,
    pub strict_runs: bool,
    pub holdout_models: Vec<String>,
    pub sweep_lengths: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        EvalSection {
            seeds: e.seeds,
            test_frac: e.test_frac,
            bootstrap_groups: e.bootstrap_groups,
            strict_runs: e.strict_runs,
            holdout_models: default_open_world_holdout(),
            sweep_lengths: vec![60.0, 120.0, 180.0, 240.0, 300.0, 420.0, 600.0, 900.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    /// Model profiles (by name, from the scenario) to attack.
    pub models: Vec<String>,
    pub sync_modes: Vec<SyncMode>,
    /// Indices of attacked clients within each federation.
    pub attacked: Vec<usize>,
    pub denial_frac: f64,
    /// `always`, `matched`, or a model name whose transfer the trigger
    /// window is tuned for.
    pub schedules: Vec<String>,
    pub seeds: Vec<u64>,
    pub link: LinkProfile,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            models: default_model_profiles().into_iter().map(|m| m.name).collect(),
            sync_modes: vec![SyncMode::Sync, SyncMode::Async],
            attacked: vec![0, 1, 2],
            denial_frac: 2.0 / 3.0,
            schedules: vec!["always".into(), "matched".into()],
            seeds: vec![1, 2, 3, 4, 5],
            link: LinkProfile::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: Paths,
    pub pipeline: PipelineConfig,
    pub eval: EvalSection,
    pub kl: KlConfig,
    pub scenario: ScenarioConfig,
    pub attack: AttackSection,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(ExperimentConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            pipeline: self.pipeline.clone(),
            seeds: self.eval.seeds.clone(),
            test_frac: self.eval.test_frac,
            bootstrap_groups: self.eval.bootstrap_groups,
            strict_runs: self.eval.strict_runs,
        }
    }

    /// Compact JSON of the resolved config; the provenance line of reports.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.pipeline
            .window
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.pipeline.folds < 2 {
            return Err(CliError::Config("pipeline.folds must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.pipeline.threshold) {
            return Err(CliError::Config("pipeline.threshold must be in [0, 1]".into()));
        }
        if self.eval.seeds.is_empty() {
            return Err(CliError::Config("eval.seeds must not be empty".into()));
        }
        Ok(())
    }
}
