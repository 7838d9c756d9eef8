//! The `flare` command: simulation, training, evaluation and attack
//! experiments over FL traffic traces.
//!
//! Each subcommand resolves an [`ExperimentConfig`] (TOML file, then flag
//! overrides), runs one library operation and writes its report files. CSV
//! reports start with a `# config: {json}` line holding the resolved config;
//! nothing time-dependent is written, so identical configs give
//! byte-identical files.

pub mod config;

mod commands;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use flare_core::flsim::SyncMode;
use flare_core::fusion::FusionKind;
use serde_json::json;
use thiserror::Error;

pub use commands::{load_corpus, run};
pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] flare_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
}

macro_rules! via_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

via_core!(
    flare_core::ingest::IngestError,
    flare_core::segmentation::SegmentError,
    flare_core::features::FeatureError,
    flare_core::fusion::FusionError,
    flare_core::analysis::AnalysisError,
    flare_core::flsim::SimError
);

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Io { .. } => "io",
            CliError::Config(_) => "config",
            CliError::Usage(_) => "usage",
        }
    }

    /// One-line JSON error record for standard error.
    pub fn record(&self, command: &str) -> String {
        json!({ "error": self.kind(), "command": command, "message": self.to_string() }).to_string()
    }
}

#[derive(Debug, Parser)]
#[command(name = "flare", version, about = "Fingerprint FL model families from encrypted-traffic metadata")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides applied on top of the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Corpus directory (simulator output or a folder of trace files).
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Pipeline artifact path.
    #[arg(long, global = true)]
    pub pipeline: Option<PathBuf>,
    /// Seed for training and the simulator.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Evaluation run seeds, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    pub window_s: Option<f64>,
    /// Defaults to the window length when only `--window-s` is given.
    #[arg(long, global = true)]
    pub stride_s: Option<f64>,
    #[arg(long, global = true)]
    pub tau_bytes: Option<u32>,
    #[arg(long, global = true)]
    pub fusion: Option<FusionKind>,
    #[arg(long, global = true)]
    pub trees: Option<usize>,
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Grid-search hyperparameters during training.
    #[arg(long, global = true)]
    pub tune: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic corpus and its manifest.
    Simulate {
        #[arg(long)]
        traces_per_template: Option<usize>,
        #[arg(long)]
        duration_s: Option<f64>,
    },
    /// Extract one client's trace from a capture CSV.
    Ingest {
        #[arg(long)]
        capture: PathBuf,
        #[arg(long)]
        ap: String,
        #[arg(long)]
        client: String,
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        dataset: Option<String>,
        /// Output file name stem; defaults to the client address.
        #[arg(long)]
        name: Option<String>,
    },
    /// List the observation windows of every trace.
    Segment,
    /// Write both feature views of every active window.
    Featurize,
    /// Train the CNN and RNN heads.
    Train,
    /// Fingerprint the windows of a trace file or corpus.
    Predict {
        /// Trace file or corpus directory.
        #[arg(long)]
        input: PathBuf,
    },
    /// Closed-world evaluation.
    EvalClosed,
    /// Open-world evaluation with held-out models.
    EvalOpen {
        #[arg(long, value_delimiter = ',')]
        holdout: Option<Vec<String>>,
    },
    /// Evaluation across observation-window lengths.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        lengths: Option<Vec<f64>>,
    },
    /// KL divergence and Fisher score separability reports.
    Analyze,
    /// Throughput-denial attack emulation.
    AttackSim {
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        #[arg(long)]
        denial_frac: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        sync_modes: Option<Vec<SyncMode>>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Ingest { .. } => "ingest",
            Command::Segment => "segment",
            Command::Featurize => "featurize",
            Command::Train => "train",
            Command::Predict { .. } => "predict",
            Command::EvalClosed => "eval-closed",
            Command::EvalOpen { .. } => "eval-open",
            Command::Sweep { .. } => "sweep",
            Command::Analyze => "analyze",
            Command::AttackSim { .. } => "attack-sim",
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    run(&cli)
}
