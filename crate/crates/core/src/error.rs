use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::features::FeatureError;
use crate::flsim::SimError;
use crate::fusion::FusionError;
use crate::ingest::IngestError;
use crate::learners::LearnError;
use crate::segmentation::SegmentError;

/// Any error raised by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Ingest(e) => e.kind(),
            Error::Segment(_) => "segment",
            Error::Feature(_) => "feature",
            Error::Learn(_) => "learn",
            Error::Fusion(e) => e.kind(),
            Error::Analysis(e) => e.kind(),
            Error::Sim(SimError::InvalidSpec(_)) => "invalid_spec",
            Error::Sim(SimError::InvalidThroughput(_)) => "invalid_throughput",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
