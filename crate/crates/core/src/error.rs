use thiserror::Error;

use seqmot_tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-consecutive frame: expected t={expected}, got t={got}")]
    NonConsecutiveFrame { expected: i64, got: i64 },

    #[error("tracklet has no states")]
    EmptyTracklet,

    #[error("degenerate box footprint (area {0})")]
    DegenerateBox(f64),

    #[error("non-finite value: {0}")]
    NonFinite(&'static str),

    #[error("detection at t={t} carries no velocity estimate")]
    MissingVelocity { t: i64 },

    #[error("scene {0} has no ground truth")]
    NoGroundTruth(String),

    #[error("undefined metric: {0}")]
    Undefined(&'static str),

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
