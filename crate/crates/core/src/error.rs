use thiserror::Error;

/// Errors produced by the library operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid index set: {0}")]
    InvalidIndexSet(String),

    #[error("groups do not partition [0, {dim}): {reason}")]
    NotAPartition { dim: usize, reason: String },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate regime: {0}")]
    Degenerate(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("loss evaluation failed: {0}")]
    LossEvaluation(String),

    #[error("training diverged at epoch {epoch} (loss {loss:e})")]
    Divergence {
        epoch: usize,
        loss: f64,
        trajectory: Vec<f64>,
    },

    #[error("io error: {0}")]
    Io(String),

    #[error("malformed input: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
