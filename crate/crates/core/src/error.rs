use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range for {what} of length {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {what} at ({row}, {col})")]
    NonFinite {
        what: &'static str,
        row: usize,
        col: usize,
    },

    #[error("negative entry in {what} at ({row}, {col})")]
    NegativeEntry {
        what: &'static str,
        row: usize,
        col: usize,
    },

    #[error("invalid matching: {0}")]
    InvalidMatching(String),

    #[error("invalid graph `{id}`: {reason}")]
    InvalidGraph { id: String, reason: String },

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("graph `{0}` has no ground-truth universe labels")]
    MissingGroundTruth(String),

    #[error("non-finite loss term in batch item {item} at ({row}, {col})")]
    NonFiniteLoss { item: usize, row: usize, col: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("eigen decomposition failed: {0}")]
    Eigen(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("unknown graph index {0}")]
    UnknownGraph(usize),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
