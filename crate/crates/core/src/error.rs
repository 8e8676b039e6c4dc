use std::path::PathBuf;

use crate::engine::RoundMetrics;

pub type Result<T, E = FedError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum FedError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}, key `{key}`: {message}")]
    Parse {
        line: usize,
        key: String,
        message: String,
    },

    #[error("numerical overflow in block `{block}`")]
    Numerical { block: String },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("parameter layouts differ")]
    LayoutMismatch,

    /// Training produced non-finite values. `completed` holds the metrics of
    /// every round that finished before the failure.
    #[error("{method} diverged at round {round}")]
    Diverged {
        method: String,
        round: usize,
        completed: Vec<RoundMetrics>,
    },

    #[error("malformed metrics file {path}: {message}")]
    Metrics { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FedError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        FedError::Config(msg.into())
    }
}
