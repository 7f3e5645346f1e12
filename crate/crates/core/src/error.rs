use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the workbench library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav: {reason} (at byte offset {offset})")]
    Wav { offset: u64, reason: String },

    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid room geometry: {0}")]
    Geometry(String),

    #[error("signal error: {0}")]
    Signal(String),

    #[error("augmentation policy violation: {0}")]
    PolicyViolation(String),

    #[error("non-finite value at step {step} in parameter `{param}`")]
    NonFinite { step: u64, param: String },

    /// Training produced a non-finite loss; carries the best checkpoint seen
    /// before that point.
    #[error("training diverged at step {step}: {detail}")]
    Diverged {
        step: u64,
        detail: String,
        last_good: Box<crate::nn::Checkpoint>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("input too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
