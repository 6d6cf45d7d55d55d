use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{0}: empty input")]
    EmptyInput(&'static str),

    #[error("{0}: non-finite value")]
    NonFinite(&'static str),

    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("unknown projection target `{0}` (expected one of Q, K, V, Up, Down)")]
    UnknownTarget(String),

    #[error("unknown adapter method `{0}` (expected lora, moelora or talklora)")]
    UnknownMethod(String),

    #[error("power iteration did not converge after {iterations} iterations (last estimate {estimate})")]
    NotConverged { estimate: f64, iterations: usize },

    #[error("non-finite loss at sample {sample}")]
    NonFiniteLoss { sample: usize },

    #[error("training diverged at step {step}")]
    Divergence { step: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("format version mismatch: file has {found}, reader expects {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checksum mismatch for tensor `{handle}`")]
    ChecksumMismatch { handle: String },

    #[error("truncated payload for tensor `{0}`")]
    Truncated(String),

    #[error("malformed header: {0}")]
    Header(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
