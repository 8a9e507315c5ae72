use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed PFM header in {path}: {reason}")]
    PfmFormat { path: PathBuf, reason: String },

    #[error("truncated PFM payload in {path}: expected {expected} bytes, found {found}")]
    PfmTruncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("invalid value: {0}")]
    Validation(String),

    #[error("image decode failed for {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("incomplete dataset entries under {root}: {ids:?}")]
    Manifest { root: PathBuf, ids: Vec<String> },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("json error in {path}: {reason}")]
    Json { path: PathBuf, reason: String },

    #[error("prediction failed: {0}")]
    Predictor(String),
}

impl CoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}
