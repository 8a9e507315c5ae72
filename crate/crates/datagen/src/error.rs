use std::path::PathBuf;

use thiserror::Error;

/// Failure of one external model call.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unreachable at {endpoint}: {reason}")]
    Unreachable { endpoint: String, reason: String },
    #[error("backend returned an invalid response: {0}")]
    Response(String),
    #[error("backend cannot process input: {0}")]
    Input(String),
    #[error(transparent)]
    Hook(#[from] stereo_dfm::DfmError),
}

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("output root {path} is not writable: {reason}")]
    Unwritable { path: PathBuf, reason: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Core(#[from] stereo_core::CoreError),
    #[error(transparent)]
    Dfm(#[from] stereo_dfm::DfmError),
}

pub type Result<T, E = DatagenError> = std::result::Result<T, E>;
