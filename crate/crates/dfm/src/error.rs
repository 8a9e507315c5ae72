use thiserror::Error;

pub type Result<T, E = DfmError> = std::result::Result<T, E>;

#[derive(Debug, Error, PartialEq)]
pub enum DfmError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("attention contract violated: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),
}
