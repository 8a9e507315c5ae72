use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("loss undefined: {0}")]
    UndefinedLoss(String),
    #[error("non-finite loss {value} at step {step}")]
    NonFiniteLoss { step: usize, value: f64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Core(#[from] stereo_core::CoreError),
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;
