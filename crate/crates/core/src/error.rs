use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("coefficient convention mismatch: expected {expected}, found {found}")]
    ConventionMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("level mismatch: {0}")]
    LevelMismatch(String),
    #[error("rejection sampler exceeded {0} proposals for a single draw")]
    SamplerExhausted(usize),
    #[error("covariance is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
