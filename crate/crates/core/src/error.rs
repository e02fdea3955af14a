use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty axis")]
    EmptyAxis,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty subset after {retries} retries")]
    EmptySubset { retries: usize },

    #[error("empty loss mask")]
    EmptyLossMask,

    #[error("divergence at unroll {unroll}")]
    Divergence { unroll: usize },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("singular covariance block")]
    Singular,

    #[error("insufficient trials: {0}")]
    InsufficientTrials(String),

    #[error("unknown preset '{name}', expected one of: {valid}")]
    UnknownPreset { name: String, valid: String },

    #[error("malformed raw grid: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
