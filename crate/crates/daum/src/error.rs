//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/parameter dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An operation was called before its prerequisites were satisfied
    /// (e.g. fitting a posterior from a partially filled snapshot buffer).
    #[error("invalid state: {0}")]
    State(String),

    /// A scalar argument is outside its admissible range.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The mathematical precondition of a closed-form expression is violated
    /// (e.g. the AR(1) stationarity condition).
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration is internally inconsistent or unsatisfiable.
    #[error("config error: {0}")]
    Config(String),

    /// Input data does not cover what the operation needs.
    #[error("data error: {0}")]
    Data(String),

    /// A serialized artifact is malformed.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
