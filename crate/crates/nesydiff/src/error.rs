//! Crate-wide error type. Precondition violations are hard errors, never
//! silent clamps or truncations.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside its mathematical domain (times, probabilities,
    /// token values, weight signs).
    #[error("domain: {0}")]
    Domain(String),

    /// Dimensions of two objects do not line up.
    #[error("shape: {0}")]
    Shape(String),

    /// An exact-enumeration cap would be exceeded.
    #[error("enumeration budget: {0}")]
    Budget(String),

    /// Configuration text is malformed or names an unknown key.
    #[error("config: {0}")]
    Config(String),

    /// A data file is malformed (bad magic, truncation, count mismatch).
    #[error("data: {0}")]
    Data(String),

    /// A checkpoint file is malformed or incompatible.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
