//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or dataset dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input values are NaN or infinite where finite values are required.
    #[error("non-finite values: {0}")]
    NonFinite(String),

    /// A class referenced by an operation has no samples or codes.
    #[error("class {class} has no {what}")]
    EmptyClass { class: usize, what: &'static str },

    /// Structured parse failure for binary dataset files.
    #[error("parse error in {path} at byte {offset}: {reason}")]
    Parse {
        path: String,
        offset: u64,
        reason: String,
    },

    /// Malformed checkpoint or codebook container.
    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn non_finite(msg: impl Into<String>) -> Self {
        Error::NonFinite(msg.into())
    }
}
