//! Crate-wide error type and result alias.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters, mismatched dimensions, or inconsistent options.
    #[error("configuration error: {0}")]
    Config(String),

    /// A memory was asked to sample but holds nothing samplable.
    #[error("empty memory: {0}")]
    EmptyMemory(String),

    /// Snapshot bytes could not be decoded; names the offending field.
    #[error("snapshot decode error at `{field}`: {reason}")]
    Decode { field: String, reason: String },

    /// A diagnostic was requested that is not being recorded.
    #[error("unavailable: {0}")]
    Unavailable(String),

    /// A metric is undefined for the given input.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// The environment produced a non-finite state or training diverged.
    #[error("run fault: {0}")]
    RunFault(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn decode(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Decode {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
