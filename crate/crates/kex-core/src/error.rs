//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data violated a contract (shape mismatch, empty set, out-of-range value).
    #[error("validation error: {0}")]
    Validation(String),

    /// A configuration value or reference is invalid (unknown id, missing file).
    #[error("configuration error: {0}")]
    Config(String),

    /// A numerical procedure failed (non-finite values, solver non-convergence).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A backend or resource failed to initialize.
    #[error("initialization error: {0}")]
    Init(String),

    /// A cache entry failed its integrity check and was evicted.
    #[error("cache checksum mismatch for {key}: entry evicted")]
    CacheChecksum { key: String },

    /// Malformed text input, with a 1-based line number when known.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn init(msg: impl Into<String>) -> Self {
        Error::Init(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
