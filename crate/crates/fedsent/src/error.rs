//! Error type shared across the crate.

use thiserror::Error;

/// Failure classes surfaced by the library. The CLI maps each class to a
/// distinct exit code (config → 2, numeric → 3, io → 4).
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or malformed input data.
    #[error("config: {0}")]
    Config(String),

    /// Numeric failure: non-finite loss/gradient, degenerate matrix, shape mismatch.
    #[error("numeric: {0}")]
    Numeric(String),

    /// Filesystem failure.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Exit code for the CLI: one per failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numeric(_) => 3,
            Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
