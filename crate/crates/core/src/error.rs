//! Error type shared across the crate.
//!
//! The CLI maps these variants onto process exit codes: configuration
//! errors exit 2, schema errors 3, numerical failures 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's preconditions (dimension mismatch,
    /// out-of-range index, too few data points, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Inconsistent flags or a request the trained artifacts cannot serve
    /// (e.g. codebook prediction without a fitted codebook).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent on-disk data: unparseable records,
    /// mismatched dimensions, unknown bundle versions.
    #[error("schema error: {0}")]
    Schema(String),

    /// A numerical routine broke down (non-finite objective, singular
    /// matrix beyond jitter, EM divergence).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A brute-force oracle was asked to enumerate more configurations
    /// than its cap allows.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidInput(_) | Error::Capacity(_) => 2,
            Error::Schema(_) | Error::Io(_) => 3,
            Error::Numerical(_) => 4,
        }
    }
}
