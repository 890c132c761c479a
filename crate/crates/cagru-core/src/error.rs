//! Crate-wide error type.
//!
//! Every fallible operation returns [`Error`]. The coarse [`ErrorKind`]
//! partition (config / data / numeric) is what the CLI maps to process
//! exit codes, so variants carry their kind explicitly.

use thiserror::Error;

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Invalid configuration or parameters (exit code 2).
    Config,
    /// Invalid, missing, or inconsistent input data (exit code 3).
    Data,
    /// Numeric failure during computation (exit code 4).
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dataset too short: {got} days, need at least {min}")]
    TooShort { got: u32, min: u32 },

    #[error("no windows can be formed: {0}")]
    EmptyWindows(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown pattern: {0}")]
    UnknownPattern(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Numeric(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
