//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An option or argument violates a precondition (bad shape, bad range,
    /// unknown identifier, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A value fed into a numeric routine was rejected (non-finite, out of
    /// domain).
    #[error("rejected input: {0}")]
    InvalidInput(String),

    /// A file did not match the expected schema. Carries the 1-based line
    /// number of the offending row.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// The file parsed but its contents are inconsistent (e.g. timestamps
    /// not strictly increasing).
    #[error("data error: {0}")]
    Data(String),

    /// A metric has no defined value for the given inputs.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
