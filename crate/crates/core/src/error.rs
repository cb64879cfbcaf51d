//! Crate-wide error type. Variants map onto the CLI exit-code classes:
//! config/usage (1), data (2), numerical (3).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// CSV header does not match the expected column set.
    #[error("schema error: {0}")]
    Schema(String),

    /// A field failed to parse; the message names the offending row.
    #[error("parse error: {0}")]
    Parse(String),

    /// Duplicate keys, non-consecutive word indices, or interleaved sentences.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Invalid configuration (bad dimensions, zero epochs, unknown keys...).
    #[error("config error: {0}")]
    Config(String),

    /// Tensor or span dimensions disagree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// NaN/Inf encountered where a finite value is required.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Malformed vocab/provider/model file.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
