use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library. Numerical kernels that can only fail on
/// programmer error (tensor shape mismatches) panic instead.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("unknown instrument code `{0}`")]
    UnknownInstrument(String),

    #[error("line {line}: timestamp regressed by {regression_ns} ns for {instrument} (tolerance {tolerance_ns} ns)")]
    TimestampRegression {
        line: u64,
        instrument: String,
        regression_ns: i64,
        tolerance_ns: i64,
    },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("empty universe")]
    EmptyUniverse,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient data: need {needed} samples, have {available} (short by {})", needed - available)]
    InsufficientData { needed: usize, available: usize },

    #[error("incompatible configuration: {0}")]
    Config(String),

    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
