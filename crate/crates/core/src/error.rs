use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum LrqrError {
    #[error("invalid miscoverage level {0}: must satisfy 0 < alpha <= 0.5")]
    InvalidAlpha(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("sample `{0}` is empty")]
    EmptySample(&'static str),

    #[error("degenerate hypothesis: h vanishes on every unlabeled source point")]
    DegenerateHypothesis,

    #[error("numerically singular system: {0}")]
    Singular(String),

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("invalid probability simplex: {0}")]
    InvalidSimplex(String),

    #[error("too few rows for {folds}-fold cross-validation in `{sample}`: {rows} rows")]
    TooFewRows {
        sample: &'static str,
        rows: usize,
        folds: usize,
    },

    #[error("unknown method `{0}` (expected one of: split, weighted, lrqr)")]
    UnknownMethod(String),

    #[error("{path}: row {row}, column `{column}`: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl LrqrError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        LrqrError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, LrqrError>;
