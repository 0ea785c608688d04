use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("ragged input: row {row} has {found} columns, expected {expected}")]
    RaggedRow { row: usize, expected: usize, found: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("zero vector at row {row} is not allowed under the cosine metric")]
    ZeroVector { row: usize },

    #[error("bad fbin file: {0}")]
    BadFormat(String),

    #[error("point {0} is not live")]
    DeadIndex(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("neighbour count {k} must be smaller than the number of live points {n}")]
    CapacityBound { k: usize, n: usize },

    #[error("invalid value for {name}: {reason}")]
    InvalidParam { name: String, reason: String },

    #[error("unknown parameter {0}")]
    UnknownParam(String),

    #[error("perplexity {perplexity} unreachable with {k} neighbours")]
    UnreachablePerplexity { perplexity: f64, k: usize },

    #[error("calibration failed for point {point}: {reason}")]
    Calibration { point: usize, reason: String },

    #[error("non-finite force on point {point} at iteration {iteration}")]
    NonFiniteForce { point: usize, iteration: u64 },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("affinities not normalised: total mass {0}")]
    NotNormalized(f64),

    #[error("empty cluster")]
    EmptyCluster,

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}
