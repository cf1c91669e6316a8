//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by raster access, sampling, fusion, and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// A window reaches past a raster edge. Names the offending edge so the
    /// caller can tell which bound was violated.
    #[error("window out of bounds: {edge} edge ends at {end} but raster extent is {limit}")]
    Bounds {
        edge: &'static str,
        end: usize,
        limit: usize,
    },

    /// A caller-supplied argument is invalid (zero dimension, unsorted
    /// scales, unnormalized frequencies, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A file could not be parsed. Line numbers are 1-based; binary formats
    /// report the failing record index instead.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Input data violates a contract (e.g. a label id at or above the
    /// declared class count).
    #[error("data error: {0}")]
    Data(String),

    /// A numeric guard tripped (NaN input, degenerate normalization).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A configuration artifact is unusable (zero-norm text vector, shape
    /// mismatch between bank and weights).
    #[error("config error: {0}")]
    Config(String),

    /// A region mask has no usable foreground.
    #[error("empty region: {0}")]
    EmptyRegion(String),

    /// A multi-step protocol was violated (missing window prediction, tile
    /// count mismatch).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Evaluation cannot produce a metric (no class has a defined IoU).
    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
