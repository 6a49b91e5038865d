use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Row and column are 1-based; rows count physical records, header included.
    #[error("cannot parse cell at row {row}, column {col}: {text:?}")]
    Parse { row: usize, col: usize, text: String },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("matrix has no rows or no columns")]
    EmptyMatrix,

    #[error("operation requires column-centered data")]
    NotCentered,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("iterative eigensolver did not converge after {0} iterations")]
    ConvergenceFailure(usize),

    #[error("degenerate spectrum: trailing eigenvalues are all zero")]
    DegenerateSpectrum,

    #[error("degenerate Gumbel scale: fourth moment equals squared variance")]
    DegenerateScale,

    #[error("series of length {0} is too short (need at least 3)")]
    SeriesTooShort(usize),

    #[error("series of length {0} is too long for exact enumeration (max 14)")]
    SeriesTooLong(usize),

    #[error("prior has length {prior} but series has length {series}")]
    PriorLengthMismatch { series: usize, prior: usize },

    #[error("invalid simulation setting: {0}")]
    InvalidSetting(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
