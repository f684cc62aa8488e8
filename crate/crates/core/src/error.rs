use thiserror::Error;

/// Errors raised anywhere in the stencil lowering pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid stencil: {0}")]
    InvalidStencil(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("grid extent {extent} on axis {axis} is smaller than kernel extent {k}")]
    GridTooSmall { axis: usize, extent: usize, k: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("step count must be at least 1")]
    ZeroSteps,

    #[error("elapsed time must be positive, got {0}")]
    NonPositiveTime(f64),

    #[error("invalid merge factors (r1={r1}, r2={r2}): {msg}")]
    InvalidMerge { r1: usize, r2: usize, msg: String },

    #[error("index ({row}, {col}) outside {rows}x{cols}")]
    OutOfRange { row: usize, col: usize, rows: usize, cols: usize },

    #[error("graph with {0} nodes is too large for exhaustive search")]
    GraphTooLarge(usize),

    #[error("invalid matching: {0}")]
    InvalidMatching(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("row {row}, group {group} holds {count} nonzeros (2:4 allows at most 2)")]
    Not24 { row: usize, group: usize, count: usize },

    #[error("invalid metadata at row {row}, group {group}: {msg}")]
    InvalidMetadata { row: usize, group: usize, msg: String },

    #[error("invalid hardware descriptor: {0}")]
    InvalidHardware(String),

    #[error("empty layout search space")]
    EmptySearchSpace,

    #[error("malformed binary blob: {0}")]
    Blob(String),

    #[error("invalid kernel plan: {0}")]
    InvalidPlan(String),
}

pub type Result<T> = std::result::Result<T, Error>;
