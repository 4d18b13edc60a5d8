//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by simulator components.
#[derive(Debug, Error)]
pub enum Error {
    /// Two parameter sets disagree on a layer's dimensions.
    #[error("layer `{layer}`: shape mismatch ({left_rows}x{left_cols} vs {right_rows}x{right_cols})")]
    ShapeMismatch {
        layer: String,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    /// Two parameter sets disagree on layer names or ordering.
    #[error("layer mismatch: expected `{expected}`, found `{found}`")]
    LayerMismatch { expected: String, found: String },

    /// Two matrices disagree on dimensions.
    #[error("matrix shape mismatch ({left_rows}x{left_cols} vs {right_rows}x{right_cols})")]
    DimMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    /// A matrix holds a NaN or infinite entry.
    #[error("non-finite value in layer `{layer}`")]
    NonFinite { layer: String },

    /// The global model went non-finite during a run.
    #[error("non-finite model parameters at round {round}")]
    NonFiniteRound { round: usize },

    /// A configuration value is out of range, missing, or inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A CSV data file failed to parse.
    #[error("{path}:{line}: {message}")]
    Csv {
        path: String,
        line: usize,
        message: String,
    },

    /// A data file contained no rows.
    #[error("empty dataset")]
    EmptyDataset,

    /// A checkpoint file is truncated or malformed.
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    /// A gradient or loss was requested over an empty index batch.
    #[error("empty batch")]
    EmptyBatch,

    /// Aggregation was called with no client updates.
    #[error("no client updates to aggregate")]
    EmptyUpdates,

    /// Worker thread pool construction failed.
    #[error("thread pool: {0}")]
    ThreadPool(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
