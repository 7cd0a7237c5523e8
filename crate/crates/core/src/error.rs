//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any noisylab operation.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor did not have the shape an operation required. Carries the
    /// offending layer when raised from inside a network.
    #[error("shape mismatch at layer {layer_index} ({layer_kind}): expected {expected}, got {actual}")]
    LayerShape {
        layer_index: usize,
        layer_kind: &'static str,
        expected: String,
        actual: String,
    },

    /// Shape mismatch outside of a network layer (losses, tensors, batches).
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An argument violated a precondition (negative weight, epsilon out of
    /// range, batch_size < 1, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Input data violated a contract (label out of range, empty dataset).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// An operation was called in a state that does not support it
    /// (missing gradient, missing transition matrix, stale trace).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A numeric contract was violated (non-distribution row, NaN).
    #[error("numeric contract violated: {0}")]
    NumericContract(String),

    /// A file had the wrong structure (checkpoint magic, CIFAR record size).
    #[error("format error: {0}")]
    Format(String),

    /// Configuration file could not be parsed or is inconsistent.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
