//! Error types shared across the workbench.

use thiserror::Error;

/// All fallible operations in this crate return this error.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor or batch did not have the shape an operation requires.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    /// A numeric value left the finite range, e.g. a layer output or a
    /// gradient. `layer` names the offending quantity.
    #[error("non-finite values in {layer} during {op}")]
    NonFinite { layer: String, op: String },

    /// An operation was invoked out of order (e.g. an optimizer step
    /// before any gradients were computed).
    #[error("invalid state: {0}")]
    State(String),

    /// A configuration or specification failed validation.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A dataset file could not be parsed. Lines are 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Data failed a semantic validation check (label range, dimensions).
    #[error("invalid data: {0}")]
    Validation(String),

    /// Not enough samples to satisfy a requested split.
    #[error("insufficient samples: {0}")]
    Capacity(String),

    /// The adversary model does not provide the requested information.
    #[error("capability not available: {0}")]
    Capability(String),

    /// A trace file is malformed. The offset is in bytes from file start.
    #[error("trace format error at byte {offset}: {message}")]
    TraceFormat { offset: u64, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
