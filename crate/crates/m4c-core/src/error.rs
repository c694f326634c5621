use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes; names the operation and both shapes.
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Input rejected by a precondition (bad value, bad config, bad record).
    #[error("validation: {0}")]
    Validation(String),

    /// Malformed record in a line-oriented input file.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Training aborted because the loss left the finite range.
    #[error("non-finite loss at iteration {iter}; offending batch ids: {batch_ids:?}")]
    NonFiniteLoss {
        iter: usize,
        batch_ids: Vec<String>,
    },

    /// Synthetic generation could not satisfy its placement constraints.
    #[error("generation: {0}")]
    Generation(String),

    /// A state that is unreachable when the library is used through its
    /// public API.
    #[error("internal: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
