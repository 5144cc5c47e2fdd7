use thiserror::Error;

/// Errors produced by the simulator and analysis routines.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    Dimension {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("routing error in chunk {chunk}: {reason}")]
    Routing { chunk: usize, reason: String },

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("key error: {0}")]
    Key(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(expected: usize, actual: usize, context: &'static str) -> Self {
        Error::Dimension {
            expected,
            actual,
            context,
        }
    }
}
