use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("bad magic bytes {found:?}, expected \"FTZ1\"")]
    BadMagic { found: [u8; 4] },

    #[error("truncated tensor file: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    #[error("tensor dimensions overflow: {0:?}")]
    DimOverflow(Vec<u32>),

    #[error("query budget exhausted after {limit} queries")]
    BudgetExhausted { limit: u64 },

    #[error("training diverged (loss {loss:.3e}); try a smaller learning rate")]
    Diverged { loss: f64 },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(expected: impl ToString, actual: impl ToString) -> Error {
    Error::ShapeMismatch {
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
