use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("map of {height}x{width} is smaller than the required {min}x{min}")]
    TooSmall {
        height: usize,
        width: usize,
        min: usize,
    },
    #[error("input size {height}x{width} is not divisible by {multiple}")]
    Indivisible {
        height: usize,
        width: usize,
        multiple: usize,
    },
    #[error("invalid value: {0}")]
    InvalidValue(&'static str),
    #[error("channel mismatch: expected {expected}, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
