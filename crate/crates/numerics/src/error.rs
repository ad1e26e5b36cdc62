use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: shape mismatch, expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
}

impl NumericsError {
    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        NumericsError::InvalidArgument { op, msg: msg.into() }
    }

    pub fn shape(op: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        NumericsError::ShapeMismatch {
            op,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, NumericsError>;
