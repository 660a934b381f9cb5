use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} values but {actual} were given")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: expected rank {expected}, got shape {actual:?}")]
    Rank {
        op: &'static str,
        expected: &'static str,
        actual: Vec<usize>,
    },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {reason}")]
    Invalid { op: &'static str, reason: String },
    #[error("batch norm running statistics are uninitialized")]
    UninitializedStats,
    #[error("non-finite gradient in parameter `{name}`")]
    NonFiniteGradient { name: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> TensorError {
    TensorError::Invalid {
        op,
        reason: reason.into(),
    }
}
