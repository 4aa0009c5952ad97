use thiserror::Error;

pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("layer {index} ({kind}): {message}")]
    Layer {
        index: usize,
        kind: &'static str,
        message: String,
    },

    #[error("invalid layer spec at index {index}: {message}")]
    InvalidSpec { index: usize, message: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("parameter mismatch: {0}")]
    Params(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}

impl NnError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        NnError::Shape(msg.into())
    }
}
