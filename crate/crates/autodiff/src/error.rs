use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid tensor: {detail}")]
    BadTensor { detail: String },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("invalid op attributes for {op}: {detail}")]
    BadAttributes { op: &'static str, detail: String },

    #[error("{0}")]
    Custom(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
