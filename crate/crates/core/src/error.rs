use thiserror::Error;

/// Unified error type for the whole crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes that must agree do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An operation was configured with invalid parameters.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// An element access fell outside the tensor's extents.
    #[error("index out of range: {0}")]
    Index(String),

    /// A named weight is missing from the store or has the wrong shape.
    #[error("weight store: {0}")]
    Store(String),

    /// A serialized weight file is malformed.
    #[error("weight file format: {0}")]
    Format(String),

    /// The layer graph cannot be analyzed (missing shape annotations, cycles).
    #[error("analysis: {0}")]
    Analysis(String),

    /// Dataset records (annotations, class ids) are inconsistent.
    #[error("data: {0}")]
    Data(String),

    /// An image stream is not valid binary PPM/PGM.
    #[error("image format: {0}")]
    Image(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
