use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty scene")]
    EmptyScene,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("pixel ({x}, {y}) outside {width}x{height} image")]
    PixelOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },

    #[error("full FIM restricted to desk scale (d = {dim}, limit {limit})")]
    DeskScaleExceeded { dim: usize, limit: usize },

    #[error("step {step} exceeds total steps {total}")]
    StepOutOfRange { step: usize, total: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown object id {0}")]
    UnknownObject(u32),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the numerics rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. } | Error::NotPositiveDefinite)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
