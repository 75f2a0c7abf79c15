use thiserror::Error;

/// Errors raised by the diffusion toolkit.
#[derive(Debug, Error)]
pub enum DdkError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("diffusion step {t} outside 1..={max}")]
    StepOutOfRange { t: usize, max: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid variance: {0}")]
    InvalidVariance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("training became unstable at step {step}: loss = {loss}")]
    Instability { step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DdkError>;

pub(crate) fn format_err(what: &'static str, detail: impl Into<String>) -> DdkError {
    DdkError::Format {
        what,
        detail: detail.into(),
    }
}
