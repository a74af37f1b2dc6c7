use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents disagree with what an operation requires.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Bad caller-supplied data: token ids out of range, overlong sequences, empty inputs.
    #[error("input error: {0}")]
    Input(String),

    /// Invalid configuration values.
    #[error("config error: {0}")]
    Config(String),

    /// A NaN or infinity appeared in the named tensor.
    #[error("non-finite value in {tensor}")]
    NonFinite { tensor: String },

    /// Training produced a non-finite loss. Carries the last checkpoint whose loss was finite.
    #[error("training diverged at step {step}: loss is not finite")]
    Diverged {
        step: u64,
        last_good: Box<crate::train::Checkpoint>,
    },

    /// A file did not match the expected binary or JSON layout.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
