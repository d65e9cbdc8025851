use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A value lies outside the set an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// An object is in the wrong state for the requested operation.
    #[error("state error: {0}")]
    State(String),

    /// A file does not match its expected binary layout.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Loss became NaN or infinite.
    #[error("training diverged at epoch {epoch}, step {step} (loss = {loss})")]
    Divergence { epoch: usize, step: usize, loss: f32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}
