use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible or malformed shapes. `dim` names the offending
    /// dimension when a single one is at fault.
    #[error("shape error: {message}")]
    Shape { message: String, dim: Option<usize> },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Non-finite input or a solver that failed to converge.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(message: impl Into<String>) -> Self {
        Error::Shape {
            message: message.into(),
            dim: None,
        }
    }

    pub(crate) fn shape_at(dim: usize, message: impl Into<String>) -> Self {
        Error::Shape {
            message: message.into(),
            dim: Some(dim),
        }
    }
}
