use thiserror::Error;

pub type Result<T> = std::result::Result<T, JadceError>;

#[derive(Debug, Error)]
pub enum JadceError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("non-finite state at layer {layer}, column {column}: {what}")]
    NonFinite {
        layer: usize,
        column: usize,
        what: &'static str,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl JadceError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        JadceError::InvalidArgument(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        JadceError::Numerical(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        JadceError::Format(msg.into())
    }

    /// Short machine-readable tag used by the CLI error record.
    pub fn kind(&self) -> &'static str {
        match self {
            JadceError::InvalidArgument(_) => "invalid_argument",
            JadceError::Numerical(_) => "numerical",
            JadceError::NonFinite { .. } => "non_finite",
            JadceError::Format(_) => "format",
            JadceError::GradCheck(_) => "grad_check",
            JadceError::Io(_) => "io",
        }
    }
}
