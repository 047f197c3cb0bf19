use thiserror::Error;

#[derive(Error, Debug)]
pub enum GkpError {
    /// Bad inputs, inconsistent dimensions, violated preconditions.
    #[error("validation: {0}")]
    Validation(String),
    /// Codeword synthesis could not identify a usable ground-state pair.
    #[error("synthesis: {0}")]
    Synthesis(String),
    /// An iterative solver exhausted its budget without meeting tolerance.
    #[error("convergence: {0}")]
    Convergence(String),
    /// A serialized artifact could not be parsed or is the wrong version.
    #[error("format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GkpError>;

impl GkpError {
    pub fn validation(msg: impl Into<String>) -> Self {
        GkpError::Validation(msg.into())
    }
}
