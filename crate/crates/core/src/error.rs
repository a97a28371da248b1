//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// A configuration field failed validation.
    #[error("invalid config `{field}`: {message}")]
    Config { field: String, message: String },

    /// Linear-algebra breakdown (e.g. innovation covariance not invertible).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A caller violated an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Checkpoint manifest/blob mismatch or corruption.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CoreError {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        CoreError::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
