use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum MvsError {
    /// A numeric argument lies outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// Shapes, counts or option values that do not fit together.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// A point ended up at or behind the image plane of a camera.
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    /// A configuration or scene description is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {error}")]
    Io { path: PathBuf, error: std::io::Error },
    /// A file was readable but did not follow its format.
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, MvsError>;

impl MvsError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        MvsError::Argument(msg.into())
    }
}
