use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Caller broke an API precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("format error at byte {position}: {message}")]
    Format { position: u64, message: String },

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("training diverged at iteration {iteration}: {message}")]
    Diverged { iteration: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("http error: {0}")]
    Http(String),
}

impl Error {
    pub(crate) fn format(position: u64, message: impl Into<String>) -> Self {
        Error::Format {
            position,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidParameter(message.into())
    }

    pub(crate) fn contract(message: impl Into<String>) -> Self {
        Error::Contract(message.into())
    }
}
