use std::io;

use thiserror::Error;

/// Errors raised anywhere in the segmentation and volumetry pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("checkpoint error in {field}: {message}")]
    Checkpoint { field: String, message: String },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("non-finite loss in epoch {epoch}")]
    Divergence { epoch: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
