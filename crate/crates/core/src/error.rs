use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for {len} frames")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("provider {provider} failed after {attempts} attempt(s): {message}")]
    Provider {
        provider: String,
        attempts: u32,
        message: String,
    },

    #[error("decode failed for {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("missing artifact {path} (produce it with `tcb {producer}`)")]
    MissingArtifact { path: PathBuf, producer: &'static str },

    #[error("annotation: {0}")]
    Annotation(String),

    #[error("unknown annotator `{0}`")]
    UnknownAnnotator(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 2 validation, 3 provider failure, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Shape(_)
            | Error::IndexOutOfRange { .. }
            | Error::MissingArtifact { .. }
            | Error::Annotation(_)
            | Error::UnknownAnnotator(_) => 2,
            Error::Provider { .. } => 3,
            _ => 1,
        }
    }
}
