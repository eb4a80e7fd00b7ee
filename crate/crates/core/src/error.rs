use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Checkpoint,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("missing tensor `{0}`")]
    MissingKey(String),

    #[error("tensor `{key}` has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        key: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("unsupported dtype {dtype} for tensor `{key}`")]
    UnsupportedDtype { key: String, dtype: String },

    #[error("unsupported layout: {0}")]
    UnsupportedLayout(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("safetensors archive {path}: {msg}")]
    Archive { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NonFinite(_) => ErrorKind::Numeric,
            Error::MissingKey(_)
            | Error::ShapeMismatch { .. }
            | Error::UnsupportedDtype { .. }
            | Error::UnsupportedLayout(_)
            | Error::Config(_)
            | Error::Archive { .. } => ErrorKind::Checkpoint,
            Error::Dimension(_)
            | Error::Degenerate(_)
            | Error::Consistency(_)
            | Error::Data(_)
            | Error::Input(_)
            | Error::Io { .. }
            | Error::Json { .. }
            | Error::Image { .. } => ErrorKind::Input,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
