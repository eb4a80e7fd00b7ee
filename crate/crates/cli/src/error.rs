use std::path::PathBuf;

use clearseg_core::ErrorKind;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: clearseg_core::Error,
    },

    #[error("input error: {0}")]
    Input(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("writing {path}: {msg}")]
    Output { path: PathBuf, msg: String },
}

impl CliError {
    /// 2 input, 3 checkpoint, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Stage { source, .. } => match source.kind() {
                ErrorKind::Input => 2,
                ErrorKind::Checkpoint => 3,
                ErrorKind::Numeric => 4,
            },
            CliError::Input(_) | CliError::Io { .. } | CliError::Output { .. } => 2,
        }
    }
}

/// Attaches a stage name to library errors.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for clearseg_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}
