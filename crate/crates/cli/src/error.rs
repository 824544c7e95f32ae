use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("artifact {0} was not written")]
    MissingArtifact(PathBuf),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Core(#[from] dinr::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// Process exit status: 2 for numerical divergence, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Diverged(_) => 2,
            CliError::Core(e) if e.is_divergence() => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
