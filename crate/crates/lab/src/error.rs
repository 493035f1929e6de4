use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{file}: byte {offset}: {msg}")]
    Parse {
        file: String,
        offset: u64,
        msg: String,
    },
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] prunelab_core::Error),
}

impl LabError {
    /// Stable tag for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            LabError::Io { .. } => "io",
            LabError::Parse { .. } => "parse",
            LabError::Schema(_) => "schema",
            LabError::Config(_) => "config",
            LabError::Core(e) => e.kind(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> LabError {
        let path = path.into();
        move |source| LabError::Io { path, source }
    }
}
