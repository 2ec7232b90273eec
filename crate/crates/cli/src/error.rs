use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] drise::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    /// 1 for bad input, 2 for detector protocol failures, 3 for bugs.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::File { .. } => 1,
            CliError::Core(e) if e.is_protocol() => 2,
            CliError::Core(_) => 1,
            CliError::Internal(_) => 3,
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::File { path, source }
    }
}

impl From<drise::ProtocolError> for CliError {
    fn from(e: drise::ProtocolError) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Internal(format!("serializing output: {e}"))
    }
}
