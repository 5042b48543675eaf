use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: row {row}: {message}")]
    Csv { path: PathBuf, row: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] qipnet::Error),
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// 1 usage or input, 2 numerical failure, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Csv { .. } => 1,
            CliError::Io { .. } => 3,
            CliError::Core(e) if e.is_numerical() => 2,
            CliError::Core(qipnet::Error::Io { .. }) => 3,
            CliError::Core(_) => 1,
        }
    }
}
