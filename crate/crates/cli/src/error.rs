use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] relaxstab::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o failure on {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("missing artifact {}; run the stage that produces it first", .0.display())]
    Missing(PathBuf),
    #[error("malformed artifact {}: {message}", path.display())]
    Malformed { path: PathBuf, message: String },
    #[error("{failed} of {total} tasks failed")]
    Tasks { failed: usize, total: usize, code: i32 },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            CliError::Missing(path.to_path_buf())
        } else {
            CliError::Io { path: path.to_path_buf(), source }
        }
    }

    pub fn malformed(path: &Path, message: impl ToString) -> Self {
        CliError::Malformed { path: path.to_path_buf(), message: message.to_string() }
    }

    /// 0 success, 1 validation, 2 numeric failure, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_validation() => 1,
            CliError::Core(relaxstab::Error::Numeric(_)) => 2,
            CliError::Core(_) => 3,
            CliError::Config(_) => 1,
            CliError::Io { .. } | CliError::Missing(_) | CliError::Malformed { .. } => 3,
            CliError::Tasks { code, .. } => *code,
        }
    }
}
