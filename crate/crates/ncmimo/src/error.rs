use std::path::{Path, PathBuf};

/// Errors surfaced by the command-line driver. Each maps to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or model file. Exit 2.
    #[error("{0}")]
    Usage(String),
    /// A file does not follow its schema. Exit 2.
    #[error("{0}")]
    Format(String),
    /// Training hit a non-finite objective. Exit 3.
    #[error("training diverged (non-finite objective) at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] ncmimo_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Format(_) => 2,
            CliError::Diverged { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
