use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input from the user: arguments, config values, missing files.
    #[error("{0}")]
    Usage(String),

    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: malformed CSV: {source}")]
    Csv { path: PathBuf, source: csv::Error },

    #[error(transparent)]
    Core(#[from] matl_core::Error),

    /// Some grid cells failed numerically; their partial results are on disk.
    #[error("{failed} of {total} runs failed: {first}")]
    RunsFailed { failed: usize, total: usize, first: String },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn csv(path: impl Into<PathBuf>) -> impl FnOnce(csv::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Csv { path, source }
    }

    /// 2 for user errors, 3 for numeric failures at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::RunsFailed { .. } => 3,
            _ => 2,
        }
    }
}
