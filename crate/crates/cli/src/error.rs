use std::path::{Path, PathBuf};

use fmsr_core::ErrorCategory;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: fmsr_core::Error },

    #[error(transparent)]
    Core(#[from] fmsr_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl std::fmt::Display) -> Self {
        CliError::Usage(msg.to_string())
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            CliError::Usage(_) => ErrorCategory::Usage,
            CliError::File { source, .. } | CliError::Core(source) => source.category(),
            CliError::Io(_) | CliError::Csv(_) | CliError::Json(_) => ErrorCategory::Io,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            ErrorCategory::Usage => 2,
            ErrorCategory::Io => 3,
            ErrorCategory::Numeric => 4,
        }
    }
}

/// Attaches a path to core errors raised while touching that file.
pub fn at(path: &Path) -> impl FnOnce(fmsr_core::Error) -> CliError + '_ {
    move |source| CliError::File {
        path: path.to_path_buf(),
        source,
    }
}

pub fn required<'a, T>(value: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| CliError::usage(format!("--{flag} is required")))
}
