use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AppError>;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),

    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),

    #[error("json output failed: {0}")]
    Json(#[from] serde_json::Error),

    #[error("numerical failure in {context}: {source}")]
    Numerical {
        context: String,
        source: hybridkernel_core::Error,
    },
}

impl AppError {
    pub fn config(msg: impl Into<String>) -> Self {
        AppError::Config(msg.into())
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Numerical { .. } => 3,
            AppError::Io { .. } | AppError::Csv(_) | AppError::Json(_) => 1,
        }
    }
}

pub(crate) trait Context<T> {
    fn context(self, what: &str) -> Result<T>;
}

impl<T> Context<T> for hybridkernel_core::Result<T> {
    fn context(self, what: &str) -> Result<T> {
        self.map_err(|source| AppError::Numerical {
            context: what.to_string(),
            source,
        })
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> AppError {
    let path = path.into();
    move |source| AppError::Io { path, source }
}
