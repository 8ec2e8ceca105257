use std::path::{Path, PathBuf};

use thiserror::Error;

/// Exit code for bad arguments, unreadable or invalid inputs.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for failures while doing the work.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] vesselscreen_core::Error),
}

impl Error {
    pub fn input(path: &Path, message: impl Into<String>) -> Self {
        Error::Input { path: path.to_path_buf(), message: message.into() }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> i32 {
        use vesselscreen_core::Error as C;
        match self {
            Error::Usage(_) | Error::Input { .. } => EXIT_USAGE,
            Error::Io { .. } => EXIT_RUNTIME,
            Error::Core(e) => match e {
                C::Shape(_) | C::Parameter(_) | C::Config(_) | C::Format(_) | C::Spec(_) | C::Length(_) => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
