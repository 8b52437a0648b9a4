use std::path::Path;

use thiserror::Error;

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_DATA: u8 = 4;
pub const EXIT_NUMERIC: u8 = 5;
pub const EXIT_IO: u8 = 6;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] kmat_core::Error),

    #[error("config {path}: {message}")]
    Config { path: String, message: String },

    #[error("{path}: {message}")]
    Data { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn config(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        Self::Config {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }

    pub fn data(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        Self::Data {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        use kmat_core::Error as E;
        match self {
            CliError::Config { .. } => EXIT_CONFIG,
            CliError::Data { .. } => EXIT_DATA,
            CliError::Io { .. } => EXIT_IO,
            CliError::Core(e) => match e {
                E::Config(_) => EXIT_CONFIG,
                E::Shape(_)
                | E::Data(_)
                | E::Format { .. }
                | E::Size { .. }
                | E::ZeroShotViolation { .. } => EXIT_DATA,
                E::Numeric(_) | E::Diverged { .. } => EXIT_NUMERIC,
                E::Io(_) => EXIT_IO,
                E::Domain(_) => EXIT_OTHER,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
