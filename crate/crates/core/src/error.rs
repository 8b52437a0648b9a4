use thiserror::Error;

/// Errors raised by the library. Variants are grouped so callers (notably
/// the CLI) can map them onto distinct exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("problem size {size} exceeds supported bound {max}")]
    Size { size: usize, max: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("zero-shot contract violated: {count} low-end image embedding(s) passed to training")]
    ZeroShotViolation { count: usize },

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged {
        epoch: usize,
        step: usize,
        detail: String,
    },
}

impl Error {
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::Diverged { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
