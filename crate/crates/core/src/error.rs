use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input file.
    #[error("{path}: {msg}")]
    Load { path: PathBuf, msg: String },

    /// Invalid combination of parameters or mismatched shapes.
    #[error("configuration error: {0}")]
    Config(String),

    /// Invariant violation in user-supplied data.
    #[error("invalid data: {0}")]
    Data(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at step {step}: {msg}")]
    Diverged { step: usize, msg: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn load(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Load { path: path.into(), msg: msg.into() }
    }

    /// True for errors caused by bad configuration or input validation, as
    /// opposed to runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Load { .. } | Error::Config(_) | Error::Data(_))
    }
}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}
pub(crate) use config_err;
