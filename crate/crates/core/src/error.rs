use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("enumeration of {count} items exceeds the cap of {cap}")]
    EnumerationCap { count: f64, cap: f64 },

    #[error("counter {0} has no left neighbors")]
    IsolatedCounter(usize),

    #[error("candidate entry {index} = {value} is not on the quantization grid")]
    OffGrid { index: usize, value: f64 },

    #[error("counter {counter} has zero intensity but a positive count")]
    ZeroIntensity { counter: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error in {path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by the numerics rather than inputs or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::ZeroIntensity { .. } | Error::EnumerationCap { .. }
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io(_) | Error::Csv(_) | Error::Parse { .. } | Error::Schema(_)
        )
    }
}
