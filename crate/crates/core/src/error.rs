use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// A data row failed validation. `row` is 1-based and excludes the header.
    #[error("row {row}: {message}")]
    InvalidRow { row: usize, message: String },

    #[error("bad header: {0}")]
    InvalidHeader(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("invalid tree model: {0}")]
    InvalidTree(String),

    #[error("unsupported model format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("types with fewer than {required} units: {}", types.join(", "))]
    InsufficientUnits { required: usize, types: Vec<String> },

    #[error("enumeration of {estimate:.3e} configurations exceeds the guard of {limit:.0e}")]
    EnumerationTooLarge { estimate: f64, limit: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
