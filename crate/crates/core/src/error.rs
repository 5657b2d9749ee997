use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// A corpus file row could not be parsed.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    /// Invalid model or run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A matrix that must be positive definite was not, even after jitter.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// No segmentation of the waveform has nonzero probability under the model.
    #[error("waveform '{id}' has no supported segmentation under the model")]
    NoSupport { id: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Data(_) | Error::Parse { .. } | Error::NoSupport { .. } | Error::Csv(_) => 2,
            Error::Io { .. } | Error::Json(_) => 2,
            Error::Config(_) | Error::Domain(_) => 3,
            Error::Numerical(_) => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
