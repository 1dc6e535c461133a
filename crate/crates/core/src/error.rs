use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller supplied a value outside an operation's domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// Both partition functions of a bag vanish, so its label likelihood is undefined.
    #[error("degenerate model for bag `{bag}`: both partition functions are zero")]
    DegenerateModel { bag: String },

    /// One or more bags have a zero self-kernel and cannot be normalized.
    #[error("degenerate bag(s) with zero self-kernel: {}", .bags.join(", "))]
    DegenerateBags { bags: Vec<String> },

    /// A quantity underflowed the representation and cannot be resolved.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("brute-force enumeration refused for m = {m} (limit {limit})")]
    OracleRefused { m: usize, limit: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Two artifacts (dataset, model, gram, svm) do not belong together.
    #[error("artifact mismatch: {0}")]
    Mismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether this error stems from bad user input rather than a failed computation.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::DimensionMismatch { .. }
                | Error::OracleRefused { .. }
                | Error::Parse { .. }
                | Error::Mismatch(_)
                | Error::Json(_)
        )
    }
}
