use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("non-finite activation at layer {layer}, record row {row}")]
    NonFinite { layer: usize, row: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("checksum mismatch for {file}: manifest {expected}, payload {actual}")]
    Checksum {
        file: String,
        expected: String,
        actual: String,
    },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("single-class target: both labels are required")]
    SingleClass,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("{what} out of range: {detail}")]
    OutOfRange { what: &'static str, detail: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("duplicate points: {0}")]
    DuplicatePoints(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by bad input data, files or settings rather
    /// than by a numerical failure during fitting.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Json { .. }
                | Error::MissingFile(_)
                | Error::NonFinite { .. }
                | Error::ShapeMismatch(_)
                | Error::Checksum { .. }
                | Error::Schema(_)
                | Error::InvalidDataset(_)
                | Error::InvalidConfig(_)
                | Error::DimMismatch { .. }
                | Error::OutOfRange { .. }
        )
    }
}
