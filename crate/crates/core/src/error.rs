use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, layouts or configuration values that do not fit together.
    #[error("structural error: {0}")]
    Structural(String),

    /// A computation produced NaN or an infinity.
    #[error("numerical error in {location}: {detail}")]
    Numerical { location: String, detail: String },

    #[error("config error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("config field `{field}`: {message}")]
    ConfigField { field: String, message: String },

    #[error("metrics file {path}: row {row}: {message}")]
    MetricsFormat {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("refusing to write non-finite value in column `{column}` at step {step}")]
    NonFiniteMetric { column: String, step: u64 },

    #[error("checkpoint version mismatch: file has {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint layout mismatch: {0}")]
    CheckpointLayout(String),

    #[error("checkpoint corrupted: {0}")]
    CheckpointCorrupt(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub(crate) fn numerical(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            location: location.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigField {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefixes the location of a numerical error, e.g. with a task index.
    pub(crate) fn within(self, context: impl std::fmt::Display) -> Self {
        match self {
            Error::Numerical { location, detail } => Error::Numerical {
                location: format!("{context}: {location}"),
                detail,
            },
            other => other,
        }
    }
}
