use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("line {line}: unknown label {label:?}; declared classes are {classes:?}")]
    UnknownLabel {
        line: usize,
        label: String,
        classes: Vec<String>,
    },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    Dimension {
        expected: usize,
        found: usize,
        context: &'static str,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("feature id {id} out of range for {count} features")]
    FeatureOutOfRange { id: usize, count: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("snapshot format version {found} is not supported (expected {expected})")]
    SnapshotVersion { found: u32, expected: u32 },

    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),

    #[error("invalid choice {choice:?}; allowed options are {allowed:?}")]
    InvalidChoice { choice: String, allowed: Vec<String> },

    #[error("invalid session state: {0}")]
    SessionState(String),

    #[error("no answers to aggregate")]
    NoAnswers,

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than by the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::NonFiniteLoss { .. })
    }
}
