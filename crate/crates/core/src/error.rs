use std::path::PathBuf;

use thiserror::Error;

use crate::signal::Montage;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected {expected:?} montage, recording is {found:?}")]
    Montage { expected: Montage, found: Montage },

    #[error("channel `{0}` not found in recording")]
    ChannelResolution(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid recording: {0}")]
    InvalidRecording(String),

    #[error("EDF parse error at byte {offset}: {message}")]
    Edf { offset: u64, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("window store: {0}")]
    Store(String),

    #[error("merge error: {0}")]
    Merge(String),

    #[error("augmentation impossible: {0}")]
    AugmentationImpossible(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by diverging arithmetic (NaN loss and friends).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}
