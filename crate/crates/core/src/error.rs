use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("noise injection impossible: 2*{missed} labels requested but only {total} exist")]
    NoiseBudget { missed: usize, total: usize },

    #[error("could not place boxes on image {image_index} after {attempts} attempts")]
    Placement { image_index: usize, attempts: usize },

    #[error("image {0} is already active")]
    AlreadyActive(u64),

    #[error("unknown image id {0}")]
    UnknownImage(u64),

    #[error("missing predictions for pool image {0}")]
    MissingPredictions(u64),

    #[error("no class has ground truth; mAP undefined")]
    NoGroundTruth,

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::InvalidBox(_)
            | Error::Validation(_)
            | Error::Parse { .. }
            | Error::UnknownImage(_)
            | Error::NoiseBudget { .. } => 3,
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
