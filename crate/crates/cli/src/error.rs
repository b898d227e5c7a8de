use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const INPUT: i32 = 2;
    pub const MISSING_ARTIFACT: i32 = 3;
    pub const DIVERGED: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] aed::Error),

    #[error("missing {what}: {path} (run `{producer}` first)")]
    MissingArtifact {
        what: String,
        path: PathBuf,
        producer: &'static str,
    },

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn missing(what: impl Into<String>, path: impl Into<PathBuf>, producer: &'static str) -> Self {
        CliError::MissingArtifact {
            what: what.into(),
            path: path.into(),
            producer,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use aed::Error as E;
        match self {
            CliError::Usage(_) => exit::INPUT,
            CliError::MissingArtifact { .. } => exit::MISSING_ARTIFACT,
            CliError::Core(e) => match e {
                E::Diverged { .. } => exit::DIVERGED,
                E::Config(_)
                | E::Shape(_)
                | E::Parse { .. }
                | E::EmptySeries
                | E::NonMonotonic { .. }
                | E::NoOverlap
                | E::TooShort { .. }
                | E::UndefinedMetric(_)
                | E::EmptyDataset
                | E::TruncatedCheckpoint(_)
                | E::UnsupportedVersion { .. }
                | E::CorruptCheckpoint(_)
                | E::Json(_) => exit::INPUT,
                E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => exit::INPUT,
                _ => exit::FAILURE,
            },
        }
    }
}
