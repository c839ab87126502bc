use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AedError>;

#[derive(Debug, Error)]
pub enum AedError {
    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// A config file could not be parsed; `key` is the dotted key path when known.
    #[error("{path}: {key}: {reason}")]
    ConfigParse { path: PathBuf, key: String, reason: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid state: {0}")]
    State(String),

    /// Failure inside an experiment, tagged with where it happened.
    #[error("epoch {epoch}, {phase}: {source}")]
    Run {
        epoch: usize,
        phase: &'static str,
        #[source]
        source: Box<AedError>,
    },

    #[error("malformed log {path}: {reason}")]
    MalformedLog { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AedError {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        AedError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        AedError::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AedError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at(self, epoch: usize, phase: &'static str) -> Self {
        match self {
            e @ AedError::Run { .. } => e,
            e => AedError::Run {
                epoch,
                phase,
                source: Box::new(e),
            },
        }
    }

    /// True for errors caused by the user's configuration rather than by a run.
    pub fn is_config_error(&self) -> bool {
        matches!(self, AedError::Config { .. } | AedError::ConfigParse { .. })
    }
}
