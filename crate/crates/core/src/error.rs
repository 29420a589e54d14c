use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's input contract (lengths, ranges).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Inputs that are well-formed but describe a degenerate problem.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("optimizer aborted at iteration {iteration}: {reason}")]
    OptimizerAbort { iteration: usize, reason: String },

    #[error("unknown sweep preset `{0}`")]
    UnknownPreset(String),

    #[error("no stored results for sweep `{sweep}` in {root}")]
    MissingSweep { sweep: String, root: PathBuf },

    #[error("store I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
