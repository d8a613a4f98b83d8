use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid network{}: {msg}", layer.map(|l| format!(" (layer {l})")).unwrap_or_default())]
    InvalidNetwork { layer: Option<usize>, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid instance: {0}")]
    Instance(String),

    #[error("data error at line {line}{}: {msg}", feature.as_ref().map(|f| format!(", feature `{f}`")).unwrap_or_default())]
    Data {
        line: usize,
        feature: Option<String>,
        msg: String,
    },

    #[error("plant incompatible with schema: {0}")]
    Plant(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("MILP encoding: {0}")]
    Encoding(String),

    #[error("explanation aborted: {0}")]
    Degenerate(String),

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
