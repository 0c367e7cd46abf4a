use std::path::PathBuf;

use thiserror::Error;

use crate::grid::Point;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("unsupported propagator: {0}")]
    UnsupportedPropagator(String),

    #[error("explicit step dt={dt:e} exceeds the stability bound; use dt <= {suggested_dt:e}")]
    Unstable { dt: f64, suggested_dt: f64 },

    #[error("integrator failure on stream {stream_id} at t={t}: non-finite proposal from x={x:?}")]
    IntegratorFailure { stream_id: u64, x: Point, t: f64 },

    #[error("time {t} outside the available bracket [{start}, {end}]")]
    OutOfBracket { t: f64, start: f64, end: f64 },

    #[error("configuration invalid:\n{}", .0.iter().map(|e| format!("  - {e}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<ConfigIssue>),

    #[error("manifest check failed for {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// A single configuration violation, addressed by its JSON path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}
