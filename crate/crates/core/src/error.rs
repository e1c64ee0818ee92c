use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {coords:?} is outside the chart domain: {reason}")]
    Domain { coords: Vec<f64>, reason: String },

    #[error("degenerate metric tensor at {coords:?} (det = {det:e})")]
    Singularity { coords: Vec<f64>, det: f64 },

    #[error("grid error: {0}")]
    Grid(String),

    #[error(
        "reflection attempts exhausted for path {path} at step {step} (start index {start_index})"
    )]
    Reflection {
        start_index: u32,
        path: usize,
        step: u64,
    },

    #[error("time {0} is not a snapshot time of this ensemble")]
    Lookup(f64),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("matrix is not positive definite after jitter escalation: {0}")]
    Conditioning(String),

    #[error("hyperparameter fit failed: {0}")]
    Fit(String),

    #[error("all grid points have been visited")]
    Exhaustion,

    #[error("ingestion error at row {row}: {reason}")]
    Ingestion { row: usize, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("cache error for {path:?}: {reason}")]
    Cache { path: PathBuf, reason: String },

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable category, used by the CLI for exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain { .. } => "domain",
            Error::Singularity { .. } => "singularity",
            Error::Grid(_) => "grid",
            Error::Reflection { .. } => "reflection",
            Error::Lookup(_) => "lookup",
            Error::Input(_) => "input",
            Error::Conditioning(_) => "conditioning",
            Error::Fit(_) => "fit",
            Error::Exhaustion => "exhaustion",
            Error::Ingestion { .. } => "ingestion",
            Error::Parse { .. } => "parse",
            Error::Cache { .. } => "cache",
            Error::Iteration { source, .. } => source.category(),
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
