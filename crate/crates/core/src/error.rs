use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("cumulative hazard jump {jump} at grid index {index} exceeds 1")]
    InvalidHazard { index: usize, jump: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("design matrix is rank deficient")]
    SingularDesign,

    #[error("Newton iterations did not converge after {iterations} steps (gradient sup-norm {grad_norm:e})")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error("fold count {folds} out of range (smallest site has {min_site} observations)")]
    InvalidFoldCount { folds: usize, min_site: usize },

    #[error("propensity model is degenerate: {0}")]
    DegeneratePropensity(String),

    #[error("coarse density-ratio fit failed: {0}")]
    CoarseRatioFailure(String),

    #[error("positivity violated for observation {obs} at time {time}")]
    PositivityViolation { obs: usize, time: f64 },

    #[error("no target-site observations")]
    EmptyTarget,

    #[error("site {0} has no observations")]
    EmptySite(usize),

    #[error("influence table was built in the wrong mode for this estimator")]
    WrongBundleMode,

    #[error("influence table is missing the requested slice")]
    EmptyTable,

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("bootstrap degenerate: {skipped} of {total} replicates skipped")]
    BootstrapDegenerate { skipped: usize, total: usize },

    #[error("site {0} unavailable")]
    SiteUnavailable(usize),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("row {row}: {message}")]
    Ingestion { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
