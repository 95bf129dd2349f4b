use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("{path}: row {row}: {reason}")]
    Row {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty kernel window at x = {x} (bandwidth {bandwidth}); the bandwidth is too small or x lies outside the support")]
    EmptyWindow { x: f64, bandwidth: f64 },

    #[error("empty trimmed interval for the crossing search")]
    EmptyInterval,

    #[error("{0} lies outside the treatment support of the reference period")]
    OutsideSupport(f64),

    #[error("degenerate counterfactual: |q(x) - x| = {gap} does not exceed tolerance {tol}")]
    Degenerate { gap: f64, tol: f64 },

    #[error("no qualifying evaluation points: {0}")]
    EmptySet(String),

    #[error("singular least-squares design: {0}")]
    Singular(String),

    #[error("no crossing: {0}")]
    NoCrossing(String),

    #[error("all {0} bootstrap replicates failed")]
    BootstrapFailed(usize),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Short stable tag, used to tally bootstrap failures.
    pub fn reason(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Row { .. } => "row",
            Error::Csv(_) => "csv",
            Error::Io { .. } => "io",
            Error::EmptyWindow { .. } => "empty_window",
            Error::EmptyInterval => "empty_interval",
            Error::OutsideSupport(_) => "outside_support",
            Error::Degenerate { .. } => "degenerate",
            Error::EmptySet(_) => "empty_set",
            Error::Singular(_) => "singular",
            Error::NoCrossing(_) => "no_crossing",
            Error::BootstrapFailed(_) => "bootstrap_failed",
            Error::Config(_) => "config",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
