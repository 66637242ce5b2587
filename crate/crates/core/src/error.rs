use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: cannot read `{value}` as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("duplicate observation for firm `{firm}` in period `{period}` (row {row})")]
    Duplicate {
        firm: String,
        period: String,
        row: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular normal equations ({0}); use a positive ridge penalty")]
    Singular(String),

    #[error("degenerate panel: {0} is zero")]
    DegeneratePanel(&'static str),

    #[error("sequencing error: {0}")]
    Sequencing(&'static str),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("no feasible fit: best penalized objective {best_objective:.3e} at {best_params}")]
    InfeasibleFit {
        best_objective: f64,
        best_params: String,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
