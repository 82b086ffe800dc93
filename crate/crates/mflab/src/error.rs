//! Error taxonomy shared across the library.
//!
//! The split matters to the CLI: configuration problems, numerical failures,
//! and statistically inconclusive outcomes map to distinct exit codes.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration / input data.
    #[error("config error: {0}")]
    Config(String),

    /// Request exceeds a hard size guard (dense tensor grids, tuple counts).
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    /// Fields that must share a grid do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Marginal family inconsistent under partial integration.
    #[error("marginal family inconsistent between orders {higher} and {lower}: defect {defect:.3e} exceeds {tol:.3e}")]
    Consistency {
        higher: usize,
        lower: usize,
        defect: f64,
        tol: f64,
    },

    /// A quantity that must be a probability density is not.
    #[error("invalid density: {0}")]
    InvalidDensity(String),

    /// Non-finite state encountered while time stepping.
    #[error("non-finite value in {context} at t = {t}{}", realization.map(|r| format!(" (realization {r})")).unwrap_or_default())]
    NonFinite {
        context: &'static str,
        t: f64,
        realization: Option<usize>,
    },

    /// A conservation or positivity monitor tripped.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Domain truncation too small for the requested run.
    #[error("truncation error: {0}")]
    Truncation(String),

    /// Spectral resolution insufficient (e.g. negative density overshoot).
    #[error("resolution error: {0}")]
    Resolution(String),

    /// Fixed-point iteration failed to converge.
    #[error("no convergence after {iterations} iterations; declared regime: {regime}")]
    NotConverged { iterations: usize, regime: String },

    /// Signal below the Monte-Carlo noise floor; more realizations needed.
    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Corrupt or incompatible serialized data.
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    /// Process exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::SizeLimit(_)
            | Error::GridMismatch(_)
            | Error::Consistency { .. }
            | Error::InvalidDensity(_)
            | Error::Format(_) => 2,
            Error::Inconclusive(_) => 4,
            _ => 3,
        }
    }
}
