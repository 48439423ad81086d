//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by numerical routines, samplers and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    /// Cholesky factorization failed even after escalating the diagonal jitter.
    #[error("matrix not positive definite after jitter escalation (cap {cap:e})")]
    NotPositiveDefinite { cap: f64 },

    /// A matrix expected to be symmetric was not.
    #[error("matrix not symmetric within tolerance: {context}")]
    NotSymmetric { context: &'static str },

    /// A non-finite value (NaN or infinity) was encountered.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// Operand shapes do not compose.
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    /// Input carries no usable signal (e.g. all labels identical).
    #[error("degenerate input: {context}")]
    DegenerateInput { context: &'static str },

    /// A Metropolis-Hastings chain accepted nothing over a full burn-in window.
    #[error("mcmc chain stuck: zero acceptances over the burn-in window")]
    ChainStuck,

    /// Every acquisition restart produced a non-finite candidate.
    #[error("all acquisition restarts failed")]
    AcquisitionFailed,

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
        }
    }

    /// Exit code the CLI maps this error to: 2 for configuration problems,
    /// 3 for numeric failures and everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}
