use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    /// A fixed-point iteration hit its cap. `deltas` holds the sup-norm
    /// change of every iteration and `last` the final iterate, so callers
    /// can still look at what was produced.
    #[error("no convergence after {} iterations (last delta {:e})", deltas.len(), deltas.last().copied().unwrap_or(f64::NAN))]
    Convergence { deltas: Vec<f64>, last: Vec<f64> },

    #[error("series diverged: tail norms {tail_norms:?}")]
    Divergence { tail_norms: Vec<f64> },

    #[error("ensemble failed to converge for seeds {seeds:?}")]
    EnsembleFailure { seeds: Vec<u64> },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn argument<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
