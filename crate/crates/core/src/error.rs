use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Model document is malformed or a field has the wrong shape.
    #[error("schema error: {0}")]
    Schema(String),

    #[error("stochasticity violation in {context}: row sums to {sum}")]
    Stochasticity { context: String, sum: f64 },

    #[error("population mismatch: {0}")]
    Population(String),

    /// A combinatorial object would exceed a hard size limit.
    #[error("capacity exceeded: {what} has size {size}, limit is {limit}")]
    Capacity { what: String, size: u128, limit: u128 },

    #[error("value iteration did not converge after {sweeps} sweeps (residual {residual:e})")]
    Convergence { sweeps: usize, residual: f64 },

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("model error: {0}")]
    Model(String),
}

impl Error {
    pub(crate) fn capacity(what: impl Into<String>, size: u128, limit: u128) -> Self {
        Error::Capacity { what: what.into(), size, limit }
    }
}
