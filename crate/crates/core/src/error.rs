use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Hyperparameters fall outside the box a quadrature rule certifies.
    #[error("parameters (nu={nu}, rho={rho}) lie outside the certified box")]
    OutOfBox { nu: f64, rho: f64 },

    /// A stage of the quadrature construction failed.
    #[error("rule construction failed in stage `{stage}`: {message}")]
    Build { stage: &'static str, message: String },

    /// Exponential-sum planning failed.
    #[error("exponential sum plan: {0}")]
    Plan(String),

    /// A rule file could not be parsed.
    #[error("rule file line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A numerical procedure failed (non-PSD matrix, non-convergence, NaN).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
