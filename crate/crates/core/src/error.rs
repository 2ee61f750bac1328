use thiserror::Error;

/// Errors produced by the modeling, control and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller handed in something malformed: wrong dimension, non-finite
    /// value, empty sequence, out-of-range probability.
    #[error("invalid input: {0}")]
    Input(String),

    /// Hyperparameter fitting could not produce a model.
    #[error("gp fitting failed: {0}")]
    Fit(String),

    /// A factorization or solve broke down numerically.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The QP is primal infeasible. `constraints` names the row groups that
    /// were involved when the certificate fired.
    #[error("infeasible program ({constraints})")]
    Infeasible { constraints: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Input(format!("{name} must be finite, got {value}")))
    }
}
