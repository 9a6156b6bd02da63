use thiserror::Error;

/// Errors raised by the discretization, solvers, and experiment drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("field belongs to a mesh with {found} cells per side, expected {expected}")]
    MeshMismatch { expected: usize, found: usize },

    #[error("expression is not finite at node ({x1}, {x2})")]
    NonFinite { x1: f64, x2: f64 },

    #[error("coefficient assumption violated: {0}")]
    Assumption(String),

    #[error("linear system is singular or ill-conditioned (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },

    #[error("Newton iteration did not converge after {} iterations (last residual {:e})", residual_history.len().saturating_sub(1), residual_history.last().copied().unwrap_or(f64::NAN))]
    NewtonFailure { residual_history: Vec<f64> },

    #[error("optimizer did not converge in any restart (best stationarity residual {best_residual:e})")]
    OptimizerFailure { best_residual: f64 },

    #[error("no usable samples: {0}")]
    NoUsableSamples(String),

    #[error("need at least 4 usable points above the distance floor {floor:e}, found {found}")]
    TooFewPoints { floor: f64, found: usize },

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for failures of an iterative or direct solver, as opposed to bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::SingularSystem { .. }
                | Error::NewtonFailure { .. }
                | Error::OptimizerFailure { .. }
                | Error::NoUsableSamples(_)
                | Error::TooFewPoints { .. }
        )
    }
}
