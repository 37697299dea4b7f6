use thiserror::Error;

/// Errors raised by the engine library.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("time step {dt} exceeds the stability limit {limit} ({context})")]
    Stability {
        dt: f64,
        limit: f64,
        context: String,
    },

    #[error("simulation diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("support error: {0}")]
    Support(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("grid resolution error: {0}")]
    Resolution(String),

    #[error("target unreachable: {0}")]
    Unreachable(String),

    #[error("state collapsed: {0}")]
    Collapse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl EngineError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        EngineError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics (divergence, non-convergence, ...),
    /// false for rejected inputs and I/O problems.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            EngineError::Stability { .. }
                | EngineError::Divergence { .. }
                | EngineError::Support(_)
                | EngineError::NonConvergence { .. }
                | EngineError::Resolution(_)
                | EngineError::Unreachable(_)
                | EngineError::Collapse(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, EngineError>;
