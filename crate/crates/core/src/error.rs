use thiserror::Error;

/// Errors raised by targets, metrics, integrators and diagnostics.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The density vanished (or its log is not finite), so a tempered metric is undefined.
    #[error("tempering singularity: log density is {0}")]
    TemperingSingularity(f64),

    /// A numerical step could not be completed. Samplers turn this into a rejection.
    #[error("step failure{}: {reason}", .step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    StepFailure { step: Option<usize>, reason: String },

    /// A variable-length trajectory hit the step cap before its physical time elapsed.
    #[error("trajectory truncated after {0} steps")]
    Truncated(usize),
}

impl Error {
    pub(crate) fn step(reason: impl Into<String>) -> Self {
        Error::StepFailure { step: None, reason: reason.into() }
    }

    /// Tags a failure inside a trajectory with its step index. A vanished
    /// density reached mid-trajectory is a step failure too.
    pub(crate) fn at_step(self, index: usize) -> Self {
        match self {
            Error::StepFailure { reason, .. } => Error::StepFailure { step: Some(index), reason },
            Error::TemperingSingularity(lp) => {
                Error::StepFailure { step: Some(index), reason: format!("density vanished (log pi = {lp})") }
            }
            other => other,
        }
    }

    pub fn is_step_failure(&self) -> bool {
        matches!(self, Error::StepFailure { .. } | Error::Truncated(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
