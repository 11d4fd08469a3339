use thiserror::Error;

/// Errors raised by the detector model and the simulators built on it.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("photocurrent fixed point did not converge (power {power:e} W, bias {bias} V)")]
    NonConvergence { power: f64, bias: f64 },

    #[error("trace needs {required} time steps, budget is {budget}")]
    StepBudgetExceeded { required: u64, budget: u64 },

    #[error("count rate is not monotone around the zero-count gap: {0}")]
    NonMonotonicSweep(String),

    #[error("sweep point {index} (x = {x:e}) failed: {source}")]
    SweepPoint {
        index: usize,
        x: f64,
        #[source]
        source: Box<ModelError>,
    },

    #[error("matrix cell (config {config}, scenario {scenario}) failed: {source}")]
    MatrixCell {
        config: usize,
        scenario: usize,
        #[source]
        source: Box<ModelError>,
    },
}

impl ModelError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ModelError::InvalidParameter { field, reason: reason.into() }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        match self {
            ModelError::NonConvergence { .. }
            | ModelError::StepBudgetExceeded { .. }
            | ModelError::NonMonotonicSweep(_) => true,
            ModelError::SweepPoint { source, .. } | ModelError::MatrixCell { source, .. } => {
                source.is_numeric()
            }
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;
