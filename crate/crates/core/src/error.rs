use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("degenerate mask: maximum value is not positive")]
    DegenerateMask,

    #[error("invalid diffusion step: {0}")]
    InvalidStep(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("cosine distance undefined for a zero-norm embedding")]
    CosineUndefined,

    #[error("readout training diverged at step {step}")]
    TrainingDiverged { step: usize },

    #[error("drag optimization diverged at iteration {iteration}")]
    OptimizationDiverged { iteration: usize },

    #[error("linear solve did not converge after {iterations} iterations")]
    SolverDidNotConverge { iterations: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(expected: impl Into<String>, found: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            found: found.into(),
        }
    }
}
