use thiserror::Error;

pub type Result<T> = std::result::Result<T, MvoprError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MvoprError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid covariance spec: {0}")]
    InvalidSpec(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("coordinate descent did not converge at lambda index {lambda_index} after {sweeps} sweeps")]
    Convergence { lambda_index: usize, sweeps: usize },

    /// The penalized columns carry no usable signal for a lambda grid.
    #[error("degenerate lambda grid: {0}")]
    DegenerateGrid(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

impl MvoprError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        MvoprError::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        MvoprError::InvalidArgument(msg.into())
    }
}
