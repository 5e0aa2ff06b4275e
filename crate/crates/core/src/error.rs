use thiserror::Error;

pub type Result<T, E = SphError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SphError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate neighborhood: {neighbors} neighbors, condition number {condition:e}")]
    DegenerateNeighborhood { neighbors: usize, condition: f64 },

    #[error("simulation diverged at step {step}: particle {particle} has non-finite or invalid {field}")]
    Diverged {
        step: u64,
        particle: usize,
        field: &'static str,
    },

    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),

    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("scenario failed validation: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SphError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SphError::InvalidArgument(msg.into())
    }
}
