use crate::jobs::JobStatus;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] colorize_core::Error),

    #[error("invalid request: {0}")]
    BadRequest(String),

    #[error("model not loaded: {0}")]
    Unavailable(String),

    #[error("job {0} not found")]
    NotFound(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("job {id}: illegal status change {from:?} -> {to:?}")]
    Transition { id: String, from: JobStatus, to: JobStatus },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("replay produced different output: {0}")]
    ReplayMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl ServiceError {
    /// Whether the caller, rather than the service, is at fault.
    pub fn is_client_error(&self) -> bool {
        use colorize_core::Error as E;
        match self {
            ServiceError::BadRequest(_) => true,
            ServiceError::Core(e) => matches!(e, E::InvalidInput(_) | E::ShapeMismatch { .. } | E::Image(_)),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, ServiceError>;
