use std::io;

use axum::http::StatusCode;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("no review session is loaded")]
    NoSession,
    #[error("unknown sample {0:?}")]
    UnknownSample(String),
    #[error("unknown job {0}")]
    UnknownJob(u64),
    #[error("invalid decision: {0}")]
    InvalidDecision(String),
    #[error("a scoring job is running")]
    Busy { job_id: u64 },
    #[error("audit log: {0}")]
    Audit(#[source] io::Error),
    #[error(transparent)]
    Core(#[from] hardcase_core::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::NoSession => "no_session",
            ServiceError::UnknownSample(_) => "unknown_sample",
            ServiceError::UnknownJob(_) => "unknown_job",
            ServiceError::InvalidDecision(_) => "invalid_decision",
            ServiceError::Busy { .. } => "busy",
            ServiceError::Audit(_) => "audit",
            ServiceError::Core(e) if e.is_io() => "io",
            ServiceError::Core(_) => "invalid_request",
            ServiceError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NoSession => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::UnknownSample(_) | ServiceError::UnknownJob(_) => StatusCode::NOT_FOUND,
            ServiceError::InvalidDecision(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Busy { .. } => StatusCode::CONFLICT,
            ServiceError::Core(e) if !e.is_io() => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}
