use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use find_core::api::ErrorBody;
use find_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0} not found")]
    NotFound(String),

    #[error("{0}")]
    Validation(String),

    #[error("invalid choice {choice:?}; allowed options are {allowed:?}")]
    InvalidChoice { choice: String, allowed: Vec<String> },

    #[error("{0}")]
    Conflict(String),

    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Validation(_) | ServiceError::InvalidChoice { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> ErrorBody {
        let code = match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Validation(_) | ServiceError::InvalidChoice { .. } => "validation",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Internal(_) => "internal",
        };
        ErrorBody {
            code: code.into(),
            message: self.to_string(),
            allowed: match self {
                ServiceError::InvalidChoice { allowed, .. } => Some(allowed.clone()),
                _ => None,
            },
        }
    }

    pub(crate) fn io(what: impl std::fmt::Display, e: std::io::Error) -> ServiceError {
        ServiceError::Internal(format!("{what}: {e}"))
    }
}

impl From<CoreError> for ServiceError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidChoice { choice, allowed } => ServiceError::InvalidChoice { choice, allowed },
            CoreError::SessionState(m) => ServiceError::Conflict(m),
            e if e.is_validation() => ServiceError::Validation(e.to_string()),
            e => ServiceError::Internal(e.to_string()),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if matches!(self, ServiceError::Internal(_)) {
            tracing::error!("{self}");
        }
        (self.status(), Json(self.body())).into_response()
    }
}
