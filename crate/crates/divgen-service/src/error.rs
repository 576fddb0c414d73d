use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

/// An API error, rendered as `{"code": ..., "message": ...}`.
#[derive(Debug, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ServiceError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

pub type ServiceResult<T> = Result<T, ServiceError>;

#[derive(Serialize)]
struct Body<'a> {
    code: &'a str,
    message: &'a str,
}

impl ServiceError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn unknown_task(name: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_task", format!("no task named `{name}`"))
    }

    pub fn unknown_instance(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_instance", format!("no instance with id `{id}`"))
    }

    pub fn invalid_label(label: &str) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_label", format!("`{label}` is not a task label"))
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        Self::internal(format!("io: {e}"))
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        Self::internal(format!("json: {e}"))
    }
}

impl From<divgen::Error> for ServiceError {
    fn from(e: divgen::Error) -> Self {
        use divgen::Error as E;
        match e {
            E::UnknownLabel(l) => Self::invalid_label(&l),
            E::TooFew { .. } | E::SingleClass | E::OutOfRange(_) | E::InvalidRequest(_) => {
                Self::bad_request(e.to_string())
            }
            other => Self::internal(other.to_string()),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = Json(Body {
            code: self.code,
            message: &self.message,
        });
        (self.status, body).into_response()
    }
}
