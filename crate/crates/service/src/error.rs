use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

/// An error response: status code plus `{"error": message}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown {what} `{id}`"))
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }

    pub fn no_dynamics() -> Self {
        Self::conflict("dynamics models are not trained yet; start a train_dynamics job first")
    }
}

impl From<fabco::Error> for ApiError {
    fn from(e: fabco::Error) -> Self {
        use fabco::Error::*;
        match e {
            InvalidDemo(_) | InvalidConfig(_) | InvalidTrajectory { .. } | TooShort { .. } | Empty(_) | Json(_) => {
                Self::bad_request(e.to_string())
            }
            _ => Self::internal(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;
