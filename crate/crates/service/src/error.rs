use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use miracle_core::Error;
use serde::Serialize;

/// JSON error body: `{"error": ..., "fields": [...]}`.
#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status,
            error: error.into(),
            fields: Vec::new(),
        }
    }

    pub fn invalid_fields(fields: Vec<String>) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            error: format!("patient payload failed schema validation: {}", fields.join(", ")),
            fields,
        }
    }

    pub fn no_model() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "no model loaded")
    }

    pub fn expired() -> Self {
        Self::new(StatusCode::GONE, "session expired or unknown; request a new prediction")
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Input(_) => StatusCode::BAD_REQUEST,
            Error::Schema(_) | Error::Shape(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Unsupported(_) => StatusCode::CONFLICT,
            Error::Remote { .. } | Error::Generation(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}
