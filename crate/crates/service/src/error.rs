use axum::extract::rejection::JsonRejection;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use cafa_core::dialogue::DialogueError;
use serde::Serialize;
use serde_json::Value;

/// Uniform error body used by every 4xx and 5xx response.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub detail: Value,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { code: code.to_string(), message: message.into(), detail: Value::Null } }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.body.detail = detail;
        self
    }

    pub fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        let status = match r {
            JsonRejection::MissingJsonContentType(_) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            JsonRejection::JsonSyntaxError(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, "invalid_body", r.body_text())
    }
}

impl From<DialogueError> for ApiError {
    fn from(e: DialogueError) -> Self {
        use DialogueError as D;
        let (status, code) = match &e {
            D::Refusal(_) => (StatusCode::UNPROCESSABLE_ENTITY, "refused"),
            D::MissingScene => (StatusCode::UNPROCESSABLE_ENTITY, "missing_scene"),
            D::InvalidScene(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_scene"),
            D::EmptyComplaint => (StatusCode::UNPROCESSABLE_ENTITY, "empty_complaint"),
            D::Unclassifiable { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "unclassifiable"),
            D::ParserDisabled => (StatusCode::CONFLICT, "parser_disabled"),
            D::SessionClosed => (StatusCode::CONFLICT, "session_done"),
            D::AwaitingContext => (StatusCode::CONFLICT, "awaiting_context"),
            D::NoTemplate(_) => (StatusCode::UNPROCESSABLE_ENTITY, "no_template"),
            D::Backend(_) => (StatusCode::BAD_GATEWAY, "backend_error"),
            D::NoEmptySlot | D::Invariant(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError::new(status, code, e.to_string())
    }
}
