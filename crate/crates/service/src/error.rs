use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use r2e_core::pipeline::PipelineError;
use r2e_core::reasoner::ReasonerError;
use serde::{Deserialize, Serialize};

/// Error body for every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn models_unavailable() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "models_unavailable", "models are not loaded")
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let message = e.to_string();
        match e {
            PipelineError::UnknownAnswer(_) => Self::not_found("unknown_answer", message),
            PipelineError::EmptyQuery => Self::bad_request("empty_query", message),
            PipelineError::Config(_) | PipelineError::Bias(_) => Self::bad_request("invalid_parameter", message),
            PipelineError::Reasoner(ReasonerError::MaskIndex { .. }) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "mask_out_of_range", message)
            }
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}
