use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

/// Structured API failure: an HTTP status, a machine-readable code and a
/// human-readable message.
#[derive(Debug, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: ErrorDetail<'a>,
}

#[derive(Serialize)]
struct ErrorDetail<'a> {
    code: &'a str,
    message: &'a str,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} `{id}` not found"))
    }

    pub fn validation(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    pub fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<elspin_core::Error> for ApiError {
    fn from(e: elspin_core::Error) -> Self {
        use elspin_core::Error as E;
        let code = match &e {
            E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
                return ApiError::new(StatusCode::NOT_FOUND, "file_not_found", e.to_string())
            }
            E::Io(_) => return ApiError::internal(e.to_string()),
            E::InvalidArgument(_) => "invalid_argument",
            E::UnknownLearner(_) => "unknown_learner",
            E::UnknownSampling(_) => "unknown_sampling",
            E::UnknownVariable(_) => "unknown_variable",
            E::ChecksumMismatch => "checksum_mismatch",
            E::UnsupportedVersion { .. } => "unsupported_version",
            E::Bundle(_) => "invalid_bundle",
            E::MissingColumn(_) | E::UnparseableNumber { .. } | E::Csv(_) | E::InvalidRating { .. } => "invalid_table",
            E::NoUsableRows { .. } => "no_usable_rows",
            E::SampleTooLarge { .. } => "sample_too_large",
            E::EmptySolventPool(_) => "empty_solvent_pool",
            _ => "unprocessable",
        };
        ApiError::validation(code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { error: ErrorDetail { code: self.code, message: &self.message } };
        (self.status, Json(body)).into_response()
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;
