use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use ims_core::auth::AuthError;
use ims_core::domain::ValidationCode;
use ims_core::engine::{EngineError, Violation, ViolationCode};
use ims_core::geoloc::GeoError;
use ims_core::store::StoreError;
use ims_core::sync::SyncError;
use serde::Serialize;

/// Every error response: `{"code": …, "message": …, "details": […]}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub details: Vec<String>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: &'a str,
    details: &'a [String],
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
            details: Vec::new(),
        }
    }

    pub fn with_details(mut self, details: Vec<String>) -> Self {
        self.details = details;
        self
    }

    pub fn unprocessable(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    pub fn malformed_request(message: impl Into<String>) -> Self {
        Self::unprocessable("MALFORMED_REQUEST", message)
    }

    pub fn not_found(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn unknown_reference() -> Self {
        Self::not_found("UNKNOWN_REFERENCE", "referenced entity does not exist")
    }

    pub fn forbidden() -> Self {
        Self::new(StatusCode::FORBIDDEN, "FORBIDDEN", "role does not permit this action")
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: &self.code,
            message: &self.message,
            details: &self.details,
        };
        (self.status, Json(body)).into_response()
    }
}

fn conflict_detail(c: ValidationCode) -> bool {
    c.is_uniqueness() || c == ValidationCode::LastAdmin
}

impl From<Violation> for ApiError {
    fn from(v: Violation) -> Self {
        let details: Vec<String> = v.details.iter().map(|c| c.as_str().to_owned()).collect();
        let message = v.to_string();
        match v.code {
            ViolationCode::ValidationFailed => {
                // A request that is well-formed but collides with existing
                // state is a conflict; anything else is unprocessable.
                match v.details.first() {
                    Some(&first) if v.details.iter().all(|c| conflict_detail(*c)) => {
                        ApiError::new(StatusCode::CONFLICT, first.as_str(), message)
                    }
                    _ => ApiError::unprocessable("VALIDATION_FAILED", message),
                }
                .with_details(details)
            }
            ViolationCode::VersionConflict => {
                ApiError::new(StatusCode::CONFLICT, "VERSION_CONFLICT", message)
            }
            ViolationCode::RejectedNegative => {
                ApiError::new(StatusCode::CONFLICT, "REJECTED_NEGATIVE", message)
            }
            ViolationCode::UnknownReference => ApiError::not_found("UNKNOWN_REFERENCE", message),
            ViolationCode::Forbidden => ApiError::forbidden(),
        }
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        match e {
            AuthError::WeakPassword | AuthError::PasswordTooLong => {
                ApiError::unprocessable(e.code(), e.to_string())
            }
            _ => ApiError::new(StatusCode::UNAUTHORIZED, e.code(), e.to_string()),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        log::error!("storage failure: {e}");
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, e.code(), format!("{e}; retry later"))
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Storage(s) => s.into(),
        }
    }
}

impl From<SyncError> for ApiError {
    fn from(e: SyncError) -> Self {
        let status = match &e {
            SyncError::BatchTooLarge(_) => StatusCode::PAYLOAD_TOO_LARGE,
            SyncError::CursorAhead { .. } => StatusCode::CONFLICT,
            SyncError::EmptyBatch | SyncError::DuplicateOpInBatch(_) | SyncError::BadLimit => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            SyncError::Storage(_) => StatusCode::SERVICE_UNAVAILABLE,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<GeoError> for ApiError {
    fn from(e: GeoError) -> Self {
        ApiError::unprocessable(e.code(), e.to_string())
    }
}
