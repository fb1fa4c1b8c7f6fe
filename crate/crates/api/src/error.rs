use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use pollcast_core::{ApportionError, ForecastError, MethodParseError};
use pollcast_store::{LineErrorKind, StoreError};
use serde::{Deserialize, Serialize};

/// Error body: `{"code": "...", "message": "..."}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    retry_after: Option<u64>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            retry_after: None,
        }
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn with_retry_after(mut self, seconds: u64) -> Self {
        self.retry_after = Some(seconds);
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_owned(),
            message: self.message,
        };
        let mut response = (self.status, Json(body)).into_response();
        if let Some(seconds) = self.retry_after {
            response
                .headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from(seconds));
        }
        response
    }
}

impl From<LineErrorKind> for ApiError {
    fn from(kind: LineErrorKind) -> Self {
        let code = match kind {
            LineErrorKind::MissingDeviceId => "missing_device_id",
            LineErrorKind::UnknownParty { .. } => "unknown_party",
            LineErrorKind::MissingField(_) => "missing_field",
            LineErrorKind::BadTimestamp(_) | LineErrorKind::Json(_) => "bad_request",
        };
        ApiError::bad_request(code, kind.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(err: StoreError) -> Self {
        match err {
            StoreError::Invalid(message) => ApiError::bad_request("invalid_vote", message),
            other => {
                tracing::error!(error = %other, "vote store append failed");
                ApiError::new(
                    StatusCode::SERVICE_UNAVAILABLE,
                    "storage_unavailable",
                    other.to_string(),
                )
                .with_retry_after(1)
            }
        }
    }
}

impl From<MethodParseError> for ApiError {
    fn from(err: MethodParseError) -> Self {
        let code = match err {
            MethodParseError::UnknownMethod(_) => "unknown_method",
            MethodParseError::NoGroups => "missing_groups",
        };
        ApiError::bad_request(code, err.to_string())
    }
}

impl From<ForecastError> for ApiError {
    fn from(err: ForecastError) -> Self {
        let message = err.to_string();
        match err {
            ForecastError::UnknownGroup(_) => ApiError::bad_request("unknown_group", message),
            ForecastError::InsufficientPriorData => {
                ApiError::new(StatusCode::CONFLICT, "insufficient_prior_data", message)
            }
            ForecastError::MissingOfficialResults(_) => {
                ApiError::new(StatusCode::CONFLICT, "official_results_missing", message)
            }
            ForecastError::Apportion(ApportionError::EmptyElectorate) => {
                ApiError::new(StatusCode::CONFLICT, "no_votes", message)
            }
            ForecastError::Apportion(ApportionError::NoQualifyingParty) => {
                ApiError::new(StatusCode::CONFLICT, "no_qualifying_party", message)
            }
            ForecastError::Apportion(_) | ForecastError::Engine(_) => {
                tracing::error!(error = %message, "forecast failed");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "forecast_failed", message)
            }
        }
    }
}
