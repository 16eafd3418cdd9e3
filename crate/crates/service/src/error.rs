use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Request};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use pilar_core::detect::DetectError;
use pilar_core::explanation::ExplainError;
use pilar_core::Violation;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::persist::{CommitError, PersistError};
use crate::state::ApplyError;

/// Error body shared by every endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_step: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_after_ms: Option<u64>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: Box<ErrorBody>,
}

impl ApiError {
    pub fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: Box::new(ErrorBody {
                error: error.to_string(),
                message: message.into(),
                violations: Vec::new(),
                missing_step: None,
                fallback: None,
                retry_after_ms: None,
            }),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn validation(violations: Vec<Violation>) -> Self {
        let mut e = Self::new(StatusCode::BAD_REQUEST, "validation", "request failed validation");
        e.body.violations = violations;
        e
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn out_of_order(step: &str) -> Self {
        let mut e = Self::new(StatusCode::CONFLICT, "out_of_order", format!("{step} required first"));
        e.body.missing_step = Some(step.to_string());
        e
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(*self.body)).into_response()
    }
}

impl From<ApplyError> for ApiError {
    fn from(e: ApplyError) -> Self {
        match &e {
            ApplyError::UnknownProfile(_) | ApplyError::UnknownSession(_) | ApplyError::UnknownRecipe(_) => {
                ApiError::not_found(e.to_string())
            }
            ApplyError::DuplicateSession(_) => ApiError::new(StatusCode::CONFLICT, "conflict", e.to_string()),
            ApplyError::OutOfOrder { step } => ApiError::out_of_order(step),
            ApplyError::Rank(_) => ApiError::internal(e.to_string()),
        }
    }
}

impl From<PersistError> for ApiError {
    fn from(e: PersistError) -> Self {
        tracing::error!(error = %e, "event log failure");
        ApiError::internal(e.to_string())
    }
}

impl From<CommitError> for ApiError {
    fn from(e: CommitError) -> Self {
        match e {
            CommitError::Rejected(e) => e.into(),
            CommitError::Persist(e) => e.into(),
        }
    }
}

impl From<ExplainError> for ApiError {
    fn from(e: ExplainError) -> Self {
        let message = e.to_string();
        match &e {
            ExplainError::UnknownRecipeInSession(_) => ApiError::not_found(message),
            ExplainError::EmptyQuery | ExplainError::UnknownStrategy(_) => ApiError::bad_request(message),
            ExplainError::MissingSlot(_) => {
                let mut err = ApiError::out_of_order("detect");
                err.body.message = format!("{message}; detect ingredients first");
                err
            }
            ExplainError::Llm(_) => {
                let mut err = ApiError::new(StatusCode::BAD_GATEWAY, "llm_unavailable", message);
                err.body.fallback = e.fallback_hint().map(str::to_string);
                err
            }
            _ => ApiError::internal(message),
        }
    }
}

impl From<DetectError> for ApiError {
    fn from(e: DetectError) -> Self {
        let message = e.to_string();
        match e {
            DetectError::FixtureNotFound(_) => ApiError::not_found(message),
            DetectError::BadThreshold(_) | DetectError::UnsupportedSource(_) => ApiError::bad_request(message),
            DetectError::RemoteDetectorUnavailable { retry_after_ms, .. } => {
                let mut err = ApiError::new(StatusCode::BAD_GATEWAY, "detector_unavailable", message);
                err.body.retry_after_ms = Some(retry_after_ms);
                err.body.fallback = Some("use a fixture scene or send an ingredient list to /recommend".into());
                err
            }
            DetectError::BadFixture { .. } => ApiError::internal(message),
        }
    }
}

/// `Json` extractor whose rejections use [`ErrorBody`].
pub struct JsonBody<T>(pub T);

impl<S, T> FromRequest<S> for JsonBody<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(JsonBody(v)),
            Err(rejection) => Err(ApiError::bad_request(match rejection {
                JsonRejection::JsonDataError(e) => e.body_text(),
                other => other.body_text(),
            })),
        }
    }
}
