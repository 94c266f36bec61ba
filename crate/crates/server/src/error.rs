use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use storyroom_core::provider::ProviderError;
use storyroom_core::room::RoomError;
use storyroom_core::story::StoryError;
use storyroom_core::summarizer::SummarizeError;

use crate::store::StoreError;

/// Error body: `{"error": "<code>", "message": "..."}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: &'a str,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn unauthorized(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", message)
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, "forbidden", message)
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_input", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code,
            message: &self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

fn provider_error(e: ProviderError) -> ApiError {
    let status = match e {
        ProviderError::Timeout => StatusCode::GATEWAY_TIMEOUT,
        _ => StatusCode::BAD_GATEWAY,
    };
    ApiError::new(status, "provider_error", e.to_string())
}

impl From<ProviderError> for ApiError {
    fn from(e: ProviderError) -> Self {
        provider_error(e)
    }
}

impl From<SummarizeError> for ApiError {
    fn from(e: SummarizeError) -> Self {
        match e {
            SummarizeError::Provider(p) => provider_error(p),
            SummarizeError::EmptySegment => ApiError::invalid(e.to_string()),
            _ => ApiError::new(StatusCode::BAD_GATEWAY, "bad_completion", e.to_string()),
        }
    }
}

pub(crate) fn room_error(e: RoomError) -> ApiError {
    use RoomError::*;
    let message = e.to_string();
    match e {
        UnknownParticipant(_) => ApiError::not_found(message),
        NotDesigner | NotPlayer => ApiError::forbidden(message),
        NotYourTurnPhase
        | OutOfOrder { .. }
        | AwaitingPlayerTurn
        | NoPendingTurn
        | NoGenerationInFlight
        | ControlLocked
        | EventAlreadyPlayed(_) => ApiError::new(StatusCode::CONFLICT, "conflict", message),
        InvalidPlot
        | EmptyTurn
        | UnknownNpc(_)
        | IndexOutOfRange { .. }
        | InvalidTurnRef(_)
        | UnknownLabel(_) => ApiError::invalid(message),
        Provider(p) => provider_error(p),
        Summarize(s) => s.into(),
        EmptyCompletion | ParseFailure => {
            ApiError::new(StatusCode::BAD_GATEWAY, "bad_completion", message)
        }
    }
}

impl From<StoryError> for ApiError {
    fn from(e: StoryError) -> Self {
        let message = e.to_string();
        match e {
            StoryError::IndexOutOfRange { .. }
            | StoryError::NotInitialized
            | StoryError::PartialKindMismatch { .. } => ApiError::invalid(message),
            StoryError::EditsArchivedContent { .. } => {
                ApiError::new(StatusCode::CONFLICT, "conflict", message)
            }
            StoryError::Provider(p) => provider_error(p),
            StoryError::Summarize(s) => s.into(),
            StoryError::EmptyCompletion | StoryError::ParseFailure(_) => {
                ApiError::new(StatusCode::BAD_GATEWAY, "bad_completion", message)
            }
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::NotFound { .. } => ApiError::not_found(message),
            StoreError::InvalidId(_) => ApiError::invalid(message),
            StoreError::CorruptSnapshot { .. } => ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "corrupt_snapshot",
                message,
            ),
            StoreError::Io(_) => ApiError::internal(message),
        }
    }
}
