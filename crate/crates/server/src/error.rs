use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use socratic_core::dialogue::DialogueError;
use socratic_core::prompt::PromptError;
use socratic_core::scenario::ScenarioError;
use socratic_core::store::StoreError;
use socratic_core::survey::SurveyError;

/// Every code the API can return, with its status.
pub const ERROR_CODES: [(&str, u16); 16] = [
    ("BadRequest", 400),
    ("OutOfRange", 400),
    ("InvalidSpec", 400),
    ("IncompleteSelection", 400),
    ("InvalidPedagogy", 400),
    ("NotFound", 404),
    ("SessionEnded", 409),
    ("NotAwaitingResponse", 409),
    ("Busy", 409),
    ("Precondition", 409),
    ("ExtractionFailed", 422),
    ("NoJsonFound", 422),
    ("InvalidOpeningQuestion", 422),
    ("ProviderError", 502),
    ("CorruptRecord", 500),
    ("Internal", 500),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

#[derive(Serialize)]
struct Body<'a> {
    code: &'a str,
    message: &'a str,
}

impl ApiError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        let status = ERROR_CODES
            .iter()
            .find(|(c, _)| *c == code)
            .map(|(_, s)| StatusCode::from_u16(*s).expect("valid status"))
            .unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        Self { status, code, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new("BadRequest", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new("NotFound", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new("Internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(Body { code: self.code, message: &self.message });
        (self.status, body).into_response()
    }
}

impl From<ScenarioError> for ApiError {
    fn from(e: ScenarioError) -> Self {
        let code = match &e {
            ScenarioError::IncompleteSelection(_) => "IncompleteSelection",
            ScenarioError::InvalidPedagogy(_) => "InvalidPedagogy",
            ScenarioError::InvalidSpec(_) => "InvalidSpec",
            ScenarioError::Precondition(_) => "Precondition",
            ScenarioError::Provider(_) => "ProviderError",
            ScenarioError::ExtractionFailed(_) => "ExtractionFailed",
            ScenarioError::NoJsonFound => "NoJsonFound",
            ScenarioError::Prompt(PromptError::NoJsonFound) => "NoJsonFound",
            ScenarioError::Prompt(_) => "Internal",
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<DialogueError> for ApiError {
    fn from(e: DialogueError) -> Self {
        let code = match &e {
            DialogueError::SessionEnded => "SessionEnded",
            DialogueError::NotAwaitingResponse => "NotAwaitingResponse",
            DialogueError::InvalidOpeningQuestion(_) => "InvalidOpeningQuestion",
            DialogueError::InvalidSpec(_) => "InvalidSpec",
            DialogueError::Provider(_) => "ProviderError",
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<SurveyError> for ApiError {
    fn from(e: SurveyError) -> Self {
        let code = match &e {
            SurveyError::OutOfRange { .. } => "OutOfRange",
            SurveyError::MissingParticipant => "BadRequest",
            SurveyError::EmptyDataset => "Precondition",
            SurveyError::Provider(_) => "ProviderError",
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownScenario(_) | StoreError::UnknownSession(_) => ApiError::not_found(e.to_string()),
            StoreError::CorruptRecord { .. } => ApiError::new("CorruptRecord", e.to_string()),
            StoreError::Survey(s) => s.into(),
            StoreError::Io(_) => ApiError::internal(e.to_string()),
        }
    }
}
