//! Chat-completion providers.
//!
//! Everything that talks to an LLM goes through [`ChatProvider`]. Two
//! implementations ship here: [`RemoteProvider`] for OpenAI-compatible HTTP
//! endpoints and [`ScriptedProvider`], a deterministic replay of authored
//! responses used by tests and offline runs.

mod remote;
mod scripted;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use remote::{ProviderConfig, RemoteProvider};
pub use scripted::{ScriptEntry, ScriptedProvider, Matcher};

/// Temperature for open-ended dialogue turns.
pub const DIALOGUE_TEMPERATURE: f64 = 0.7;
/// Temperature for assessment and structured extraction calls.
pub const EXTRACTION_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;
pub const DEFAULT_MODEL: &str = "gpt-4";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: ChatRole::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: ChatRole::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: ChatRole::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>, temperature: f64) -> Self {
        Self { messages, model_id: DEFAULT_MODEL.to_string(), temperature, max_tokens: DEFAULT_MAX_TOKENS }
    }

    /// Single user message.
    pub fn user(prompt: impl Into<String>, temperature: f64) -> Self {
        Self::new(vec![ChatMessage::user(prompt)], temperature)
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        let first = self.messages.first().ok_or_else(|| ProviderError::InvalidRequest("no messages".into()))?;
        if first.role == ChatRole::Assistant {
            return Err(ProviderError::InvalidRequest("first message must be system or user".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProviderError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(ProviderError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn last_user_message(&self) -> Option<&str> {
        self.messages.iter().rev().find(|m| m.role == ChatRole::User).map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u32,
    pub completion: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    /// Wall-clock time of the successful attempt.
    pub latency_ms: u64,
    pub token_usage: Option<TokenUsage>,
    /// Attempts that failed before this one succeeded.
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited")]
    RateLimited,
    #[error("authentication failed: {0}")]
    AuthFailed(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server returned HTTP {status}")]
    Http { status: u16 },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("script exhausted")]
    ScriptExhausted,
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;

    fn name(&self) -> &str {
        "provider"
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for Arc<P> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).complete(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for Box<P> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).complete(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for &P {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).complete(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Sends `messages` and returns the reply text.
pub fn ask(provider: &dyn ChatProvider, messages: Vec<ChatMessage>, temperature: f64) -> Result<String, ProviderError> {
    provider.complete(&ChatRequest::new(messages, temperature)).map(|r| r.text)
}
