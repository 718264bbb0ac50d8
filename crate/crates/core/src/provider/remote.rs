use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, ChatResponse, ProviderError, TokenUsage, DEFAULT_MODEL};

pub const MAX_RETRIES_LIMIT: u32 = 3;

/// Connection settings for an OpenAI-compatible endpoint.
///
/// `api_key_ref` names the environment variable holding the key; the key
/// itself is read per call and never stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_ref: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: DEFAULT_MODEL.into(),
            api_key_ref: "OPENAI_API_KEY".into(),
            timeout_ms: 60_000,
            max_retries: 2,
            backoff_base_ms: 500,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.timeout_ms == 0 {
            return Err(ProviderError::InvalidRequest("timeout_ms must be positive".into()));
        }
        if self.max_retries > MAX_RETRIES_LIMIT {
            return Err(ProviderError::InvalidRequest(format!("max_retries must be at most {MAX_RETRIES_LIMIT}")));
        }
        Ok(())
    }

    /// Reads a TOML file with keys `base_url`, `model`, `timeout_ms`,
    /// `max_retries` and `api_key_ref`; absent keys keep their defaults.
    pub fn from_toml_file(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path).map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
        let config: Self = toml::from_str(&text).map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    fn api_key(&self) -> Result<String, ProviderError> {
        match std::env::var(&self.api_key_ref) {
            Ok(key) if !key.trim().is_empty() => Ok(key),
            _ => Err(ProviderError::AuthFailed(format!("environment variable {} is not set", self.api_key_ref))),
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.backoff_base_ms.saturating_mul(1 << attempt.min(16)))
    }
}

/// Blocking client for `POST {base_url}/chat/completions`.
#[derive(Debug, Clone)]
pub struct RemoteProvider {
    config: ProviderConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Done(ChatResponse),
    Retry(ProviderError),
    Fatal(ProviderError),
}

impl RemoteProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, agent })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let model = if request.model_id.is_empty() || request.model_id == DEFAULT_MODEL {
            self.config.model.as_str()
        } else {
            request.model_id.as_str()
        };
        json!({
            "model": model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }

    fn attempt(&self, key: &str, body: &Value) -> Attempt {
        let started = Instant::now();
        let result = self
            .agent
            .post(&self.endpoint())
            .header("Authorization", &format!("Bearer {key}"))
            .send_json(body);
        let mut response = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retry(ProviderError::Timeout),
            Err(e) => return Attempt::Retry(ProviderError::Transport(e.to_string())),
        };
        let status = response.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Attempt::Fatal(ProviderError::AuthFailed(format!("HTTP {status}"))),
            429 => return Attempt::Retry(ProviderError::RateLimited),
            500..=599 => return Attempt::Retry(ProviderError::Http { status }),
            _ => return Attempt::Fatal(ProviderError::Http { status }),
        }
        let payload: Value = match response.body_mut().read_json() {
            Ok(v) => v,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retry(ProviderError::Timeout),
            Err(e) => return Attempt::Fatal(ProviderError::MalformedResponse(e.to_string())),
        };
        let latency_ms = started.elapsed().as_millis() as u64;
        match parse_completion(&payload) {
            Ok((text, token_usage)) => Attempt::Done(ChatResponse { text, latency_ms, token_usage, retries: 0 }),
            Err(e) => Attempt::Fatal(e),
        }
    }
}

fn parse_completion(payload: &Value) -> Result<(String, Option<TokenUsage>), ProviderError> {
    let text = payload
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ProviderError::MalformedResponse("missing choices[0].message.content".into()))?
        .to_string();
    let usage = payload.get("usage").and_then(|u| {
        Some(TokenUsage {
            prompt: u.get("prompt_tokens")?.as_u64()? as u32,
            completion: u.get("completion_tokens")?.as_u64()? as u32,
        })
    });
    Ok((text, usage))
}

impl ChatProvider for RemoteProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let key = self.config.api_key()?;
        let body = self.body(request);
        let mut attempt = 0;
        loop {
            match self.attempt(&key, &body) {
                Attempt::Done(mut response) => {
                    response.retries = attempt;
                    return Ok(response);
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) if attempt >= self.config.max_retries => return Err(e),
                Attempt::Retry(e) => {
                    tracing::warn!(attempt, error = %e, "retrying chat completion");
                    std::thread::sleep(self.config.backoff(attempt));
                    attempt += 1;
                }
            }
        }
    }

    fn name(&self) -> &str {
        "remote"
    }
}
