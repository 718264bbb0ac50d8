use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, ChatResponse, ProviderError};

/// How a script entry selects a request: `"*"` matches anything, any other
/// string matches when it is a substring of the last user message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Matcher {
    Any,
    Substring(String),
}

impl Matcher {
    pub fn parse(s: &str) -> Self {
        if s == "*" {
            Matcher::Any
        } else {
            Matcher::Substring(s.to_string())
        }
    }

    pub fn matches(&self, text: &str) -> bool {
        match self {
            Matcher::Any => true,
            Matcher::Substring(needle) => text.contains(needle.as_str()),
        }
    }
}

impl Serialize for Matcher {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Matcher::Any => s.serialize_str("*"),
            Matcher::Substring(n) => s.serialize_str(n),
        }
    }
}

impl<'de> Deserialize<'de> for Matcher {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Matcher::parse(&String::deserialize(d)?))
    }
}

/// Script file entry. `error` makes the call fail instead of answering
/// (`timeout`, `rate_limited`, `auth`, anything else is a transport error).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match")]
    pub matcher: Matcher,
    #[serde(default)]
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScriptEntry {
    pub fn new(matcher: &str, response: impl Into<String>) -> Self {
        Self { matcher: Matcher::parse(matcher), response: response.into(), error: None }
    }

    pub fn failing(matcher: &str, error: &str) -> Self {
        Self { matcher: Matcher::parse(matcher), response: String::new(), error: Some(error.to_string()) }
    }

    fn outcome(&self) -> Result<String, ProviderError> {
        match self.error.as_deref() {
            None => Ok(self.response.clone()),
            Some("timeout") => Err(ProviderError::Timeout),
            Some("rate_limited") => Err(ProviderError::RateLimited),
            Some("auth") => Err(ProviderError::AuthFailed("scripted".into())),
            Some(other) => Err(ProviderError::Transport(other.to_string())),
        }
    }
}

#[derive(Debug)]
struct Cursor {
    entries: Vec<ScriptEntry>,
    consumed: Vec<bool>,
    calls: Vec<ChatRequest>,
}

/// Deterministic provider replaying a script. Each entry answers at most one
/// call; the first unconsumed entry whose matcher accepts the last user
/// message wins.
#[derive(Debug)]
pub struct ScriptedProvider {
    cursor: Mutex<Cursor>,
}

impl ScriptedProvider {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        let consumed = vec![false; entries.len()];
        Self { cursor: Mutex::new(Cursor { entries, consumed, calls: Vec::new() }) }
    }

    /// Script of `(matcher, response)` pairs.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Self::new(pairs.into_iter().map(|(m, r)| ScriptEntry::new(m, r)).collect())
    }

    /// Loads a JSON array of `{"match": ..., "response": ...}` entries.
    pub fn from_file(path: &Path) -> Result<Self, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        let entries: Vec<ScriptEntry> = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self::new(entries))
    }

    pub fn remaining(&self) -> usize {
        let cursor = self.cursor.lock().unwrap_or_else(|e| e.into_inner());
        cursor.consumed.iter().filter(|c| !**c).count()
    }

    /// Requests seen so far, in call order.
    pub fn calls(&self) -> Vec<ChatRequest> {
        self.cursor.lock().unwrap_or_else(|e| e.into_inner()).calls.clone()
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let started = Instant::now();
        let mut cursor = self.cursor.lock().unwrap_or_else(|e| e.into_inner());
        cursor.calls.push(request.clone());
        let last = request.last_user_message().unwrap_or_default();
        let Cursor { entries, consumed, .. } = &mut *cursor;
        let slot = entries
            .iter()
            .zip(consumed.iter())
            .position(|(e, used)| !*used && e.matcher.matches(last))
            .ok_or(ProviderError::ScriptExhausted)?;
        consumed[slot] = true;
        let text = entries[slot].outcome()?;
        Ok(ChatResponse { text, latency_ms: started.elapsed().as_millis() as u64, token_usage: None, retries: 0 })
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ask(p: &ScriptedProvider, msg: &str) -> Result<String, ProviderError> {
        p.complete(&ChatRequest::user(msg, 0.2)).map(|r| r.text)
    }

    #[test]
    fn wildcard_identity() {
        let p = ScriptedProvider::from_pairs([("*", "hello")]);
        assert_eq!(ask(&p, "anything").unwrap(), "hello");
    }

    #[test]
    fn entries_consumed_in_order_then_exhausted() {
        let p = ScriptedProvider::from_pairs([("*", "a"), ("*", "b"), ("*", "c")]);
        assert_eq!(ask(&p, "1").unwrap(), "a");
        assert_eq!(ask(&p, "2").unwrap(), "b");
        assert_eq!(ask(&p, "3").unwrap(), "c");
        assert_eq!(ask(&p, "4"), Err(ProviderError::ScriptExhausted));
    }

    #[test]
    fn substring_routing_skips_non_matching_entries() {
        let p = ScriptedProvider::from_pairs([
            ("positive reinforcement", "Great start! How do you think verbal praise can impact Taylor's motivation?"),
            ("*", "fallback"),
        ]);
        assert_eq!(ask(&p, "unrelated").unwrap(), "fallback");
        let reply = ask(&p, "learner mentioned positive reinforcement").unwrap();
        assert!(reply.starts_with("Great start!"));
        assert_eq!(p.remaining(), 0);
    }

    #[test]
    fn scripted_errors() {
        let p = ScriptedProvider::new(vec![ScriptEntry::failing("*", "timeout"), ScriptEntry::failing("*", "boom")]);
        assert_eq!(ask(&p, "x"), Err(ProviderError::Timeout));
        assert_eq!(ask(&p, "x"), Err(ProviderError::Transport("boom".into())));
    }

    #[test]
    fn identical_sequences_identical_responses() {
        let script = || ScriptedProvider::from_pairs([("b", "1"), ("*", "2"), ("a", "3")]);
        let run = |p: ScriptedProvider| ["a", "b", "a"].map(|m| ask(&p, m));
        assert_eq!(run(script()), run(script()));
    }

    #[test]
    fn script_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.json");
        std::fs::write(&path, r#"[{"match":"*","response":"hi"},{"match":"x","error":"rate_limited"}]"#).unwrap();
        let p = ScriptedProvider::from_file(&path).unwrap();
        assert_eq!(ask(&p, "x").unwrap(), "hi");
        assert_eq!(ask(&p, "x"), Err(ProviderError::RateLimited));
    }
}
