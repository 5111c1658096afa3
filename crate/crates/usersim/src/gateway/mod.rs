//! Uniform access to chat-completion providers.
//!
//! Three implementations of [`ChatGateway`]: an HTTP provider with retries
//! and bounded concurrency ([`http::HttpGateway`]), a fixture-backed mock
//! routed by request fingerprint ([`fixture::FixtureGateway`]), and a
//! scripted deterministic provider that synthesizes parseable replies for
//! every pipeline prompt so end-to-end runs work offline
//! ([`scripted::ScriptedGateway`]).

pub mod fixture;
pub mod http;
pub mod scripted;

pub use fixture::{FallbackPolicy, FixtureGateway};
pub use http::{HttpGateway, Transport, TransportError};
pub use scripted::ScriptedGateway;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub model_name: String,
    pub max_output: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<i64>,
}

impl ChatRequest {
    pub fn new(model_name: impl Into<String>, temperature: f64, messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            temperature,
            model_name: model_name.into(),
            max_output: 2048,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must be non-empty".into()));
        }
        if self.messages[0].role == Role::Assistant {
            return Err(GatewayError::InvalidRequest(
                "first message must be system or user".into(),
            ));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} out of [0,2]",
                self.temperature
            )));
        }
        if self.max_output == 0 {
            return Err(GatewayError::InvalidRequest("max_output must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Complete,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub usage: Usage,
}

impl ChatResponse {
    pub fn complete(content: impl Into<String>) -> Self {
        Self { content: content.into(), finish_reason: FinishReason::Complete, usage: Usage::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_backoff_ms: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the API key. Keys are never
    /// stored in config files.
    pub auth_env: String,
    pub max_concurrent: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    pub timeout_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            auth_env: "OPENAI_API_KEY".into(),
            max_concurrent: 8,
            retry: RetryPolicy::default(),
            timeout_ms: 60_000,
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("authentication failed")]
    Auth,
    #[error("all {attempts} attempts failed: {last}")]
    TimeoutExhausted { attempts: u32, last: String },
    #[error("no fixture for fingerprint {0}")]
    FixtureMiss(String),
    #[error("provider error: {0}")]
    Provider(String),
}

/// Shared chat-completion service. Safe for concurrent use; implementations
/// own their rate limiting.
pub trait ChatGateway: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// Stable fingerprint of a request: SHA-256 over the canonical JSON of
/// (messages, temperature, model_name, max_output). Used to route mock
/// fixtures and to assert prompt isolation between experiment arms.
pub fn fingerprint(request: &ChatRequest) -> String {
    #[derive(Serialize)]
    struct Canonical<'a> {
        messages: &'a [ChatMessage],
        temperature: f64,
        model_name: &'a str,
        max_output: u32,
    }
    let canonical = Canonical {
        messages: &request.messages,
        temperature: request.temperature,
        model_name: &request.model_name,
        max_output: request.max_output,
    };
    let bytes = serde_json::to_vec(&canonical).expect("canonical serialization");
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req() -> ChatRequest {
        ChatRequest::new(
            "test-model",
            0.7,
            vec![ChatMessage::system("sys"), ChatMessage::user("hi")],
        )
    }

    #[test]
    fn fingerprint_stable() {
        assert_eq!(fingerprint(&req()), fingerprint(&req()));
    }

    #[test]
    fn fingerprint_sensitive_to_message_order() {
        let a = req();
        let mut b = req();
        b.messages.swap(0, 1);
        assert_ne!(fingerprint(&a), fingerprint(&b));
    }

    #[test]
    fn fingerprint_sensitive_to_temperature() {
        let a = req();
        let mut b = req();
        b.temperature = 0.0;
        assert_ne!(fingerprint(&a), fingerprint(&b));
    }

    #[test]
    fn fingerprint_sensitive_to_model_and_content() {
        let a = req();
        let mut b = req();
        b.model_name = "other".into();
        assert_ne!(fingerprint(&a), fingerprint(&b));
        let mut c = req();
        c.messages[1].content = "hello".into();
        assert_ne!(fingerprint(&a), fingerprint(&c));
    }

    #[test]
    fn validation_rejects_bad_requests() {
        let mut r = req();
        r.messages.clear();
        assert!(r.validate().is_err());

        let mut r = req();
        r.temperature = 2.5;
        assert!(r.validate().is_err());

        let mut r = req();
        r.messages[0].role = Role::Assistant;
        r.messages[1].role = Role::Assistant;
        assert!(r.validate().is_err());

        assert!(req().validate().is_ok());
    }
}
