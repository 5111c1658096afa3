//! HTTP provider with retries, exponential backoff, and bounded concurrency.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::{
    ChatGateway, ChatRequest, ChatResponse, FinishReason, GatewayError, ProviderConfig, Role, Usage,
};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("request timed out")]
    Timeout,
}

/// Wire-level POST, pluggable so retry behavior is testable without a server.
pub trait Transport: Send + Sync {
    fn post(
        &self,
        url: &str,
        bearer: &str,
        body: &Value,
        timeout: Duration,
    ) -> Result<(u16, String), TransportError>;
}

/// Production transport over a blocking HTTP client.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Self {
        Self { client: reqwest::blocking::Client::new() }
    }
}

impl Default for ReqwestTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for ReqwestTransport {
    fn post(
        &self,
        url: &str,
        bearer: &str,
        body: &Value,
        timeout: Duration,
    ) -> Result<(u16, String), TransportError> {
        let response = self
            .client
            .post(url)
            .bearer_auth(bearer)
            .timeout(timeout)
            .json(body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout
                } else {
                    TransportError::Connect(e.to_string())
                }
            })?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|e| TransportError::Connect(e.to_string()))?;
        Ok((status, text))
    }
}

// Counting semaphore; blocking acquire matches the gateway's blocking call
// semantics.
struct Semaphore {
    permits: Mutex<usize>,
    cond: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self { permits: Mutex::new(permits), cond: Condvar::new() }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cond.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { sem: self }
    }

    fn release(&self) {
        *self.permits.lock().unwrap() += 1;
        self.cond.notify_one();
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        self.sem.release();
    }
}

/// OpenAI-compatible chat-completions provider.
pub struct HttpGateway<T: Transport> {
    config: ProviderConfig,
    transport: T,
    semaphore: Semaphore,
    api_key: String,
}

impl HttpGateway<ReqwestTransport> {
    pub fn from_config(config: ProviderConfig) -> Result<Self, GatewayError> {
        let api_key = std::env::var(&config.auth_env).map_err(|_| GatewayError::Auth)?;
        Ok(Self::with_transport(config, ReqwestTransport::new(), api_key))
    }
}

impl<T: Transport> HttpGateway<T> {
    pub fn with_transport(config: ProviderConfig, transport: T, api_key: String) -> Self {
        let semaphore = Semaphore::new(config.max_concurrent.max(1));
        Self { config, transport, semaphore, api_key }
    }

    fn body(request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                json!({"role": role, "content": m.content})
            })
            .collect();
        let mut body = json!({
            "model": request.model_name,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn parse_response(text: &str) -> Result<ChatResponse, GatewayError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| GatewayError::Provider(format!("bad response JSON: {e}")))?;
        let choice = value["choices"]
            .get(0)
            .ok_or_else(|| GatewayError::Provider("no choices in response".into()))?;
        let content = choice["message"]["content"].as_str().unwrap_or_default().to_string();
        let finish_reason = match choice["finish_reason"].as_str() {
            Some("length") => FinishReason::Length,
            Some("stop") | None => FinishReason::Complete,
            Some(_) => FinishReason::Error,
        };
        if finish_reason == FinishReason::Complete && content.is_empty() {
            return Err(GatewayError::Provider("empty content on complete".into()));
        }
        let usage = Usage {
            prompt_tokens: value["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: value["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        };
        Ok(ChatResponse { content, finish_reason, usage })
    }

    fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.config.retry.base_backoff_ms.saturating_mul(1 << attempt.min(10)))
    }
}

impl<T: Transport> ChatGateway for HttpGateway<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let _permit = self.semaphore.acquire();
        let body = Self::body(request);
        let timeout = Duration::from_millis(self.config.timeout_ms);
        let max_attempts = self.config.retry.max_attempts.max(1);
        let mut last_error = String::new();

        for attempt in 0..max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            match self.transport.post(&self.config.endpoint, &self.api_key, &body, timeout) {
                Ok((status, text)) => match status {
                    200 => return Self::parse_response(&text),
                    401 | 403 => return Err(GatewayError::Auth),
                    429 | 500..=599 => {
                        last_error = format!("HTTP {status}");
                    }
                    other => {
                        return Err(GatewayError::Provider(format!("HTTP {other}: {text}")));
                    }
                },
                Err(e) => {
                    last_error = e.to_string();
                }
            }
        }
        Err(GatewayError::TimeoutExhausted { attempts: max_attempts, last: last_error })
    }
}
