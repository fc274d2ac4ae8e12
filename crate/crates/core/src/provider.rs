//! Chat-completion providers.
//!
//! [`ChatProvider`] is the single seam between the engine and a language
//! model. [`ScriptedProvider`] replays canned responses for deterministic
//! runs; [`HttpProvider`] talks to any chat-completions style endpoint.

use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub speaker_label: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(speaker_label: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            speaker_label: speaker_label.into(),
            content: content.into(),
        }
    }

    pub fn render(&self) -> String {
        if self.speaker_label.is_empty() {
            self.content.clone()
        } else {
            format!("{}: {}", self.speaker_label, self.content)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_name: String,
}

impl ChatParams {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProviderError::InvalidParams(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(ProviderError::InvalidParams(
                "max_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ChatParams {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_AGENT_TEMPERATURE,
            max_tokens: 2048,
            model_name: String::new(),
        }
    }
}

pub const DEFAULT_AGENT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_CLASSIFIER_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub messages: Vec<ChatMessage>,
    pub params: ChatParams,
}

impl ChatRequest {
    /// The message list as plain lines, `Label: content` each.
    pub fn render_messages(&self) -> String {
        self.messages
            .iter()
            .map(ChatMessage::render)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("provider unavailable after {attempts} attempt(s): {reason}")]
    Unavailable { attempts: u32, reason: String },
    #[error("scripted provider has no matching response left")]
    ScriptExhausted,
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("invalid request parameters: {0}")]
    InvalidParams(String),
}

#[async_trait]
pub trait ChatProvider: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

/// One canned response. `when` / `unless` are substring tests over the
/// request's rendered message list (the system prompt is not searched).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unless: Option<String>,
    /// Repeating rules are never consumed.
    #[serde(default)]
    pub repeat: bool,
}

impl ScriptRule {
    pub fn once(response: impl Into<String>) -> Self {
        Self {
            response: response.into(),
            when: None,
            unless: None,
            repeat: false,
        }
    }

    pub fn always(response: impl Into<String>) -> Self {
        Self {
            repeat: true,
            ..Self::once(response)
        }
    }

    pub fn when(mut self, needle: impl Into<String>) -> Self {
        self.when = Some(needle.into());
        self
    }

    pub fn unless(mut self, needle: impl Into<String>) -> Self {
        self.unless = Some(needle.into());
        self
    }

    fn matches(&self, haystack: &str) -> bool {
        self.when.as_deref().is_none_or(|w| haystack.contains(w))
            && self.unless.as_deref().is_none_or(|u| !haystack.contains(u))
    }
}

/// Replays a queue of responses. Each call returns the first rule whose
/// predicate matches; non-repeating rules are consumed.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    rules: Mutex<Vec<ScriptRule>>,
    requests: Mutex<Vec<ChatRequest>>,
}

impl ScriptedProvider {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self {
            rules: Mutex::new(rules),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// A plain queue: each response is returned once, in order.
    pub fn from_responses<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(responses.into_iter().map(ScriptRule::once).collect())
    }

    /// Every request received so far, in call order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().expect("script lock poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.requests.lock().expect("script lock poisoned").len()
    }

    pub fn remaining(&self) -> usize {
        self.rules.lock().expect("script lock poisoned").len()
    }
}

#[async_trait]
impl ChatProvider for ScriptedProvider {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.params.validate()?;
        self.requests
            .lock()
            .expect("script lock poisoned")
            .push(request.clone());
        let haystack = request.render_messages();
        let mut rules = self.rules.lock().expect("script lock poisoned");
        let idx = rules
            .iter()
            .position(|r| r.matches(&haystack))
            .ok_or(ProviderError::ScriptExhausted)?;
        let text = if rules[idx].repeat {
            rules[idx].response.clone()
        } else {
            rules.remove(idx).response
        };
        let usage = Usage {
            prompt_tokens: approx_tokens(&request.system_prompt) + approx_tokens(&haystack),
            completion_tokens: approx_tokens(&text),
        };
        Ok(ChatResponse { text, usage })
    }
}

/// Whitespace word count; scripted runs report this as token usage.
fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff_ms: 1_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `n` (1-based retries), doubling each time.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64 << retry.saturating_sub(1).min(16);
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(factor))
    }
}

/// Client for an OpenAI-style `/chat/completions` endpoint.
pub struct HttpProvider {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl HttpProvider {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
    ) -> Self {
        Self {
            client: reqwest::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("reqwest client builds with static config"),
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn body(&self, request: &ChatRequest) -> serde_json::Value {
        let model = if request.params.model_name.is_empty() {
            &self.model
        } else {
            &request.params.model_name
        };
        let mut messages = Vec::new();
        if !request.system_prompt.is_empty() {
            messages.push(serde_json::json!({"role": "system", "content": request.system_prompt}));
        }
        for m in &request.messages {
            messages.push(serde_json::json!({"role": "user", "content": m.render()}));
        }
        serde_json::json!({
            "model": model,
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_tokens,
            "messages": messages,
        })
    }

    async fn attempt(&self, body: &serde_json::Value) -> Result<ChatResponse, Attempt> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(ProviderError::Unavailable {
                attempts: 0,
                reason: format!("HTTP {status}"),
            }));
        }
        let value: serde_json::Value = resp
            .json()
            .await
            .map_err(|e| Attempt::Fatal(ProviderError::MalformedResponse(e.to_string())))?;
        parse_completion(&value).map_err(Attempt::Fatal)
    }
}

enum Attempt {
    Retry(String),
    Fatal(ProviderError),
}

fn parse_completion(value: &serde_json::Value) -> Result<ChatResponse, ProviderError> {
    let text = value
        .pointer("/choices/0/message/content")
        .and_then(|v| v.as_str())
        .ok_or_else(|| {
            ProviderError::MalformedResponse("missing choices[0].message.content".into())
        })?;
    let usage = Usage {
        prompt_tokens: value
            .pointer("/usage/prompt_tokens")
            .and_then(|v| v.as_u64())
            .unwrap_or(0),
        completion_tokens: value
            .pointer("/usage/completion_tokens")
            .and_then(|v| v.as_u64())
            .unwrap_or(0),
    };
    Ok(ChatResponse {
        text: text.to_string(),
        usage,
    })
}

#[async_trait]
impl ChatProvider for HttpProvider {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.params.validate()?;
        let body = self.body(request);
        let attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for n in 1..=attempts {
            if n > 1 {
                tokio::time::sleep(self.retry.backoff(n - 1)).await;
            }
            match self.attempt(&body).await {
                Ok(resp) => return Ok(resp),
                Err(Attempt::Fatal(ProviderError::Unavailable { reason, .. })) => {
                    return Err(ProviderError::Unavailable {
                        attempts: n,
                        reason,
                    })
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(reason)) => {
                    tracing::warn!(attempt = n, %reason, "provider call failed");
                    last = reason;
                }
            }
        }
        Err(ProviderError::Unavailable {
            attempts,
            reason: last,
        })
    }
}
