//! OpenAI-compatible chat-completion client with retries and a shared in-flight limit.

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use url::Url;

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
const BODY_EXCERPT_CHARS: usize = 300;

fn default_timeout() -> u64 {
    60
}

fn default_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    1000
}

/// Where and how to reach one model.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// Display name used in reports; defaults to the model name.
    #[serde(default)]
    pub name: String,
    pub base_url: String,
    #[serde(alias = "model_name")]
    pub model: String,
    /// Never serialized, so it never reaches result files or config hashes.
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_seconds: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
    /// Forwarded as the request `seed` for servers that support seeded sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl fmt::Debug for EndpointConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EndpointConfig")
            .field("name", &self.name)
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("timeout_seconds", &self.timeout_seconds)
            .field("max_retries", &self.max_retries)
            .field("temperature", &self.temperature)
            .field("backoff_base_ms", &self.backoff_base_ms)
            .field("system_prompt", &self.system_prompt)
            .field("seed", &self.seed)
            .finish()
    }
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        let model = model.into();
        EndpointConfig {
            name: model.clone(),
            base_url: base_url.into(),
            model,
            api_key: None,
            timeout_seconds: default_timeout(),
            max_retries: default_retries(),
            temperature: 0.0,
            backoff_base_ms: default_backoff_ms(),
            system_prompt: None,
            seed: None,
        }
    }

    /// Reads FORGE_API_BASE, FORGE_MODEL and FORGE_API_KEY.
    pub fn from_env() -> Result<Self, ClientError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let base = var("FORGE_API_BASE").ok_or_else(|| ClientError::Config("FORGE_API_BASE is not set".into()))?;
        let model = var("FORGE_MODEL").ok_or_else(|| ClientError::Config("FORGE_MODEL is not set".into()))?;
        let mut cfg = EndpointConfig::new(base, model);
        cfg.api_key = var("FORGE_API_KEY");
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fills an empty name from the model and an absent key from FORGE_API_KEY.
    pub fn with_env_defaults(mut self) -> Self {
        if self.name.is_empty() {
            self.name = self.model.clone();
        }
        if self.api_key.is_none() {
            self.api_key = std::env::var("FORGE_API_KEY").ok().filter(|v| !v.is_empty());
        }
        self
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let url =
            Url::parse(&self.base_url).map_err(|e| ClientError::Config(format!("base_url {}: {e}", self.base_url)))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(ClientError::Config(format!(
                "base_url {} must be http or https",
                self.base_url
            )));
        }
        if self.model.trim().is_empty() {
            return Err(ClientError::Config("model must not be empty".into()));
        }
        if self.timeout_seconds == 0 {
            return Err(ClientError::Config("timeout_seconds must be positive".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ClientError::Config("temperature must be a finite value >= 0".into()));
        }
        Ok(())
    }

    /// `{base_url}/chat/completions`. The base is expected to carry the API version segment,
    /// e.g. `https://host/v1`.
    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub request_id: String,
    pub request_messages: Vec<ChatMessage>,
    pub response_text: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("request {request_id}: transport failure after {attempts} attempt(s): {message}")]
    Transport {
        request_id: String,
        attempts: u32,
        message: String,
    },
    #[error("request {request_id}: protocol error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Protocol {
        request_id: String,
        attempts: u32,
        status: Option<u16>,
        message: String,
    },
}

impl ClientError {
    pub fn request_id(&self) -> Option<&str> {
        match self {
            ClientError::Transport { request_id, .. } | ClientError::Protocol { request_id, .. } => Some(request_id),
            _ => None,
        }
    }

    /// The failure without its request id, for output that must not vary between runs.
    pub fn detail(&self) -> String {
        match self {
            ClientError::Transport { attempts, message, .. } => {
                format!("transport failure after {attempts} attempt(s): {message}")
            }
            ClientError::Protocol {
                status: Some(s),
                message,
                ..
            } => format!("HTTP {s}: {message}"),
            ClientError::Protocol { message, .. } => message.clone(),
            other => other.to_string(),
        }
    }

    pub fn attempts(&self) -> u32 {
        match self {
            ClientError::Transport { attempts, .. } | ClientError::Protocol { attempts, .. } => *attempts,
            _ => 0,
        }
    }
}

/// Exponential backoff with bounded upward jitter.
///
/// Retry `k` waits `base * 2^k * (1 + j)` with `j` in `[0, 0.25)`. Since the jittered upper
/// bound of retry `k` is below the floor of retry `k + 1`, delays never decrease.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub base: Duration,
    pub jitter: f64,
}

impl Backoff {
    pub fn new(base: Duration) -> Self {
        Backoff { base, jitter: 0.25 }
    }

    /// `unit` is a jitter draw in `[0, 1)`.
    pub fn delay(&self, retry: u32, unit: f64) -> Duration {
        let factor = 2f64.powi(retry.min(30) as i32) * (1.0 + self.jitter * unit.clamp(0.0, 1.0 - f64::EPSILON));
        self.base.mul_f64(factor)
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    stream: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    #[serde(default)]
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(Option<u16>, String),
}

/// Shareable client. Clones share the HTTP connection pool and the in-flight limit.
#[derive(Debug, Clone)]
pub struct ChatClient {
    http: reqwest::Client,
    limiter: Arc<Semaphore>,
}

impl Default for ChatClient {
    fn default() -> Self {
        ChatClient::new(DEFAULT_MAX_IN_FLIGHT)
    }
}

impl ChatClient {
    pub fn new(max_in_flight: usize) -> Self {
        ChatClient {
            http: reqwest::Client::new(),
            limiter: Arc::new(Semaphore::new(max_in_flight.max(1))),
        }
    }

    pub async fn chat_complete(
        &self,
        config: &EndpointConfig,
        messages: Vec<ChatMessage>,
    ) -> Result<ChatExchange, ClientError> {
        config.validate()?;
        match messages.last() {
            None => return Err(ClientError::InvalidRequest("messages must not be empty".into())),
            Some(m) if m.role != Role::User => {
                return Err(ClientError::InvalidRequest("last message must have role user".into()))
            }
            _ => {}
        }
        let request_id = format!("req-{}", uuid::Uuid::new_v4().simple());
        let url = config.completions_url();
        let body = serde_json::to_vec(&CompletionRequest {
            model: &config.model,
            messages: &messages,
            temperature: config.temperature,
            stream: false,
            seed: config.seed,
        })
        .expect("request body serializes");
        let backoff = Backoff::new(Duration::from_millis(config.backoff_base_ms));
        let started = Instant::now();
        let mut attempts = 0;
        loop {
            attempts += 1;
            tracing::debug!(%request_id, %url, model = %config.model, attempt = attempts, "chat completion request");
            tracing::trace!(%request_id, body = %String::from_utf8_lossy(&body), "request body");
            let outcome = {
                let _permit = self.limiter.acquire().await.expect("limiter never closed");
                self.attempt(config, &url, body.clone()).await
            };
            match outcome {
                Attempt::Done(text) => {
                    return Ok(ChatExchange {
                        request_id,
                        request_messages: messages,
                        response_text: text,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempt_count: attempts,
                    })
                }
                Attempt::Fatal(status, message) => {
                    tracing::warn!(%request_id, ?status, "chat completion rejected");
                    return Err(ClientError::Protocol {
                        request_id,
                        attempts,
                        status,
                        message,
                    });
                }
                Attempt::Retry(message) if attempts > config.max_retries => {
                    tracing::warn!(%request_id, attempts, %message, "chat completion failed");
                    return Err(ClientError::Transport {
                        request_id,
                        attempts,
                        message,
                    });
                }
                Attempt::Retry(message) => {
                    let delay = backoff.delay(attempts - 1, rand::rng().random::<f64>());
                    tracing::info!(%request_id, attempt = attempts, ?delay, %message, "retrying chat completion");
                    tokio::time::sleep(delay).await;
                }
            }
        }
    }

    async fn attempt(&self, config: &EndpointConfig, url: &str, body: Vec<u8>) -> Attempt {
        let mut req = self
            .http
            .post(url)
            .timeout(Duration::from_secs(config.timeout_seconds))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body);
        if let Some(key) = &config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status();
        let text = match resp.text().await {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(format!("reading body: {e}")),
        };
        if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            return Attempt::Retry(format!(
                "HTTP {}: {}",
                status.as_u16(),
                forge_core::instruct::excerpt(&text, BODY_EXCERPT_CHARS)
            ));
        }
        if !status.is_success() {
            return Attempt::Fatal(
                Some(status.as_u16()),
                forge_core::instruct::excerpt(&text, BODY_EXCERPT_CHARS),
            );
        }
        let parsed: CompletionResponse = match serde_json::from_str(&text) {
            Ok(p) => p,
            Err(e) => {
                return Attempt::Fatal(
                    Some(status.as_u16()),
                    format!(
                        "unreadable completion body ({e}): {}",
                        forge_core::instruct::excerpt(&text, BODY_EXCERPT_CHARS)
                    ),
                )
            }
        };
        match parsed.choices.into_iter().next() {
            Some(choice) => Attempt::Done(choice.message.content.unwrap_or_default()),
            None => Attempt::Fatal(Some(status.as_u16()), "response has no choices".into()),
        }
    }
}
