//! Chat-completion and embedding backends.
//!
//! [`Provider`] is the only surface the pipeline talks to. Two families of
//! implementations exist: [`HttpProvider`] for OpenAI-compatible endpoints,
//! and [`SimProvider`] which pairs a deterministic hash embedder with a
//! scripted [`Responder`] (a fixture rulebook or a scenario-backed model).

mod cache;
mod http;
mod sim;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Embedding;

pub use cache::EmbeddingCache;
pub use http::HttpProvider;
pub use sim::{HashEmbedder, Responder, Rule, RuleMatch, Rulebook, SimProvider};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("request timed out")]
    Timeout,
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed provider response: {0}")]
    Parse(String),
    #[error("structured output violated schema `{schema}`: {detail}")]
    Schema { schema: String, detail: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("partial response: expected {expected} items, got {got}")]
    Partial { expected: usize, got: usize },
    #[error("no simulator rule matched the request")]
    NoRule,
    #[error("embedding cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
}

impl ProviderError {
    /// Transient failures worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Timeout | ProviderError::Transport(_) => true,
            ProviderError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Identifiers for the structured outputs the pipeline requests.
pub mod schema {
    pub const TEMPLATING: &str = "templating.entities";
    pub const VERDICT: &str = "labeling.verdict";
    pub const TEMPLATES: &str = "generation.templates";
    pub const COMBINED: &str = "generation.combined";
    pub const ATTRIBUTION: &str = "generation.attribution";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_instructions: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_schema: Option<String>,
    #[serde(default)]
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(system_instructions: impl Into<String>, user: impl Into<String>) -> Self {
        ChatRequest {
            system_instructions: system_instructions.into(),
            messages: vec![ChatMessage::user(user)],
            response_schema: None,
            temperature: 0.0,
        }
    }

    pub fn with_schema(mut self, schema: &str) -> Self {
        self.response_schema = Some(schema.to_string());
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.messages.is_empty() {
            return Err(ProviderError::InvalidRequest("messages must not be empty".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ProviderError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }

    /// The last user message, which carries the task payload.
    pub fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    /// Every message concatenated, used for transcripts and rule matching.
    pub fn full_text(&self) -> String {
        let mut out = self.system_instructions.clone();
        for m in &self.messages {
            out.push('\n');
            out.push_str(&m.content);
        }
        out
    }
}

pub trait Provider: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError>;

    /// One normalized vector per input, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError>;

    fn health(&self) -> Result<(), ProviderError> {
        Ok(())
    }
}

impl<P: Provider + ?Sized> Provider for Arc<P> {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        (**self).chat(req)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        (**self).embed(texts)
    }

    fn health(&self) -> Result<(), ProviderError> {
        (**self).health()
    }
}

impl<P: Provider + ?Sized> Provider for &P {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        (**self).chat(req)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        (**self).embed(texts)
    }

    fn health(&self) -> Result<(), ProviderError> {
        (**self).health()
    }
}

/// Embeds a single text.
pub fn embed_one(provider: &dyn Provider, text: &str) -> Result<Embedding, ProviderError> {
    let mut out = provider.embed(&[text.to_string()])?;
    match out.len() {
        1 => Ok(out.remove(0)),
        got => Err(ProviderError::Partial { expected: 1, got }),
    }
}

pub(crate) fn check_embed_input(texts: &[String]) -> Result<(), ProviderError> {
    if texts.is_empty() {
        return Err(ProviderError::InvalidRequest("no texts to embed".into()));
    }
    if texts.iter().any(|t| t.trim().is_empty()) {
        return Err(ProviderError::InvalidRequest("cannot embed an empty text".into()));
    }
    Ok(())
}

/// Connection settings for an OpenAI-compatible endpoint.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub base_url: String,
    #[serde(default)]
    pub api_key: String,
    pub chat_model: String,
    pub embedding_model: String,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    pub max_retries: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub temperature: f64,
    /// Base delay of the exponential backoff.
    #[serde(default = "default_backoff", with = "duration_millis")]
    pub backoff: Duration,
}

fn default_in_flight() -> usize {
    8
}

fn default_backoff() -> Duration {
    Duration::from_millis(250)
}

impl std::fmt::Debug for ProviderConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProviderConfig")
            .field("base_url", &self.base_url)
            .field("api_key", &"<redacted>")
            .field("chat_model", &self.chat_model)
            .field("embedding_model", &self.embedding_model)
            .field("timeout", &self.timeout)
            .field("max_retries", &self.max_retries)
            .field("max_in_flight", &self.max_in_flight)
            .finish()
    }
}

impl ProviderConfig {
    pub const API_KEY_ENV: &'static str = "QSUGGEST_API_KEY";

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.max_retries > 10 {
            return Err(ProviderError::InvalidRequest("max_retries must be <= 10".into()));
        }
        if self.timeout.is_zero() {
            return Err(ProviderError::InvalidRequest("timeout must be > 0".into()));
        }
        if self.max_in_flight == 0 {
            return Err(ProviderError::InvalidRequest("max_in_flight must be > 0".into()));
        }
        url_ok(&self.base_url)
    }

    /// Replaces the key with `QSUGGEST_API_KEY` (or `OPENAI_API_KEY`) when set.
    pub fn with_env_key(mut self) -> Self {
        for var in [Self::API_KEY_ENV, "OPENAI_API_KEY"] {
            if let Ok(key) = std::env::var(var) {
                if !key.is_empty() {
                    self.api_key = key;
                    break;
                }
            }
        }
        self
    }
}

fn url_ok(url: &str) -> Result<(), ProviderError> {
    if url.starts_with("http://") || url.starts_with("https://") {
        Ok(())
    } else {
        Err(ProviderError::InvalidRequest(format!("base_url `{url}` is not an http(s) URL")))
    }
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

mod duration_millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Bounds the number of concurrent in-flight requests.
#[derive(Debug)]
pub struct InFlightGate {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct GatePermit<'a>(&'a InFlightGate);

impl InFlightGate {
    pub fn new(limit: usize) -> Self {
        InFlightGate {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> GatePermit<'_> {
        let mut active = self.active.lock().expect("gate lock");
        while *active >= self.limit {
            active = self.freed.wait(active).expect("gate lock");
        }
        *active += 1;
        GatePermit(self)
    }
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().expect("gate lock");
        *active -= 1;
        self.0.freed.notify_one();
    }
}

/// Wraps a provider and counts calls; used to audit pipeline call budgets.
pub struct CountingProvider<P> {
    inner: P,
    chats: AtomicUsize,
    embeds: AtomicUsize,
    embedded_texts: AtomicUsize,
}

impl<P: Provider> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        CountingProvider {
            inner,
            chats: AtomicUsize::new(0),
            embeds: AtomicUsize::new(0),
            embedded_texts: AtomicUsize::new(0),
        }
    }

    pub fn chat_calls(&self) -> usize {
        self.chats.load(Ordering::SeqCst)
    }

    pub fn embed_calls(&self) -> usize {
        self.embeds.load(Ordering::SeqCst)
    }

    pub fn embedded_texts(&self) -> usize {
        self.embedded_texts.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.chats.store(0, Ordering::SeqCst);
        self.embeds.store(0, Ordering::SeqCst);
        self.embedded_texts.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: Provider> Provider for CountingProvider<P> {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        self.chats.fetch_add(1, Ordering::SeqCst);
        self.inner.chat(req)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        self.embeds.fetch_add(1, Ordering::SeqCst);
        self.embedded_texts.fetch_add(texts.len(), Ordering::SeqCst);
        self.inner.embed(texts)
    }

    fn health(&self) -> Result<(), ProviderError> {
        self.inner.health()
    }
}

/// Strips a Markdown code fence around a JSON payload, if present.
pub fn strip_code_fence(text: &str) -> &str {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.strip_prefix("json").unwrap_or(rest);
        if let Some(body) = rest.strip_suffix("```") {
            return body.trim();
        }
    }
    t
}
