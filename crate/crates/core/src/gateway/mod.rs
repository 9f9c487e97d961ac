//! Provider-agnostic chat and embedding access with record/replay.
//!
//! Every request is fingerprinted from its endpoint kind, model id and
//! canonicalized payload. With a cassette attached, responses are served
//! from or stored into it according to the [`CassetteMode`]; replay mode
//! never reaches a transport.

mod cassette;
mod embedding;
mod http;

pub use cassette::{canonical_json, fingerprint, Cassette, CassetteMode};
pub use embedding::{cosine_similarity, EmbeddingError, EmbeddingVector, HashedNgramEmbedder};
pub use http::{OpenAiChat, OpenAiEmbeddings, DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;
use thiserror::Error;

/// Pipeline stage a request belongs to. Carried in errors only; it is not
/// part of the fingerprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Keywords,
    Summarize,
    Generate,
    Revise,
    Describe,
    Embed,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Keywords => "keywords",
            Stage::Summarize => "summarize",
            Stage::Generate => "generate",
            Stage::Revise => "revise",
            Stage::Describe => "describe",
            Stage::Embed => "embed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
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
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;

    /// Temperature 0 and the default output limit.
    pub fn new(model_id: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model_id: model_id.into(),
            messages,
            temperature: 0.0,
            max_output_tokens: Self::DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must not be empty".into()));
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    fn payload(&self) -> Value {
        json!({
            "messages": self.messages,
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
        })
    }

    pub fn fingerprint(&self) -> String {
        fingerprint("chat", &self.model_id, &self.payload())
    }
}

/// Failure reported by a transport. Only transient failures are retried.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct TransportError {
    pub transient: bool,
    pub message: String,
}

impl TransportError {
    pub fn transient(message: impl Into<String>) -> Self {
        Self { transient: true, message: message.into() }
    }

    pub fn permanent(message: impl Into<String>) -> Self {
        Self { transient: false, message: message.into() }
    }
}

pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> &str;

    /// In-process providers bypass the cassette entirely.
    fn is_local(&self) -> bool {
        false
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, TransportError>;
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{stage}: no chat transport configured")]
    NoTransport { stage: Stage },
    #[error("{stage}: cassette miss for fingerprint {fingerprint} in replay mode")]
    ReplayMiss { stage: Stage, fingerprint: String },
    #[error("{stage}: provider failed after {attempts} attempt(s): {message}")]
    Provider { stage: Stage, attempts: u32, message: String },
    #[error("{stage}: malformed response: {message}")]
    MalformedResponse { stage: Stage, message: String },
    #[error("cassette: {0}")]
    Cassette(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay: Duration::from_millis(500) }
    }
}

/// Counting semaphore for the in-flight limit.
struct InFlight {
    max: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.max {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// Entry point for every model call in the pipeline. Safe to share across
/// threads.
pub struct Gateway {
    chat: Option<Arc<dyn ChatTransport>>,
    embedder: Arc<dyn EmbeddingProvider>,
    cassette: Option<Cassette>,
    retry: RetryPolicy,
    in_flight: InFlight,
    transport_calls: AtomicUsize,
    embed_requests: AtomicUsize,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("has_chat", &self.chat.is_some())
            .field("embedder", &self.embedder.provider_id())
            .field("cassette", &self.cassette.as_ref().map(Cassette::mode))
            .field("retry", &self.retry)
            .finish()
    }
}

impl Gateway {
    /// A gateway with no chat transport and the offline embedder.
    pub fn offline() -> Self {
        Self::builder().build()
    }

    pub fn builder() -> GatewayBuilder {
        GatewayBuilder::default()
    }

    pub fn has_chat(&self) -> bool {
        self.chat.is_some()
            || self.cassette.as_ref().is_some_and(|c| c.mode() == CassetteMode::Replay)
    }

    pub fn embedder_id(&self) -> &str {
        self.embedder.provider_id()
    }

    pub fn cassette(&self) -> Option<&Cassette> {
        self.cassette.as_ref()
    }

    /// Number of requests that reached a transport (each retry counts).
    pub fn transport_calls(&self) -> usize {
        self.transport_calls.load(Ordering::SeqCst)
    }

    /// Number of [`Gateway::embed`] invocations.
    pub fn embed_requests(&self) -> usize {
        self.embed_requests.load(Ordering::SeqCst)
    }

    pub fn estimate_tokens(&self, text: &str) -> usize {
        crate::text::estimate_tokens(text)
    }

    pub fn chat(&self, stage: Stage, request: &ChatRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let fp = request.fingerprint();
        self.through_cassette(stage, &fp, || {
            let transport = self.chat.as_ref().ok_or(GatewayError::NoTransport { stage })?;
            self.with_retry(stage, || transport.complete(request))
        })
    }

    /// One vector per input, in order. Batches are all-or-nothing.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let stage = Stage::Embed;
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest("embed requires at least one text".into()));
        }
        self.embed_requests.fetch_add(1, Ordering::SeqCst);
        let provider_id = self.embedder.provider_id().to_string();
        let raw: Vec<Vec<f64>> = if self.embedder.is_local() {
            self.embedder
                .embed(texts)
                .map_err(|e| GatewayError::Provider { stage, attempts: 1, message: e.message })?
        } else {
            let fp = fingerprint("embed", &provider_id, &json!({ "input": texts }));
            let body = self.through_cassette(stage, &fp, || {
                let vectors = self.with_retry(stage, || self.embedder.embed(texts))?;
                serde_json::to_string(&vectors).map_err(|e| GatewayError::MalformedResponse {
                    stage,
                    message: e.to_string(),
                })
            })?;
            serde_json::from_str(&body).map_err(|e| GatewayError::MalformedResponse {
                stage,
                message: e.to_string(),
            })?
        };
        if raw.len() != texts.len() {
            return Err(GatewayError::MalformedResponse {
                stage,
                message: format!("expected {} vectors, got {}", texts.len(), raw.len()),
            });
        }
        let out = raw
            .into_iter()
            .map(|values| EmbeddingVector::new(values, provider_id.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = out.first() {
            if let Some(bad) = out.iter().find(|v| v.dim() != first.dim()) {
                return Err(EmbeddingError::DimensionMismatch(first.dim(), bad.dim()).into());
            }
        }
        Ok(out)
    }

    fn through_cassette<F>(&self, stage: Stage, fp: &str, call: F) -> Result<String, GatewayError>
    where
        F: FnOnce() -> Result<String, GatewayError>,
    {
        match &self.cassette {
            Some(c) if c.mode() == CassetteMode::Replay => c
                .get(fp)
                .ok_or_else(|| GatewayError::ReplayMiss { stage, fingerprint: fp.to_string() }),
            Some(c) if c.mode() == CassetteMode::Record => {
                if let Some(hit) = c.get(fp) {
                    return Ok(hit);
                }
                let response = call()?;
                c.insert(fp, &response)?;
                Ok(response)
            }
            _ => call(),
        }
    }

    fn with_retry<T, F>(&self, stage: Stage, mut call: F) -> Result<T, GatewayError>
    where
        F: FnMut() -> Result<T, TransportError>,
    {
        let _slot = self.in_flight.acquire();
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            self.transport_calls.fetch_add(1, Ordering::SeqCst);
            match call() {
                Ok(v) => return Ok(v),
                Err(e) if e.transient && attempt < attempts => {
                    last = e.message;
                    std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt - 1));
                }
                Err(e) => {
                    return Err(GatewayError::Provider { stage, attempts: attempt, message: e.message })
                }
            }
        }
        Err(GatewayError::Provider { stage, attempts, message: last })
    }
}

pub struct GatewayBuilder {
    chat: Option<Arc<dyn ChatTransport>>,
    embedder: Arc<dyn EmbeddingProvider>,
    cassette: Option<Cassette>,
    retry: RetryPolicy,
    max_in_flight: usize,
}

impl Default for GatewayBuilder {
    fn default() -> Self {
        Self {
            chat: None,
            embedder: Arc::new(HashedNgramEmbedder::default()),
            cassette: None,
            retry: RetryPolicy::default(),
            max_in_flight: 4,
        }
    }
}

impl GatewayBuilder {
    pub fn chat(mut self, transport: Arc<dyn ChatTransport>) -> Self {
        self.chat = Some(transport);
        self
    }

    pub fn embedder(mut self, provider: Arc<dyn EmbeddingProvider>) -> Self {
        self.embedder = provider;
        self
    }

    pub fn cassette(mut self, cassette: Cassette) -> Self {
        self.cassette = Some(cassette);
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn build(self) -> Gateway {
        Gateway {
            chat: self.chat,
            embedder: self.embedder,
            cassette: self.cassette,
            retry: self.retry,
            in_flight: InFlight { max: self.max_in_flight, used: Mutex::new(0), freed: Condvar::new() },
            transport_calls: AtomicUsize::new(0),
            embed_requests: AtomicUsize::new(0),
        }
    }
}
