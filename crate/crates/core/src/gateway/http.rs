//! Chat-completions and embeddings over the OpenAI-compatible HTTP shape.

use serde_json::{json, Value};
use std::fmt;
use std::time::Duration;

use super::{ChatRequest, ChatTransport, EmbeddingProvider, TransportError};

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::new_with_config(ureq::Agent::config_builder().timeout_global(Some(timeout)).build())
}

fn post_json(
    agent: &ureq::Agent,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
) -> Result<Value, TransportError> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(key) = api_key {
        req = req.header("Authorization", &format!("Bearer {key}"));
    }
    let mut resp = req.send(body.to_string()).map_err(classify)?;
    let text = resp.body_mut().read_to_string().map_err(classify)?;
    serde_json::from_str(&text).map_err(|e| TransportError::permanent(format!("invalid JSON: {e}")))
}

/// 5xx and connection-level failures are transient; everything else is not.
fn classify(err: ureq::Error) -> TransportError {
    match &err {
        ureq::Error::StatusCode(code) if *code >= 500 => {
            TransportError::transient(format!("HTTP {code}"))
        }
        ureq::Error::StatusCode(code) => TransportError::permanent(format!("HTTP {code}")),
        ureq::Error::Io(e) => TransportError::transient(format!("io: {e}")),
        ureq::Error::Timeout(t) => TransportError::transient(format!("timeout: {t}")),
        ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
            TransportError::transient(err_text(&err))
        }
        _ => TransportError::permanent(err_text(&err)),
    }
}

fn err_text(err: &ureq::Error) -> String {
    err.to_string()
}

fn read_key(env_var: &str) -> Option<String> {
    std::env::var(env_var).ok().filter(|k| !k.is_empty())
}

/// Chat transport for `POST {base_url}/chat/completions`.
pub struct OpenAiChat {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl OpenAiChat {
    /// Reads the bearer credential from `api_key_env`.
    pub fn from_env(base_url: &str, api_key_env: &str) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: read_key(api_key_env),
            agent: agent(Duration::from_secs(300)),
        }
    }

    pub fn request_body(request: &ChatRequest) -> Value {
        json!({
            "model": request.model_id,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        })
    }
}

impl fmt::Debug for OpenAiChat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OpenAiChat")
            .field("base_url", &self.base_url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl ChatTransport for OpenAiChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let url = format!("{}/chat/completions", self.base_url);
        let body = post_json(&self.agent, &url, self.api_key.as_deref(), &Self::request_body(request))?;
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| TransportError::permanent("response lacks choices[0].message.content"))
    }
}

/// Embedding provider for `POST {base_url}/embeddings`.
pub struct OpenAiEmbeddings {
    base_url: String,
    model: String,
    provider_id: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl OpenAiEmbeddings {
    pub fn from_env(base_url: &str, model: &str, api_key_env: &str) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            provider_id: model.to_string(),
            api_key: read_key(api_key_env),
            agent: agent(Duration::from_secs(120)),
        }
    }
}

impl fmt::Debug for OpenAiEmbeddings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OpenAiEmbeddings")
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl EmbeddingProvider for OpenAiEmbeddings {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, TransportError> {
        let url = format!("{}/embeddings", self.base_url);
        let body = json!({ "model": self.model, "input": texts });
        let resp = post_json(&self.agent, &url, self.api_key.as_deref(), &body)?;
        parse_embeddings(&resp, texts.len())
    }
}

fn parse_embeddings(resp: &Value, expected: usize) -> Result<Vec<Vec<f64>>, TransportError> {
    let data = resp
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| TransportError::permanent("response lacks data array"))?;
    let mut slots: Vec<Option<Vec<f64>>> = vec![None; expected];
    for (pos, item) in data.iter().enumerate() {
        let index = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
        let values = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| TransportError::permanent("data item lacks embedding"))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| TransportError::permanent("non-numeric embedding")))
            .collect::<Result<Vec<_>, _>>()?;
        let slot = slots
            .get_mut(index)
            .ok_or_else(|| TransportError::permanent(format!("embedding index {index} out of range")))?;
        *slot = Some(values);
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| TransportError::permanent(format!("missing embedding {i}"))))
        .collect()
}
