//! OpenAI-compatible HTTP backend (chat completions and embeddings).

use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{Error, LlmError, Result};

use super::gateway::{ChatBackend, Embedder, RawCompletion};
use super::prompts::Prompt;

#[derive(Debug, Clone)]
pub struct LiveConfig {
    /// Base URL up to and including the API version, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub model: String,
    pub embedding_model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl LiveConfig {
    pub const DEFAULT_BASE_URL: &'static str = "https://api.openai.com/v1";
    pub const DEFAULT_MODEL: &'static str = "gpt-4o-mini";
    pub const DEFAULT_EMBEDDING_MODEL: &'static str = "text-embedding-3-small";
    pub const DEFAULT_KEY_VAR: &'static str = "OPENAI_API_KEY";

    /// Defaults, with the API key read from `key_var`. A missing key is only an
    /// error for endpoints that reject it.
    pub fn from_env(key_var: &str) -> Self {
        Self {
            base_url: Self::DEFAULT_BASE_URL.to_string(),
            model: Self::DEFAULT_MODEL.to_string(),
            embedding_model: Self::DEFAULT_EMBEDDING_MODEL.to_string(),
            api_key: std::env::var(key_var).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(120),
        }
    }
}

pub struct LiveBackend {
    config: LiveConfig,
    agent: ureq::Agent,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self> {
        if !config.base_url.starts_with("http://") && !config.base_url.starts_with("https://") {
            return Err(Error::InvalidArgument(format!(
                "endpoint `{}` is not an http(s) URL",
                config.base_url
            )));
        }
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Ok(Self { config, agent })
    }

    pub fn config(&self) -> &LiveConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, LlmError> {
        let mut req = self.agent.post(self.url(path));
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(transport)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport)?;
        if (200..300).contains(&status) {
            return serde_json::from_str(&text).map_err(|e| LlmError::Malformed(e.to_string()));
        }
        Err(classify_status(status, text))
    }
}

fn transport(e: ureq::Error) -> LlmError {
    match e {
        ureq::Error::Json(e) => LlmError::Malformed(e.to_string()),
        ureq::Error::BadUri(u) => LlmError::Malformed(format!("bad uri {u}")),
        other => LlmError::Transport {
            attempts: 1,
            message: other.to_string(),
        },
    }
}

fn classify_status(status: u16, body: String) -> LlmError {
    let lower = body.to_ascii_lowercase();
    match status {
        401 | 403 => LlmError::Auth { status, body },
        400 | 413 if lower.contains("context_length") || lower.contains("context length") => {
            LlmError::ContextLength { body }
        }
        _ => LlmError::Status { status, body },
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f32>,
}

impl ChatBackend for LiveBackend {
    fn complete(&self, prompt: &Prompt) -> Result<RawCompletion, LlmError> {
        let body = json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt.text}],
        });
        let value = self.post("chat/completions", &body)?;
        let resp: ChatResponse =
            serde_json::from_value(value).map_err(|e| LlmError::Malformed(e.to_string()))?;
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| LlmError::Malformed("response has no choices".into()))?;
        let usage = resp.usage;
        Ok(RawCompletion {
            text: choice.message.content.unwrap_or_default(),
            input_tokens: usage.as_ref().and_then(|u| u.prompt_tokens),
            output_tokens: usage.as_ref().and_then(|u| u.completion_tokens),
        })
    }
}

impl Embedder for LiveBackend {
    fn id(&self) -> String {
        self.config.embedding_model.clone()
    }

    fn dimension(&self) -> Option<usize> {
        None
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, LlmError> {
        let body = json!({"model": self.config.embedding_model, "input": texts});
        let value = self.post("embeddings", &body)?;
        let resp: EmbeddingResponse =
            serde_json::from_value(value).map_err(|e| LlmError::Malformed(e.to_string()))?;
        let mut items = resp.data;
        if items.iter().all(|i| i.index.is_some()) {
            items.sort_by_key(|i| i.index);
        }
        Ok(items.into_iter().map(|i| i.embedding).collect())
    }
}
