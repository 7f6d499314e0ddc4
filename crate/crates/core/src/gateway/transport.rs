use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: "system".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Option<Usage>,
}

/// One request/response exchange with a chat-completions endpoint.
pub trait ChatTransport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse>;
}

impl<F> ChatTransport for F
where
    F: Fn(&ChatRequest) -> Result<ChatResponse> + Send + Sync,
{
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse> {
        self(request)
    }
}

pub const DEFAULT_BASE_URL: &str = "https://openrouter.ai/api/v1";
pub const DEFAULT_API_KEY_ENV: &str = "OPENROUTER_API_KEY";

/// OpenRouter-compatible `POST {base}/chat/completions` over HTTPS.
pub struct OpenRouterTransport {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: String,
}

impl OpenRouterTransport {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| Error::config(format!("building http client: {e}")))?;
        Ok(OpenRouterTransport {
            client,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
        })
    }

    /// Reads the bearer token from `env_var`.
    pub fn from_env(base_url: impl Into<String>, env_var: &str) -> Result<Self> {
        let key = std::env::var(env_var)
            .map_err(|_| Error::config(format!("environment variable {env_var} is not set")))?;
        OpenRouterTransport::new(base_url, key)
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

impl ChatTransport for OpenRouterTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let mut body = json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let resp = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .bearer_auth(&self.api_key)
            .timeout(request.timeout)
            .json(&body)
            .send()
            .map_err(|e| Error::Transport {
                message: e.to_string(),
                retryable: e.is_timeout() || e.is_connect() || e.is_request(),
            })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Error::Transport {
            message: format!("reading response body: {e}"),
            retryable: true,
        })?;
        if !status.is_success() {
            return Err(Error::Http {
                status: status.as_u16(),
                body: text,
            });
        }
        let wire: WireResponse = serde_json::from_str(&text).map_err(|e| Error::Transport {
            message: format!("malformed completion response ({e}): {}", truncate(&text, 500)),
            retryable: false,
        })?;
        let content = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Error::Transport {
                message: "completion response has no message content".into(),
                retryable: true,
            })?;
        Ok(ChatResponse {
            text: content,
            usage: wire.usage,
        })
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Replays a fixed queue of outcomes, then fails. Records every request it saw.
#[derive(Default)]
pub struct ScriptedTransport {
    queue: Mutex<VecDeque<Result<ChatResponse>>>,
    seen: Mutex<Vec<ChatRequest>>,
}

impl ScriptedTransport {
    pub fn new(outcomes: impl IntoIterator<Item = Result<ChatResponse>>) -> Self {
        ScriptedTransport {
            queue: Mutex::new(outcomes.into_iter().collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn text(text: impl Into<String>, prompt_tokens: u64, completion_tokens: u64) -> Result<ChatResponse> {
        Ok(ChatResponse {
            text: text.into(),
            usage: Some(Usage {
                prompt_tokens,
                completion_tokens,
            }),
        })
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl ChatTransport for ScriptedTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse> {
        self.seen.lock().unwrap().push(request.clone());
        self.queue.lock().unwrap().pop_front().unwrap_or_else(|| {
            Err(Error::Transport {
                message: "scripted transport exhausted".into(),
                retryable: false,
            })
        })
    }
}
