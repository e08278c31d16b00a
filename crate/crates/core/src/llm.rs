//! Chat-completion clients.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{HttpError, JsonClient, RetryPolicy};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("LLM transport error: {0}")]
    Transport(#[from] HttpError),
    #[error("LLM reply had no content")]
    EmptyReply,
    #[error("scripted LLM has no reply left for this request")]
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpLlmConfig {
    /// Full URL of an OpenAI-style chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub timeout_s: f64,
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for HttpLlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4.1-mini".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            timeout_s: 120.0,
            retries: 3,
            backoff_ms: 250,
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

pub struct HttpLlmClient {
    client: JsonClient,
    model: String,
}

impl HttpLlmClient {
    pub fn new(config: &HttpLlmConfig) -> Self {
        let bearer = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        Self {
            client: JsonClient::new(
                &config.endpoint,
                Duration::from_secs_f64(config.timeout_s),
                RetryPolicy {
                    retries: config.retries,
                    initial_backoff: Duration::from_millis(config.backoff_ms),
                },
            )
            .with_bearer(bearer),
            model: config.model.clone(),
        }
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, LlmError> {
        let resp: ChatResponse = self.client.post_json(
            "",
            &ChatRequest {
                model: &self.model,
                messages,
                temperature,
            },
        )?;
        resp.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .filter(|c| !c.trim().is_empty())
            .ok_or(LlmError::EmptyReply)
    }
}

/// One canned reply, chosen when the last message contains `contains`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub contains: String,
    pub reply: String,
}

/// Offline LLM double.
///
/// Rules are tried first, in order, against the last message; otherwise the
/// sequential `replies` are handed out one per call.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ScriptedLlm {
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub replies: Vec<String>,
    #[serde(skip)]
    cursor: AtomicUsize,
}

impl ScriptedLlm {
    pub fn with_replies(replies: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            replies: replies.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn with_rules(rules: impl IntoIterator<Item = (impl Into<String>, impl Into<String>)>) -> Self {
        Self {
            rules: rules
                .into_iter()
                .map(|(c, r)| ScriptRule {
                    contains: c.into(),
                    reply: r.into(),
                })
                .collect(),
            ..Self::default()
        }
    }

    pub fn calls(&self) -> usize {
        self.cursor.load(Ordering::SeqCst)
    }
}

impl LlmClient for ScriptedLlm {
    fn complete(&self, messages: &[ChatMessage], _temperature: f64) -> Result<String, LlmError> {
        let last = messages.last().map(|m| m.content.as_str()).unwrap_or("");
        let n = self.cursor.fetch_add(1, Ordering::SeqCst);
        if let Some(rule) = self.rules.iter().find(|r| last.contains(&r.contains)) {
            return Ok(rule.reply.clone());
        }
        self.replies.get(n).cloned().ok_or(LlmError::Exhausted)
    }
}
