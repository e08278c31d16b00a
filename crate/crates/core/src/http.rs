//! Blocking JSON-over-HTTP helper shared by the remote backend, the LLM
//! client and the remote scorer.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("{message}")]
    Transport { message: String, retriable: bool },
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("invalid response body: {0}")]
    Decode(String),
}

impl HttpError {
    pub fn is_retriable(&self) -> bool {
        match self {
            HttpError::Transport { retriable, .. } => *retriable,
            HttpError::Status { status, .. } => *status == 429 || *status >= 500,
            HttpError::Decode(_) => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            initial_backoff: Duration::from_millis(250),
        }
    }
}

#[derive(Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    base_url: String,
    bearer: Option<String>,
    retry: RetryPolicy,
}

impl std::fmt::Debug for JsonClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonClient")
            .field("base_url", &self.base_url)
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

impl JsonClient {
    pub fn new(base_url: &str, timeout: Duration, retry: RetryPolicy) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            base_url: base_url.trim_end_matches('/').to_string(),
            bearer: None,
            retry,
        }
    }

    pub fn with_bearer(mut self, token: Option<String>) -> Self {
        self.bearer = token;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn url(&self, path: &str) -> String {
        if path.starts_with("http://") || path.starts_with("https://") {
            path.to_string()
        } else {
            format!("{}{}", self.base_url, path)
        }
    }

    fn post_once<B: Serialize, R: DeserializeOwned>(&self, url: &str, body: &B) -> Result<R, HttpError> {
        let mut req = self.agent.post(url);
        if let Some(token) = &self.bearer {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(|e| HttpError::Transport {
            retriable: !matches!(e, ureq::Error::BadUri(_) | ureq::Error::Json(_)),
            message: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(HttpError::Status { status, body });
        }
        resp.body_mut()
            .read_json::<R>()
            .map_err(|e| HttpError::Decode(e.to_string()))
    }

    /// POSTs `body` as JSON, retrying retriable failures with exponential backoff.
    pub fn post_json<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, HttpError> {
        let url = self.url(path);
        let mut delay = self.retry.initial_backoff;
        let mut attempt = 0;
        loop {
            match self.post_once(&url, body) {
                Ok(r) => return Ok(r),
                Err(e) if e.is_retriable() && attempt < self.retry.retries => {
                    attempt += 1;
                    tracing::warn!(%url, attempt, error = %e, "retrying request");
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Single GET without retries, used for health probes.
    pub fn get_status(&self, path: &str) -> Result<u16, HttpError> {
        let resp = self.agent.get(&self.url(path)).call().map_err(|e| HttpError::Transport {
            message: e.to_string(),
            retriable: true,
        })?;
        Ok(resp.status().as_u16())
    }
}
