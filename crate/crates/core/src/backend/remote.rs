use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::wire::{
    DistanceBody, DistanceResponse, EncodeBody, EncodeResponse, GenerateBatchBody,
    GenerateBatchResponse, GenerateBody, GenerateResponse, DISTANCE_PATH, ENCODE_PATH,
    GENERATE_BATCH_PATH, GENERATE_PATH,
};
use super::{
    check_batch, conformance, prompt_hash, Backend, BackendError, Capabilities, GenerateRequest,
    ImageRef, Result,
};
use crate::http::{HttpError, JsonClient, RetryPolicy};
use crate::tensor::PromptEmbedding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout_s: f64,
    /// Defaults to the inference batch size used during range search.
    pub max_batch: usize,
    pub retries: u32,
    pub backoff_ms: u64,
    pub api_key_env: Option<String>,
    pub supports_image_conditioning: bool,
    /// Prompt used by the startup conformance probe.
    pub probe_prompt: String,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            timeout_s: 120.0,
            max_batch: 20,
            retries: 3,
            backoff_ms: 250,
            api_key_env: None,
            supports_image_conditioning: false,
            probe_prompt: conformance::DEFAULT_PROBE_PROMPT.into(),
        }
    }
}

impl From<HttpError> for BackendError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Transport { message, retriable } => {
                BackendError::Transport { message, retriable }
            }
            HttpError::Status { status, body } => BackendError::Status { status, body },
            HttpError::Decode(m) => BackendError::Protocol(m),
        }
    }
}

pub struct RemoteBackend {
    client: JsonClient,
    capabilities: Capabilities,
}

impl RemoteBackend {
    /// Connects, learns the encoder id and rejects servers that fail the
    /// conformance suite.
    pub fn connect(config: &RemoteConfig) -> Result<Self> {
        let mut backend = Self::unchecked(config, String::new());
        let probe = backend.encode_raw(&config.probe_prompt)?;
        backend.capabilities.encoder_id = probe.encoder_id().to_string();
        conformance::check(&backend, &config.probe_prompt)?;
        Ok(backend)
    }

    /// Builds a client without probing the server.
    pub fn unchecked(config: &RemoteConfig, encoder_id: String) -> Self {
        let bearer = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        let client = JsonClient::new(
            &config.base_url,
            Duration::from_secs_f64(config.timeout_s),
            RetryPolicy {
                retries: config.retries,
                initial_backoff: Duration::from_millis(config.backoff_ms),
            },
        )
        .with_bearer(bearer);
        Self {
            client,
            capabilities: Capabilities {
                max_batch: config.max_batch.max(1),
                encoder_id,
                supports_image_conditioning: config.supports_image_conditioning,
            },
        }
    }

    fn encode_raw(&self, prompt: &str) -> Result<PromptEmbedding> {
        if prompt.trim().is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let resp: EncodeResponse = self.client.post_json(
            ENCODE_PATH,
            &EncodeBody {
                prompt: prompt.to_string(),
            },
        )?;
        Ok(resp.to_embedding(Some(prompt))?)
    }

    fn image_ref(request: &GenerateRequest, id: String) -> ImageRef {
        ImageRef {
            id,
            alpha: request.alpha,
            prompt_hash: prompt_hash(request.embedding.prompt_text()),
        }
    }

    fn check_encoder(&self, got: &str) -> Result<()> {
        if got != self.capabilities.encoder_id {
            return Err(BackendError::EncoderMismatch {
                expected: self.capabilities.encoder_id.clone(),
                got: got.to_string(),
            });
        }
        Ok(())
    }
}

impl Backend for RemoteBackend {
    fn capabilities(&self) -> &Capabilities {
        &self.capabilities
    }

    fn encode(&self, prompt: &str) -> Result<PromptEmbedding> {
        let emb = self.encode_raw(prompt)?;
        self.check_encoder(emb.encoder_id())?;
        Ok(emb)
    }

    fn generate(&self, request: &GenerateRequest) -> Result<ImageRef> {
        self.check_encoder(request.embedding.encoder_id())?;
        let resp: GenerateResponse = self
            .client
            .post_json(GENERATE_PATH, &GenerateBody::from_request(request))?;
        Ok(Self::image_ref(request, resp.image_id))
    }

    fn generate_batch(&self, requests: &[GenerateRequest]) -> Result<Vec<ImageRef>> {
        check_batch(requests.len(), self.capabilities.max_batch)?;
        for r in requests {
            self.check_encoder(r.embedding.encoder_id())?;
        }
        let body = GenerateBatchBody {
            items: requests.iter().map(GenerateBody::from_request).collect(),
        };
        let resp: GenerateBatchResponse = self.client.post_json(GENERATE_BATCH_PATH, &body)?;
        if resp.image_ids.len() != requests.len() {
            return Err(BackendError::Protocol(format!(
                "batch of {} returned {} ids",
                requests.len(),
                resp.image_ids.len()
            )));
        }
        Ok(requests
            .iter()
            .zip(resp.image_ids)
            .map(|(r, id)| Self::image_ref(r, id))
            .collect())
    }

    fn distance_ids(&self, a: &str, b: &str) -> Result<f64> {
        let resp: DistanceResponse = self.client.post_json(
            DISTANCE_PATH,
            &DistanceBody {
                a: a.to_string(),
                b: b.to_string(),
            },
        )?;
        if !resp.distance.is_finite() || resp.distance < 0.0 {
            return Err(BackendError::Protocol(format!(
                "distance {} is not a finite nonnegative number",
                resp.distance
            )));
        }
        Ok(resp.distance)
    }
}
