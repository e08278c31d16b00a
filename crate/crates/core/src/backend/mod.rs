//! Uniform access to the text encoder, the image generator and the
//! perceptual-distance oracle.
//!
//! Images never reach this process: generators hand back opaque ids and the
//! distance oracle compares ids. [`SyntheticBackend`] is a deterministic
//! in-process double; [`RemoteBackend`] speaks the JSON-over-HTTP protocol in
//! [`wire`].

pub mod conformance;
mod remote;
mod replay;
mod synthetic;
pub mod wire;

pub use remote::{RemoteBackend, RemoteConfig};
pub use replay::{Fixture, RecordingBackend, ReplayBackend};
pub use synthetic::{SyntheticBackend, SyntheticConfig, SyntheticWorld};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tensor::{PromptEmbedding, ScheduleMode, TensorError};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {message}")]
    Transport { message: String, retriable: bool },
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("encoder mismatch: backend serves `{expected}`, got `{got}`")]
    EncoderMismatch { expected: String, got: String },
    #[error("cannot encode an empty prompt")]
    EmptyPrompt,
    #[error("batch of {len} exceeds max_batch {max}")]
    BatchTooLarge { len: usize, max: usize },
    #[error("unknown image ref `{0}`")]
    UnknownRef(String),
    #[error("generation failed: {0}")]
    GenerationFailed(String),
    #[error("backend failed conformance: {0}")]
    Conformance(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl BackendError {
    /// Whether repeating the same request could succeed.
    pub fn is_retriable(&self) -> bool {
        match self {
            BackendError::Transport { retriable, .. } => *retriable,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, BackendError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub max_batch: usize,
    pub encoder_id: String,
    pub supports_image_conditioning: bool,
}

/// Timestep schedule sent along with a generation request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleMode,
    pub total_steps: usize,
}

pub const DEFAULT_TOTAL_STEPS: usize = 30;

impl Default for Schedule {
    fn default() -> Self {
        Self {
            kind: ScheduleMode::Uniform,
            total_steps: DEFAULT_TOTAL_STEPS,
        }
    }
}

impl Schedule {
    pub fn new(kind: ScheduleMode) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }
}

/// Handle to a rendered image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    /// Steering magnitude the caller applied to produce this image.
    pub alpha: f64,
    pub prompt_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateRequest {
    pub embedding: PromptEmbedding,
    pub seed: u64,
    pub schedule: Schedule,
    /// Caller-side metadata echoed into the returned [`ImageRef`]; not sent
    /// over the wire.
    pub alpha: f64,
}

impl GenerateRequest {
    pub fn new(embedding: PromptEmbedding, seed: u64) -> Self {
        Self {
            embedding,
            seed,
            schedule: Schedule::default(),
            alpha: 0.0,
        }
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

/// First 16 hex digits of the SHA-256 of the prompt text.
pub fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    hex::encode(&digest[..8])
}

pub trait Backend: Send + Sync {
    fn capabilities(&self) -> &Capabilities;

    fn encode(&self, prompt: &str) -> Result<PromptEmbedding>;

    fn generate(&self, request: &GenerateRequest) -> Result<ImageRef>;

    /// Renders up to `max_batch` requests; elementwise equal to [`Backend::generate`].
    fn generate_batch(&self, requests: &[GenerateRequest]) -> Result<Vec<ImageRef>> {
        check_batch(requests.len(), self.capabilities().max_batch)?;
        requests.iter().map(|r| self.generate(r)).collect()
    }

    /// Perceptual distance between two rendered images, by id.
    fn distance_ids(&self, a: &str, b: &str) -> Result<f64>;

    fn distance(&self, a: &ImageRef, b: &ImageRef) -> Result<f64> {
        self.distance_ids(&a.id, &b.id)
    }
}

pub(crate) fn check_batch(len: usize, max: usize) -> Result<()> {
    if len > max {
        Err(BackendError::BatchTooLarge { len, max })
    } else {
        Ok(())
    }
}

/// Renders any number of requests in `max_batch`-sized chunks.
pub fn generate_chunked(backend: &dyn Backend, requests: &[GenerateRequest]) -> Result<Vec<ImageRef>> {
    let max = backend.capabilities().max_batch.max(1);
    let mut out = Vec::with_capacity(requests.len());
    for chunk in requests.chunks(max) {
        out.extend(backend.generate_batch(chunk)?);
    }
    Ok(out)
}

/// Encodes prompts, issuing up to `max_batch` encodes concurrently.
pub fn encode_many(backend: &dyn Backend, prompts: &[&str]) -> Result<Vec<PromptEmbedding>> {
    let max = backend.capabilities().max_batch.max(1);
    let mut out = Vec::with_capacity(prompts.len());
    for chunk in prompts.chunks(max) {
        let results: Vec<Result<PromptEmbedding>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|p| scope.spawn(move || backend.encode(p)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("encode worker panicked"))
                .collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn capabilities(&self) -> &Capabilities {
        (**self).capabilities()
    }

    fn encode(&self, prompt: &str) -> Result<PromptEmbedding> {
        (**self).encode(prompt)
    }

    fn generate(&self, request: &GenerateRequest) -> Result<ImageRef> {
        (**self).generate(request)
    }

    fn generate_batch(&self, requests: &[GenerateRequest]) -> Result<Vec<ImageRef>> {
        (**self).generate_batch(requests)
    }

    fn distance_ids(&self, a: &str, b: &str) -> Result<f64> {
        (**self).distance_ids(a, b)
    }
}
