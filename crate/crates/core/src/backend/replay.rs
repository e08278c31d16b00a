//! Record a backend session to a fixture file and replay it later.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::wire::{EncodeResponse, GenerateBody};
use super::{prompt_hash, Backend, BackendError, Capabilities, GenerateRequest, ImageRef, Result};
use crate::tensor::{ContainerDtype, PromptEmbedding, TensorContainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRecord {
    pub a: String,
    pub b: String,
    pub distance: f64,
}

/// Everything a backend answered during a recorded session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Fixture {
    pub capabilities: Option<Capabilities>,
    pub encodes: BTreeMap<String, EncodeResponse>,
    /// Keyed by the SHA-256 of the canonical generate body.
    pub generations: BTreeMap<String, String>,
    pub distances: Vec<DistanceRecord>,
}

fn request_key(r: &GenerateRequest) -> String {
    let body = serde_json::to_string(&GenerateBody::from_request(r)).expect("body serializes");
    hex::encode(Sha256::digest(body.as_bytes()))
}

impl Fixture {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fixture serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| BackendError::Protocol(format!("bad fixture: {e}")))
    }
}

pub struct RecordingBackend<B> {
    inner: B,
    fixture: Mutex<Fixture>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        let fixture = Fixture {
            capabilities: Some(inner.capabilities().clone()),
            ..Fixture::default()
        };
        Self {
            inner,
            fixture: Mutex::new(fixture),
        }
    }

    pub fn fixture(&self) -> Fixture {
        self.fixture.lock().expect("fixture lock").clone()
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn capabilities(&self) -> &Capabilities {
        self.inner.capabilities()
    }

    fn encode(&self, prompt: &str) -> Result<PromptEmbedding> {
        let emb = self.inner.encode(prompt)?;
        let mut container = TensorContainer::from_embedding(&emb, ContainerDtype::F64);
        container.prompt = None;
        self.fixture
            .lock()
            .expect("fixture lock")
            .encodes
            .insert(prompt.to_string(), container);
        Ok(emb)
    }

    fn generate(&self, request: &GenerateRequest) -> Result<ImageRef> {
        let img = self.inner.generate(request)?;
        self.fixture
            .lock()
            .expect("fixture lock")
            .generations
            .insert(request_key(request), img.id.clone());
        Ok(img)
    }

    fn distance_ids(&self, a: &str, b: &str) -> Result<f64> {
        let d = self.inner.distance_ids(a, b)?;
        self.fixture
            .lock()
            .expect("fixture lock")
            .distances
            .push(DistanceRecord {
                a: a.to_string(),
                b: b.to_string(),
                distance: d,
            });
        Ok(d)
    }
}

/// Answers only what was recorded; anything else is an error.
pub struct ReplayBackend {
    fixture: Fixture,
    capabilities: Capabilities,
    distances: BTreeMap<(String, String), f64>,
}

impl ReplayBackend {
    pub fn new(fixture: Fixture) -> Result<Self> {
        let capabilities = fixture
            .capabilities
            .clone()
            .ok_or_else(|| BackendError::Protocol("fixture lacks capabilities".into()))?;
        let distances = fixture
            .distances
            .iter()
            .map(|r| ((r.a.clone(), r.b.clone()), r.distance))
            .collect();
        Ok(Self {
            fixture,
            capabilities,
            distances,
        })
    }
}

impl Backend for ReplayBackend {
    fn capabilities(&self) -> &Capabilities {
        &self.capabilities
    }

    fn encode(&self, prompt: &str) -> Result<PromptEmbedding> {
        let container = self
            .fixture
            .encodes
            .get(prompt)
            .ok_or_else(|| BackendError::Protocol(format!("prompt `{prompt}` was not recorded")))?;
        Ok(container.to_embedding(Some(prompt))?)
    }

    fn generate(&self, request: &GenerateRequest) -> Result<ImageRef> {
        let id = self
            .fixture
            .generations
            .get(&request_key(request))
            .ok_or_else(|| BackendError::GenerationFailed("request was not recorded".into()))?;
        Ok(ImageRef {
            id: id.clone(),
            alpha: request.alpha,
            prompt_hash: prompt_hash(request.embedding.prompt_text()),
        })
    }

    fn distance_ids(&self, a: &str, b: &str) -> Result<f64> {
        self.distances
            .get(&(a.to_string(), b.to_string()))
            .or_else(|| self.distances.get(&(b.to_string(), a.to_string())))
            .copied()
            .ok_or_else(|| BackendError::UnknownRef(format!("{a} / {b}")))
    }
}
