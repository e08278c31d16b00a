//! Calibration profiles: a concept, vector, prompt and the validated slider
//! strengths, persisted as JSON.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{Backend, BackendError, Schedule};
use crate::elastic::{calibrate, BackendOracle, CalibrationResult, ElasticConfig, ElasticError};
use crate::select::{EditType, SelectError, TokenSelection};
use crate::tensor::{SteeringVector, TokenSpan};

pub const PROFILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("invalid profile: {0}")]
    Invalid(String),
    #[error("malformed profile JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("steering vector has no recorded projection; rebuild it or pass alpha_max explicitly")]
    MissingProjection,
    #[error("vector encoder `{vector}` does not match backend encoder `{backend}`")]
    EncoderMismatch { vector: String, backend: String },
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Elastic(#[from] ElasticError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

pub type Result<T> = std::result::Result<T, ProfileError>;

/// Hex SHA-256 of some bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationProfile {
    pub version: u32,
    pub concept: String,
    pub prompt: String,
    pub edit_type: EditType,
    pub vector_path: String,
    pub vector_hash: String,
    pub selection: TokenSelection,
    pub span: TokenSpan,
    pub config: ElasticConfig,
    pub schedule: Schedule,
    pub seed: u64,
    pub encoder_id: String,
    pub alpha_max_used: f64,
    pub extrapolation_steps_taken: usize,
    pub valid_points: Vec<f64>,
    pub band_points: Vec<f64>,
    pub similarities: Vec<f64>,
    pub iterations_used: usize,
    pub generations_used: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

impl CalibrationProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ProfileError::Invalid(m));
        if self.version != PROFILE_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        self.config.validate()?;
        if self.selection.words.is_empty() || self.span.is_empty() {
            return bad("empty token selection".into());
        }
        if self.band_points.is_empty() || !strictly_increasing(&self.band_points) {
            return bad("band points must be nonempty and strictly increasing".into());
        }
        if self.similarities.len() != self.band_points.len() {
            return bad("one similarity per band point expected".into());
        }
        if !strictly_increasing(&self.valid_points) {
            return bad("valid points must be strictly increasing".into());
        }
        for a in &self.valid_points {
            let Some(i) = self.band_points.iter().position(|b| b == a) else {
                return bad(format!("valid point {a} is not a band point"));
            };
            let s = self.similarities[i];
            if !(self.config.sim_min <= s && s <= self.config.sim_max) {
                return bad(format!("valid point {a} has distance {s} outside the band"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    /// Lowest and highest valid strength.
    pub fn range(&self) -> Option<(f64, f64)> {
        Some((*self.valid_points.first()?, *self.valid_points.last()?))
    }

    /// Short id derived from the profile content.
    pub fn id(&self) -> String {
        content_hash(self.to_json().as_bytes())[..12].to_string()
    }
}

/// Everything needed to calibrate one prompt.
pub struct CalibrationRequest<'a> {
    pub prompt: &'a str,
    pub edit_type: EditType,
    pub vector: &'a SteeringVector,
    pub vector_path: &'a str,
    pub vector_hash: &'a str,
    pub selection: TokenSelection,
    pub config: ElasticConfig,
    pub schedule: Schedule,
    pub seed: u64,
    /// Overrides the vector's recorded projection as the starting range.
    pub alpha_max: Option<f64>,
}

/// Encodes the prompt, resolves the selected words and runs the range search.
pub fn run_calibration(backend: &dyn Backend, req: CalibrationRequest<'_>) -> Result<CalibrationProfile> {
    let encoder = &backend.capabilities().encoder_id;
    if req.vector.encoder_id() != encoder {
        return Err(ProfileError::EncoderMismatch {
            vector: req.vector.encoder_id().to_string(),
            backend: encoder.clone(),
        });
    }
    let projection = req
        .alpha_max
        .or(req.vector.projection_max())
        .ok_or(ProfileError::MissingProjection)?;
    let embedding = backend.encode(req.prompt)?;
    let span = req.selection.resolve(&embedding)?;
    let mut oracle = BackendOracle::new(
        backend,
        embedding,
        span.clone(),
        req.vector.clone(),
        req.seed,
        req.schedule,
    )?;
    let result: CalibrationResult = calibrate(&mut oracle, projection, &req.config)?;
    if let Some(d) = &result.diagnostic {
        tracing::warn!(prompt = req.prompt, "{d}");
    }
    let profile = CalibrationProfile {
        version: PROFILE_VERSION,
        concept: req.vector.concept().to_string(),
        prompt: req.prompt.to_string(),
        edit_type: req.edit_type,
        vector_path: req.vector_path.to_string(),
        vector_hash: req.vector_hash.to_string(),
        selection: req.selection,
        span,
        config: req.config,
        schedule: req.schedule,
        seed: req.seed,
        encoder_id: encoder.clone(),
        alpha_max_used: result.alpha_max_used,
        extrapolation_steps_taken: result.extrapolation_steps_taken,
        valid_points: result.valid_points,
        band_points: result.band.points,
        similarities: result.similarities,
        iterations_used: result.band.iterations_used,
        generations_used: result.band.generations_used,
        diagnostic: result.diagnostic,
    };
    profile.validate()?;
    Ok(profile)
}
