//! Deterministic desk-scale backend.
//!
//! The encoder maps each `(word, position)` to a seeded pseudo-random row and
//! adds `±pole_strength · axis` for configured pole words. The generator does
//! not read α out of band: it re-encodes the prompt, finds the rows that were
//! changed, and measures how far their mean moved along the concept axis. The
//! distance oracle compares the saturating response
//! `r(α) = D · (1 − exp(−α / τ))` of the two measured strengths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    check_batch, prompt_hash, Backend, BackendError, Capabilities, GenerateRequest, ImageRef,
    Result, Schedule,
};
use crate::tensor::{dot, l2_norm, schedule_alpha, PromptEmbedding, Token};
use crate::text;

/// Jitter bound when distance noise is enabled.
pub const DISTANCE_JITTER: f64 = 1e-3;

/// Serializable description of a synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub saturation_tau: f64,
    pub max_distance: f64,
    pub noise_seed: u64,
    /// Explicit concept axis; a seeded random unit vector when absent.
    pub concept_axis: Option<Vec<f64>>,
    pub positive_words: Vec<String>,
    pub negative_words: Vec<String>,
    pub pole_strength: f64,
    pub token_noise: f64,
    pub distance_noise: bool,
    pub max_batch: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            saturation_tau: 15.0,
            max_distance: 0.5,
            noise_seed: 0,
            concept_axis: None,
            positive_words: Vec::new(),
            negative_words: Vec::new(),
            pole_strength: 2.0,
            token_noise: 0.5,
            distance_noise: false,
            max_batch: 20,
        }
    }
}

/// The closed-form world behind [`SyntheticBackend`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    concept_axis: Vec<f64>,
    saturation_tau: f64,
    max_distance: f64,
    noise_seed: u64,
}

impl SyntheticWorld {
    pub fn new(concept_axis: Vec<f64>, saturation_tau: f64, max_distance: f64, noise_seed: u64) -> Result<Self> {
        let norm = l2_norm(&concept_axis);
        if concept_axis.is_empty() || (norm - 1.0).abs() > 1e-9 {
            return Err(BackendError::GenerationFailed(format!(
                "concept axis must be a unit vector (norm {norm})"
            )));
        }
        if !(saturation_tau > 0.0) || !(max_distance > 0.0) {
            return Err(BackendError::GenerationFailed(
                "saturation_tau and max_distance must be positive".into(),
            ));
        }
        Ok(Self {
            concept_axis,
            saturation_tau,
            max_distance,
            noise_seed,
        })
    }

    pub fn concept_axis(&self) -> &[f64] {
        &self.concept_axis
    }

    pub fn saturation_tau(&self) -> f64 {
        self.saturation_tau
    }

    pub fn max_distance(&self) -> f64 {
        self.max_distance
    }

    /// Perceptual response to a measured steering strength; odd in α.
    pub fn response(&self, alpha: f64) -> f64 {
        alpha.signum() * self.max_distance * (1.0 - (-alpha.abs() / self.saturation_tau).exp())
    }
}

pub struct SyntheticBackend {
    world: SyntheticWorld,
    config: SyntheticConfig,
    capabilities: Capabilities,
}

fn seeded_rng(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn random_unit(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded_rng(&[b"axis", &seed.to_le_bytes()]);
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = l2_norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

impl SyntheticBackend {
    pub fn new(config: SyntheticConfig) -> Result<Self> {
        if config.dim == 0 {
            return Err(BackendError::GenerationFailed("dim must be positive".into()));
        }
        let axis = match &config.concept_axis {
            Some(a) if a.len() != config.dim => {
                return Err(BackendError::GenerationFailed(format!(
                    "concept axis has {} entries, dim is {}",
                    a.len(),
                    config.dim
                )))
            }
            Some(a) => {
                let n = l2_norm(a);
                a.iter().map(|x| x / n).collect()
            }
            None => random_unit(config.dim, config.noise_seed),
        };
        let world = SyntheticWorld::new(
            axis,
            config.saturation_tau,
            config.max_distance,
            config.noise_seed,
        )?;
        let capabilities = Capabilities {
            max_batch: config.max_batch.max(1),
            encoder_id: format!("synthetic-v1/d{}/s{}", config.dim, config.noise_seed),
            supports_image_conditioning: false,
        };
        Ok(Self {
            world,
            config,
            capabilities,
        })
    }

    pub fn world(&self) -> &SyntheticWorld {
        &self.world
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    fn polarity(&self, word: &str) -> f64 {
        let lw = word.to_lowercase();
        if self.config.positive_words.iter().any(|p| p.to_lowercase() == lw) {
            1.0
        } else if self.config.negative_words.iter().any(|p| p.to_lowercase() == lw) {
            -1.0
        } else {
            0.0
        }
    }

    fn row_for(&self, word: &str, position: usize) -> Vec<f64> {
        let lw = word.to_lowercase();
        let mut rng = seeded_rng(&[
            b"row",
            &self.config.noise_seed.to_le_bytes(),
            lw.as_bytes(),
            &(position as u64).to_le_bytes(),
        ]);
        let pole = self.polarity(word) * self.config.pole_strength;
        self.world
            .concept_axis
            .iter()
            .map(|a| self.config.token_noise * rng.sample::<f64, _>(StandardNormal) + pole * a)
            .collect()
    }

    /// Mean displacement of the changed rows along the concept axis.
    fn measured_alpha(&self, emb: &PromptEmbedding) -> Result<f64> {
        let reference = self.encode(emb.prompt_text())?;
        if reference.num_tokens() != emb.num_tokens() || reference.dim() != emb.dim() {
            return Err(BackendError::GenerationFailed(
                "embedding shape does not match its prompt".into(),
            ));
        }
        let mut total = 0.0;
        let mut changed = 0usize;
        for (steered, base) in emb.rows().iter().zip(reference.rows()) {
            if steered != base {
                let delta: Vec<f64> = steered.iter().zip(base).map(|(s, b)| s - b).collect();
                total += dot(&delta, &self.world.concept_axis);
                changed += 1;
            }
        }
        Ok(if changed == 0 { 0.0 } else { total / changed as f64 })
    }

    // Average schedule multiplier over the generator's steps.
    fn schedule_factor(schedule: &Schedule) -> Result<f64> {
        let steps = schedule.total_steps.max(1);
        let mut sum = 0.0;
        for step in 0..steps {
            sum += schedule_alpha(1.0, schedule.kind, step, steps)?;
        }
        Ok(sum / steps as f64)
    }

    /// Effective strength encoded in a synthetic image id.
    pub fn effective_alpha(id: &str) -> Option<f64> {
        let mut parts = id.strip_prefix("syn-")?.split('-');
        let _prompt = parts.next()?;
        let _seed = parts.next()?;
        let bits = u64::from_str_radix(parts.next()?, 16).ok()?;
        let _content = parts.next()?;
        if parts.next().is_some() {
            return None;
        }
        Some(f64::from_bits(bits))
    }

    fn jitter(&self, a: &str, b: &str) -> f64 {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mut rng = seeded_rng(&[
            b"jitter",
            &self.config.noise_seed.to_le_bytes(),
            lo.as_bytes(),
            hi.as_bytes(),
        ]);
        rng.gen_range(-DISTANCE_JITTER..=DISTANCE_JITTER)
    }
}

impl Backend for SyntheticBackend {
    fn capabilities(&self) -> &Capabilities {
        &self.capabilities
    }

    fn encode(&self, prompt: &str) -> Result<PromptEmbedding> {
        let words = text::words(prompt);
        if words.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let tokens = words
            .iter()
            .map(|w| Token::new(w.text.clone(), w.start, w.end))
            .collect();
        let rows = words
            .iter()
            .enumerate()
            .map(|(i, w)| self.row_for(&w.text, i))
            .collect();
        Ok(PromptEmbedding::new(
            prompt,
            tokens,
            rows,
            self.capabilities.encoder_id.clone(),
        )?)
    }

    fn generate(&self, request: &GenerateRequest) -> Result<ImageRef> {
        let emb = &request.embedding;
        if emb.encoder_id() != self.capabilities.encoder_id {
            return Err(BackendError::EncoderMismatch {
                expected: self.capabilities.encoder_id.clone(),
                got: emb.encoder_id().to_string(),
            });
        }
        let effective = self.measured_alpha(emb)? * Self::schedule_factor(&request.schedule)?;
        let mut h = Sha256::new();
        for row in emb.rows() {
            for x in row {
                h.update(x.to_le_bytes());
            }
        }
        h.update(request.schedule.kind.as_str().as_bytes());
        h.update((request.schedule.total_steps as u64).to_le_bytes());
        let content = hex::encode(&h.finalize()[..6]);
        let ph = prompt_hash(emb.prompt_text());
        Ok(ImageRef {
            id: format!(
                "syn-{ph}-{}-{:016x}-{content}",
                request.seed,
                effective.to_bits()
            ),
            alpha: request.alpha,
            prompt_hash: ph,
        })
    }

    fn generate_batch(&self, requests: &[GenerateRequest]) -> Result<Vec<ImageRef>> {
        check_batch(requests.len(), self.capabilities.max_batch)?;
        requests.iter().map(|r| self.generate(r)).collect()
    }

    fn distance_ids(&self, a: &str, b: &str) -> Result<f64> {
        let alpha_a =
            Self::effective_alpha(a).ok_or_else(|| BackendError::UnknownRef(a.to_string()))?;
        let alpha_b =
            Self::effective_alpha(b).ok_or_else(|| BackendError::UnknownRef(b.to_string()))?;
        if a == b {
            return Ok(0.0);
        }
        let mut d = (self.world.response(alpha_a) - self.world.response(alpha_b)).abs();
        if self.config.distance_noise {
            d = (d + self.jitter(a, b)).max(0.0);
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{apply_steering, normalize, ScheduleMode, TokenSpan};

    fn backend() -> SyntheticBackend {
        SyntheticBackend::new(SyntheticConfig {
            positive_words: vec!["bright".into()],
            negative_words: vec!["dark".into()],
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    fn axis_vector(b: &SyntheticBackend) -> crate::tensor::SteeringVector {
        let axis = b.world().concept_axis().to_vec();
        normalize(&axis, 1.0, "axis", 1, b.capabilities().encoder_id.clone()).unwrap()
    }

    #[test]
    fn encode_is_deterministic_and_carries_offsets() {
        let b = backend();
        let e1 = b.encode("A bright living room").unwrap();
        let e2 = b.encode("A bright living room").unwrap();
        assert_eq!(e1, e2);
        assert_eq!(e1.tokens()[1], Token::new("bright", 2, 8));
        let again = backend().encode("A bright living room").unwrap();
        assert_eq!(again, e1);
    }

    #[test]
    fn empty_prompt_rejected() {
        assert!(matches!(backend().encode("  ,. "), Err(BackendError::EmptyPrompt)));
    }

    #[test]
    fn pole_words_move_along_axis() {
        let b = backend();
        let bright = b.encode("bright").unwrap();
        let dark = b.encode("dark").unwrap();
        let axis = b.world().concept_axis();
        assert!(dot(bright.row(0), axis) - dot(dark.row(0), axis) > 2.0);
    }

    #[test]
    fn zero_alpha_matches_unsteered() {
        let b = backend();
        let e = b.encode("a cat on a mat").unwrap();
        let v = axis_vector(&b);
        let steered = apply_steering(&e, &TokenSpan::single(1), &v, 0.0).unwrap();
        let g0 = b.generate(&GenerateRequest::new(e, 3)).unwrap();
        let g1 = b.generate(&GenerateRequest::new(steered, 3)).unwrap();
        assert_eq!(g0.id, g1.id);
    }

    #[test]
    fn generator_measures_applied_alpha() {
        let b = backend();
        let e = b.encode("a cat on a mat").unwrap();
        let v = axis_vector(&b);
        let steered = apply_steering(&e, &TokenSpan::new([1, 4]).unwrap(), &v, 20.0).unwrap();
        let img = b.generate(&GenerateRequest::new(steered, 0)).unwrap();
        let measured = SyntheticBackend::effective_alpha(&img.id).unwrap();
        assert!((measured - 20.0).abs() < 1e-9);
        let base = b.generate(&GenerateRequest::new(e, 0)).unwrap();
        let d = b.distance(&base, &img).unwrap();
        assert!((d - 0.5 * (1.0 - (-20.0f64 / 15.0).exp())).abs() < 1e-9);
    }

    #[test]
    fn closed_form_distance_at_tau() {
        let b = SyntheticBackend::new(SyntheticConfig {
            saturation_tau: 20.0,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let e = b.encode("a cat").unwrap();
        let v = axis_vector(&b);
        let steered = apply_steering(&e, &TokenSpan::single(1), &v, 20.0).unwrap();
        let a = b.generate(&GenerateRequest::new(e, 0)).unwrap();
        let c = b.generate(&GenerateRequest::new(steered, 0)).unwrap();
        let d = b.distance(&a, &c).unwrap();
        // 0.5 · (1 − e⁻¹)
        assert!((d - 0.316_060_279_414_278_6).abs() < 1e-9);
        assert_eq!(b.distance(&c, &a).unwrap(), d);
        assert_eq!(b.distance(&c, &c).unwrap(), 0.0);
    }

    #[test]
    fn schedule_scales_effective_strength() {
        let b = backend();
        let e = b.encode("a cat").unwrap();
        let v = axis_vector(&b);
        let steered = apply_steering(&e, &TokenSpan::single(1), &v, 10.0).unwrap();
        let neg = b
            .generate(&GenerateRequest::new(steered.clone(), 0).with_schedule(Schedule::new(ScheduleMode::NegatedUniform)))
            .unwrap();
        assert!((SyntheticBackend::effective_alpha(&neg.id).unwrap() + 10.0).abs() < 1e-9);
        let ramp = b
            .generate(&GenerateRequest::new(steered, 0).with_schedule(Schedule {
                kind: ScheduleMode::LinearRamp,
                total_steps: 4,
            }))
            .unwrap();
        // mean of 1/4, 2/4, 3/4, 4/4
        assert!((SyntheticBackend::effective_alpha(&ramp.id).unwrap() - 6.25).abs() < 1e-9);
    }

    #[test]
    fn encoder_mismatch_rejected() {
        let b = backend();
        let other = SyntheticBackend::new(SyntheticConfig {
            noise_seed: 9,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let e = other.encode("a cat").unwrap();
        assert!(matches!(
            b.generate(&GenerateRequest::new(e, 0)),
            Err(BackendError::EncoderMismatch { .. })
        ));
    }

    #[test]
    fn batch_limits() {
        let b = SyntheticBackend::new(SyntheticConfig {
            max_batch: 2,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let e = b.encode("a cat").unwrap();
        let reqs: Vec<_> = (0..3).map(|s| GenerateRequest::new(e.clone(), s)).collect();
        assert!(matches!(
            b.generate_batch(&reqs),
            Err(BackendError::BatchTooLarge { len: 3, max: 2 })
        ));
        let single = b.generate_batch(&reqs[..1]).unwrap();
        assert_eq!(single[0], b.generate(&reqs[0]).unwrap());
    }

    #[test]
    fn unknown_refs() {
        let b = backend();
        assert!(matches!(b.distance_ids("nope", "nope"), Err(BackendError::UnknownRef(_))));
    }

    #[test]
    fn jitter_is_bounded_symmetric_and_zero_on_identity() {
        let b = SyntheticBackend::new(SyntheticConfig {
            distance_noise: true,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let e = b.encode("a cat").unwrap();
        let v = axis_vector(&b);
        let refs: Vec<ImageRef> = [0.0, 3.0, 9.0]
            .iter()
            .map(|&a| {
                let s = apply_steering(&e, &TokenSpan::single(1), &v, a).unwrap();
                b.generate(&GenerateRequest::new(s, 0)).unwrap()
            })
            .collect();
        for x in &refs {
            assert_eq!(b.distance(x, x).unwrap(), 0.0);
            for y in &refs {
                let d = b.distance(x, y).unwrap();
                assert_eq!(d, b.distance(y, x).unwrap());
                assert!(d >= 0.0);
                let exact = (b.world().response(SyntheticBackend::effective_alpha(&x.id).unwrap())
                    - b.world().response(SyntheticBackend::effective_alpha(&y.id).unwrap()))
                .abs();
                assert!((d - exact).abs() <= DISTANCE_JITTER + 1e-15);
            }
        }
    }
}
