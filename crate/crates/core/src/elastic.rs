//! Elastic range search over steering magnitudes.
//!
//! Control points on `[a_min, alpha_max]` are connected by springs whose
//! tension is the perceptual distance between neighbouring renders. Each
//! iteration either inserts a midpoint into the widest gap (EXPAND) or nudges
//! every interior point toward its larger-gap neighbour (MOVE). Points whose
//! distance to the unsteered render falls inside the similarity band are
//! returned as slider detents.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{generate_chunked, Backend, BackendError, GenerateRequest, ImageRef, Schedule};
use crate::select::EditType;
use crate::tensor::{apply_steering, dot, PromptEmbedding, SteeringVector, TensorError, TokenSpan};

#[derive(Debug, Error)]
pub enum ElasticError {
    #[error("invalid elastic configuration: {0}")]
    InvalidConfig(String),
    #[error("largest projection onto the steering direction is {max}; expected a positive value")]
    NonPositiveProjection { max: f64 },
    #[error("empty steering range [{a_min}, {a_max}] (needs width >= eps = {eps})")]
    InvalidRange { a_min: f64, a_max: f64, eps: f64 },
    #[error("iteration {t} outside 1..={total}")]
    StepOutOfRange { t: usize, total: usize },
    #[error("distance oracle returned {0}")]
    NonFiniteDistance(f64),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ElasticError>;

/// When a normalized gap is wide enough to split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpandRule {
    /// `G > expand_threshold`.
    #[default]
    Literal,
    /// `G > 1 + expand_threshold`, i.e. the gap overshoots the target.
    OverTarget,
}

impl ExpandRule {
    fn threshold(self, expand_threshold: f64) -> f64 {
        match self {
            ExpandRule::Literal => expand_threshold,
            ExpandRule::OverTarget => 1.0 + expand_threshold,
        }
    }
}

impl FromStr for ExpandRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "literal" => Ok(Self::Literal),
            "over_target" | "over-target" => Ok(Self::OverTarget),
            other => Err(format!("unknown expand rule `{other}` (expected literal or over_target)")),
        }
    }
}

/// Named similarity bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandPreset {
    /// [0.05, 0.15]
    Local,
    /// [0.15, 0.30]
    GlobalStylization,
    /// [0.15, 0.40], the faster runtime setup for local edits.
    LocalRuntime,
    /// [0.25, 0.40], the faster runtime setup for global and stylization edits.
    GlobalStylizationRuntime,
}

impl BandPreset {
    pub const ALL: [BandPreset; 4] = [
        BandPreset::Local,
        BandPreset::GlobalStylization,
        BandPreset::LocalRuntime,
        BandPreset::GlobalStylizationRuntime,
    ];

    pub fn band(self) -> (f64, f64) {
        match self {
            BandPreset::Local => (0.05, 0.15),
            BandPreset::GlobalStylization => (0.15, 0.30),
            BandPreset::LocalRuntime => (0.15, 0.40),
            BandPreset::GlobalStylizationRuntime => (0.25, 0.40),
        }
    }

    pub fn for_edit(edit: EditType) -> Self {
        match edit {
            EditType::Local => BandPreset::Local,
            EditType::Global | EditType::Stylization => BandPreset::GlobalStylization,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BandPreset::Local => "local",
            BandPreset::GlobalStylization => "global_stylization",
            BandPreset::LocalRuntime => "local_runtime",
            BandPreset::GlobalStylizationRuntime => "global_stylization_runtime",
        }
    }
}

impl fmt::Display for BandPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BandPreset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let norm = s.trim().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == norm)
            .ok_or_else(|| {
                format!("unknown band preset `{s}` (expected local, global_stylization, local_runtime or global_stylization_runtime)")
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElasticConfig {
    pub a_min: f64,
    pub a_max_cap: f64,
    pub target_gap: f64,
    /// Maximum iterations.
    pub iterations: usize,
    pub expand_threshold: f64,
    pub initial_points: usize,
    pub max_points: usize,
    pub lam: f64,
    pub eps: f64,
    pub move_fraction: f64,
    pub sim_min: f64,
    pub sim_max: f64,
    /// Initial MOVE step; half the initial spacing when unset.
    pub eta0: Option<f64>,
    pub max_extrapolation_steps: usize,
    pub expand_rule: ExpandRule,
}

impl Default for ElasticConfig {
    fn default() -> Self {
        Self::preset(BandPreset::Local)
    }
}

impl ElasticConfig {
    pub fn preset(preset: BandPreset) -> Self {
        let (sim_min, sim_max) = preset.band();
        Self {
            a_min: 0.0,
            a_max_cap: 100.0,
            target_gap: 0.25,
            iterations: 25,
            expand_threshold: 0.1,
            initial_points: 4,
            max_points: 10,
            lam: 1.0,
            eps: 0.01,
            move_fraction: 0.5,
            sim_min,
            sim_max,
            eta0: None,
            max_extrapolation_steps: 3,
            expand_rule: ExpandRule::Literal,
        }
    }

    pub fn for_edit(edit: EditType) -> Self {
        Self::preset(BandPreset::for_edit(edit))
    }

    pub fn with_band(mut self, preset: BandPreset) -> Self {
        (self.sim_min, self.sim_max) = preset.band();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ElasticError::InvalidConfig(m.to_string()));
        let finite = [
            self.a_min,
            self.a_max_cap,
            self.target_gap,
            self.expand_threshold,
            self.lam,
            self.eps,
            self.move_fraction,
            self.sim_min,
            self.sim_max,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return bad("all parameters must be finite");
        }
        if !(0.0 <= self.a_min && self.a_min < self.a_max_cap) {
            return bad("need 0 <= a_min < a_max_cap");
        }
        if self.initial_points < 2 || self.initial_points > self.max_points {
            return bad("need 2 <= initial_points <= max_points");
        }
        if !(self.move_fraction > 0.0 && self.move_fraction <= 1.0) {
            return bad("need 0 < move_fraction <= 1");
        }
        if !(0.0 <= self.sim_min && self.sim_min < self.sim_max) {
            return bad("need 0 <= sim_min < sim_max");
        }
        if self.iterations < 1 {
            return bad("need at least one iteration");
        }
        if self.target_gap <= 0.0 || self.eps <= 0.0 {
            return bad("target_gap and eps must be positive");
        }
        if self.lam < 0.0 {
            return bad("lam must be nonnegative");
        }
        if let Some(e) = self.eta0 {
            if !(e.is_finite() && e > 0.0) {
                return bad("eta0 must be positive");
            }
        }
        Ok(())
    }
}

/// Cosine-decayed MOVE step for iteration `t` of `total`.
pub fn eta(t: usize, total: usize, eta0: f64) -> Result<f64> {
    if t < 1 || t > total {
        return Err(ElasticError::StepOutOfRange { t, total });
    }
    Ok(eta0 * 0.5 * (1.0 + (PI * (t - 1) as f64 / total as f64).cos()))
}

/// Clamps a projection into `(0, a_max_cap]`.
pub fn alpha_max_from_projection(projection_max: f64, cfg: &ElasticConfig) -> Result<f64> {
    if !(projection_max > 0.0) {
        return Err(ElasticError::NonPositiveProjection { max: projection_max });
    }
    if projection_max > cfg.a_max_cap {
        tracing::warn!(projection_max, cap = cfg.a_max_cap, "alpha_max clamped to the cap");
        return Ok(cfg.a_max_cap);
    }
    Ok(projection_max)
}

/// Largest projection of the positive pooled features onto the raw
/// (unnormalized) steering direction, clamped into `(0, a_max_cap]`.
pub fn init_alpha_max(raw_s: &[f64], pos_pools: &[Vec<f64>], cfg: &ElasticConfig) -> Result<f64> {
    if pos_pools.is_empty() {
        return Err(TensorError::EmptyPools.into());
    }
    let mut max = f64::NEG_INFINITY;
    for pool in pos_pools {
        if pool.len() != raw_s.len() {
            return Err(TensorError::DimMismatch {
                expected: raw_s.len(),
                got: pool.len(),
            }
            .into());
        }
        max = max.max(dot(raw_s, pool));
    }
    alpha_max_from_projection(max, cfg)
}

/// Renders at steering magnitudes and measures perceptual distances.
pub trait RenderOracle {
    /// Distance between the renders at `a` and `b` for every pair, in order.
    fn distances(&mut self, pairs: &[(f64, f64)]) -> Result<Vec<f64>>;

    /// Distinct magnitudes rendered so far.
    fn generations_used(&self) -> usize;
}

fn alpha_key(alpha: f64) -> i64 {
    (alpha * 1e9).round() as i64
}

fn pair_key(a: f64, b: f64) -> (i64, i64) {
    let (ka, kb) = (alpha_key(a), alpha_key(b));
    (ka.min(kb), ka.max(kb))
}

/// Oracle over a closed-form response curve: `dist(a, b) = |r(a) - r(b)|`.
pub struct ResponseOracle<F> {
    response: F,
    rendered: BTreeMap<i64, f64>,
}

impl<F: Fn(f64) -> f64> ResponseOracle<F> {
    pub fn new(response: F) -> Self {
        Self {
            response,
            rendered: BTreeMap::new(),
        }
    }
}

impl<F: Fn(f64) -> f64> RenderOracle for ResponseOracle<F> {
    fn distances(&mut self, pairs: &[(f64, f64)]) -> Result<Vec<f64>> {
        pairs
            .iter()
            .map(|&(a, b)| {
                let ra = *self.rendered.entry(alpha_key(a)).or_insert_with(|| (self.response)(a));
                let rb = *self.rendered.entry(alpha_key(b)).or_insert_with(|| (self.response)(b));
                let d = (ra - rb).abs();
                if d.is_finite() {
                    Ok(d)
                } else {
                    Err(ElasticError::NonFiniteDistance(d))
                }
            })
            .collect()
    }

    fn generations_used(&self) -> usize {
        self.rendered.len()
    }
}

/// Renders one prompt through a backend, steering the selected span.
///
/// Each distinct magnitude (rounded to 1e-9) is rendered once; all renders
/// needed by one call go out together in `max_batch`-sized batches.
pub struct BackendOracle<'a> {
    backend: &'a dyn Backend,
    embedding: PromptEmbedding,
    span: TokenSpan,
    vector: SteeringVector,
    seed: u64,
    schedule: Schedule,
    renders: BTreeMap<i64, ImageRef>,
    distances: HashMap<(i64, i64), f64>,
}

impl<'a> BackendOracle<'a> {
    pub fn new(
        backend: &'a dyn Backend,
        embedding: PromptEmbedding,
        span: TokenSpan,
        vector: SteeringVector,
        seed: u64,
        schedule: Schedule,
    ) -> Result<Self> {
        span.validate_for(&embedding)?;
        if vector.dim() != embedding.dim() {
            return Err(TensorError::DimMismatch {
                expected: embedding.dim(),
                got: vector.dim(),
            }
            .into());
        }
        Ok(Self {
            backend,
            embedding,
            span,
            vector,
            seed,
            schedule,
            renders: BTreeMap::new(),
            distances: HashMap::new(),
        })
    }

    /// Renders every magnitude not rendered yet.
    pub fn render(&mut self, alphas: &[f64]) -> Result<Vec<ImageRef>> {
        let mut missing: Vec<f64> = Vec::new();
        for &a in alphas {
            let k = alpha_key(a);
            if !self.renders.contains_key(&k) && !missing.iter().any(|&m| alpha_key(m) == k) {
                missing.push(a);
            }
        }
        if !missing.is_empty() {
            let requests = missing
                .iter()
                .map(|&a| {
                    let emb = apply_steering(&self.embedding, &self.span, &self.vector, a)?;
                    Ok(GenerateRequest::new(emb, self.seed)
                        .with_schedule(self.schedule)
                        .with_alpha(a))
                })
                .collect::<Result<Vec<_>>>()?;
            let refs = generate_chunked(self.backend, &requests)?;
            for (a, r) in missing.iter().zip(refs) {
                self.renders.insert(alpha_key(*a), r);
            }
        }
        Ok(alphas.iter().map(|a| self.renders[&alpha_key(*a)].clone()).collect())
    }

    pub fn rendered(&self) -> impl Iterator<Item = &ImageRef> {
        self.renders.values()
    }
}

impl RenderOracle for BackendOracle<'_> {
    fn distances(&mut self, pairs: &[(f64, f64)]) -> Result<Vec<f64>> {
        let alphas: Vec<f64> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        self.render(&alphas)?;
        pairs
            .iter()
            .map(|&(a, b)| {
                let key = pair_key(a, b);
                if key.0 == key.1 {
                    return Ok(0.0);
                }
                if let Some(&d) = self.distances.get(&key) {
                    return Ok(d);
                }
                let d = self
                    .backend
                    .distance(&self.renders[&key.0], &self.renders[&key.1])?;
                if !d.is_finite() || d < 0.0 {
                    return Err(ElasticError::NonFiniteDistance(d));
                }
                self.distances.insert(key, d);
                Ok(d)
            })
            .collect()
    }

    fn generations_used(&self) -> usize {
        self.renders.len()
    }
}

/// Doubles `alpha_max` while the render stays within `sim_max` of the
/// unsteered render, at most `max_extrapolation_steps` times and never past
/// `a_max_cap`. Returns the final magnitude and the number of accepted steps.
pub fn extrapolate_alpha_max(
    oracle: &mut dyn RenderOracle,
    alpha_max: f64,
    cfg: &ElasticConfig,
) -> Result<(f64, usize)> {
    cfg.validate()?;
    if !(alpha_max > 0.0 && alpha_max.is_finite()) {
        return Err(ElasticError::NonPositiveProjection { max: alpha_max });
    }
    let mut current = alpha_max;
    let mut steps = 0;
    while steps < cfg.max_extrapolation_steps && current < cfg.a_max_cap {
        let candidate = (2.0 * current).min(cfg.a_max_cap);
        let d = oracle.distances(&[(0.0, candidate)])?[0];
        if d > cfg.sim_max {
            break;
        }
        current = candidate;
        steps += 1;
    }
    Ok((current, steps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPointSet {
    pub points: Vec<f64>,
    /// Raw distances between neighbouring points.
    pub gaps: Vec<f64>,
    pub normalized_gaps: Vec<f64>,
    pub iterations_used: usize,
    pub generations_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub valid_points: Vec<f64>,
    pub band: ControlPointSet,
    /// Distance of each band point to the unsteered render.
    pub similarities: Vec<f64>,
    pub alpha_max_used: f64,
    pub extrapolation_steps_taken: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + step * i as f64 })
        .collect()
}

fn neighbour_pairs(x: &[f64]) -> Vec<(f64, f64)> {
    x.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Runs the MOVE/EXPAND search on `[a_min, alpha_max]` and filters the final
/// points by the similarity band.
pub fn elastic_band_search(
    oracle: &mut dyn RenderOracle,
    alpha_max: f64,
    cfg: &ElasticConfig,
) -> Result<CalibrationResult> {
    cfg.validate()?;
    let width = alpha_max - cfg.a_min;
    if !width.is_finite() || width < cfg.eps * (1.0 - 1e-9) {
        return Err(ElasticError::InvalidRange {
            a_min: cfg.a_min,
            a_max: alpha_max,
            eps: cfg.eps,
        });
    }
    // Keep the initial spacing at least eps on very short ranges.
    let fit = ((width / cfg.eps) * (1.0 + 1e-9)).floor() as usize + 1;
    let n0 = cfg.initial_points.min(fit).max(2);
    let mut x = linspace(cfg.a_min, alpha_max, n0);
    let eta0 = cfg.eta0.unwrap_or(width / (2.0 * (n0 - 1) as f64));
    let move_threshold = cfg.move_fraction * cfg.eps;
    let expand_above = cfg.expand_rule.threshold(cfg.expand_threshold);

    let mut iterations_used = 0;
    for t in 1..=cfg.iterations {
        iterations_used = t;
        let g: Vec<f64> = oracle
            .distances(&neighbour_pairs(&x))?
            .into_iter()
            .map(|d| d / cfg.target_gap)
            .collect();

        // Widest gap that can still be split without breaking eps spacing;
        // lowest index on ties.
        let mut k: Option<usize> = None;
        for i in 0..g.len() {
            if x[i + 1] - x[i] >= 2.0 * cfg.eps && k.map_or(true, |k| g[i] > g[k]) {
                k = Some(i);
            }
        }
        if let Some(k) = k {
            if g[k] > expand_above && x.len() < cfg.max_points {
                let mid = 0.5 * (x[k] + x[k + 1]);
                x.insert(k + 1, mid);
                continue;
            }
        }

        let base_step = eta(t, cfg.iterations, eta0)?;
        let mut moved = false;
        for i in 1..x.len().saturating_sub(1) {
            let (l, r) = (g[i - 1], g[i]);
            let step = base_step * (1.0 + cfg.lam * (l - r).abs());
            let new_a = if l > r {
                (x[i - 1] + cfg.eps).max(x[i] - step)
            } else {
                (x[i + 1] - cfg.eps).min(x[i] + step)
            };
            if (new_a - x[i]).abs() >= move_threshold {
                x[i] = new_a;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }

    let gaps = oracle.distances(&neighbour_pairs(&x))?;
    let to_origin: Vec<(f64, f64)> = x.iter().map(|&a| (0.0, a)).collect();
    let similarities = oracle.distances(&to_origin)?;
    let valid_points: Vec<f64> = x
        .iter()
        .zip(&similarities)
        .filter(|(_, &s)| cfg.sim_min <= s && s <= cfg.sim_max)
        .map(|(&a, _)| a)
        .collect();
    let diagnostic = valid_points.is_empty().then(|| {
        let lo = similarities.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = similarities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        format!(
            "no control point inside the similarity band [{}, {}]; distances to the unsteered render span [{lo:.4}, {hi:.4}]",
            cfg.sim_min, cfg.sim_max
        )
    });
    Ok(CalibrationResult {
        valid_points,
        band: ControlPointSet {
            normalized_gaps: gaps.iter().map(|d| d / cfg.target_gap).collect(),
            gaps,
            points: x,
            iterations_used,
            generations_used: oracle.generations_used(),
        },
        similarities,
        alpha_max_used: alpha_max,
        extrapolation_steps_taken: 0,
        diagnostic,
    })
}

/// Initialization from a recorded projection, extrapolation, then search.
pub fn calibrate(
    oracle: &mut dyn RenderOracle,
    projection_max: f64,
    cfg: &ElasticConfig,
) -> Result<CalibrationResult> {
    cfg.validate()?;
    let seed = alpha_max_from_projection(projection_max, cfg)?;
    let (alpha_max, steps) = extrapolate_alpha_max(oracle, seed, cfg)?;
    let mut result = elastic_band_search(oracle, alpha_max, cfg)?;
    result.extrapolation_steps_taken = steps;
    Ok(result)
}
