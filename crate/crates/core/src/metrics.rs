//! Slider continuity.
//!
//! A slider is sampled at `N` evenly spaced strengths. Semantic increments
//! come from an external scorer, perceptual increments from the backend
//! distance. Both are normalized into distributions and compared with the
//! total variation distance (MID); lower means the edit advances at the same
//! pace as the picture changes.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::wire::{ScoreBody, ScoreResponse, SCORE_PATH};
use crate::backend::{Backend, BackendError, ImageRef, RemoteConfig, SyntheticBackend, SyntheticWorld};
use crate::elastic::{BackendOracle, ElasticError};
use crate::http::{JsonClient, RetryPolicy};

pub const DEFAULT_POINTS: usize = 6;
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Elastic(#[from] ElasticError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// `n` strengths `i / (n - 1) * alpha_max`.
pub fn uniform_alphas(alpha_max: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(MetricsError::InvalidInput(format!("need at least 2 points, got {n}")));
    }
    if !alpha_max.is_finite() {
        return Err(MetricsError::InvalidInput("alpha_max must be finite".into()));
    }
    Ok((0..n)
        .map(|i| i as f64 / (n - 1) as f64 * alpha_max)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliderTrace {
    pub alphas: Vec<f64>,
    pub semantic_scores: Vec<f64>,
    pub refs: Vec<ImageRef>,
}

impl SliderTrace {
    pub fn new(alphas: Vec<f64>, semantic_scores: Vec<f64>, refs: Vec<ImageRef>) -> Result<Self> {
        let n = alphas.len();
        if n < 2 {
            return Err(MetricsError::InvalidTrace(format!("need at least 2 points, got {n}")));
        }
        if semantic_scores.len() != n || refs.len() != n {
            return Err(MetricsError::InvalidTrace(format!(
                "{n} alphas, {} scores, {} images",
                semantic_scores.len(),
                refs.len()
            )));
        }
        if alphas[0] != 0.0 {
            return Err(MetricsError::InvalidTrace("first strength must be 0".into()));
        }
        let alpha_max = alphas[n - 1];
        for (i, a) in alphas.iter().enumerate() {
            let expected = i as f64 / (n - 1) as f64 * alpha_max;
            if (a - expected).abs() > 1e-9 {
                return Err(MetricsError::InvalidTrace(format!(
                    "strength {i} is {a}, expected {expected}"
                )));
            }
        }
        if semantic_scores.iter().any(|s| !s.is_finite()) {
            return Err(MetricsError::InvalidTrace("non-finite semantic score".into()));
        }
        Ok(Self {
            alphas,
            semantic_scores,
            refs,
        })
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn alpha_max(&self) -> f64 {
        self.alphas[self.alphas.len() - 1]
    }
}

/// Semantic and perceptual increments between neighbouring samples.
pub fn increments(trace: &SliderTrace, dist: &dyn Backend) -> Result<(Vec<f64>, Vec<f64>)> {
    let dv = trace
        .semantic_scores
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .collect();
    let dd = trace
        .refs
        .windows(2)
        .map(|w| dist.distance(&w[1], &w[0]))
        .collect::<std::result::Result<_, _>>()?;
    Ok((dv, dd))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementDistributions {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub epsilon_used: f64,
}

/// Divides each list by its sum plus `epsilon`.
pub fn normalize_increments(dv: &[f64], dd: &[f64], epsilon: f64) -> Result<IncrementDistributions> {
    if dv.len() != dd.len() {
        return Err(MetricsError::LengthMismatch(dv.len(), dd.len()));
    }
    if dv.is_empty() {
        return Err(MetricsError::InvalidInput("no increments".into()));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(MetricsError::InvalidInput("epsilon must be positive".into()));
    }
    if dv.iter().chain(dd).any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(MetricsError::InvalidInput("increments must be finite and nonnegative".into()));
    }
    let norm = |v: &[f64]| {
        let total = v.iter().sum::<f64>() + epsilon;
        v.iter().map(|x| x / total).collect()
    };
    Ok(IncrementDistributions {
        p: norm(dv),
        q: norm(dd),
        epsilon_used: epsilon,
    })
}

/// Total variation distance between the two increment distributions.
pub fn mid_dist(dists: &IncrementDistributions) -> Result<f64> {
    if dists.p.len() != dists.q.len() {
        return Err(MetricsError::LengthMismatch(dists.p.len(), dists.q.len()));
    }
    let tv = 0.5
        * dists
            .p
            .iter()
            .zip(&dists.q)
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>();
    Ok(tv.clamp(0.0, 1.0))
}

/// MID of a trace with the given distance oracle.
pub fn trace_mid(trace: &SliderTrace, dist: &dyn Backend, epsilon: f64) -> Result<f64> {
    let (dv, dd) = increments(trace, dist)?;
    mid_dist(&normalize_increments(&dv, &dd, epsilon)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub alpha: f64,
    pub vqa: f64,
    pub dreamsim: f64,
}

/// Mean semantic score and mean distance to the unsteered image at each
/// strength, across traces sharing one strength grid.
pub fn tradeoff_curve(traces: &[SliderTrace], dist: &dyn Backend) -> Result<Vec<TradeoffRow>> {
    let first = traces
        .first()
        .ok_or_else(|| MetricsError::InvalidInput("no traces".into()))?;
    for t in traces {
        if t.len() != first.len()
            || t.alphas.iter().zip(&first.alphas).any(|(a, b)| (a - b).abs() > 1e-9)
        {
            return Err(MetricsError::InvalidInput(
                "traces must share the same strengths".into(),
            ));
        }
    }
    let k = traces.len() as f64;
    (0..first.len())
        .map(|i| {
            let mut vqa = 0.0;
            let mut dreamsim = 0.0;
            for t in traces {
                vqa += t.semantic_scores[i];
                dreamsim += dist.distance(&t.refs[0], &t.refs[i])?;
            }
            Ok(TradeoffRow {
                alpha: first.alphas[i],
                vqa: vqa / k,
                dreamsim: dreamsim / k,
            })
        })
        .collect()
}

/// `%.9g`-style formatting: nine significant digits, trailing zeros trimmed.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa.to_string()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn tradeoff_csv(rows: &[TradeoffRow]) -> String {
    let mut out = String::from("alpha,vqa,dreamsim\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", fmt_sig9(r.alpha), fmt_sig9(r.vqa), fmt_sig9(r.dreamsim)));
    }
    out
}

/// Per-step increments of one trace as CSV.
pub fn increments_csv(trace: &SliderTrace, dists: &IncrementDistributions, dv: &[f64], dd: &[f64]) -> String {
    let mut out = String::from("step,alpha_from,alpha_to,dv,dd,p,q\n");
    for i in 0..dv.len() {
        out.push_str(&format!(
            "{i},{},{},{},{},{},{}\n",
            fmt_sig9(trace.alphas[i]),
            fmt_sig9(trace.alphas[i + 1]),
            fmt_sig9(dv[i]),
            fmt_sig9(dd[i]),
            fmt_sig9(dists.p[i]),
            fmt_sig9(dists.q[i]),
        ));
    }
    out
}

/// Portable record of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceBundle {
    pub alpha_max: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub alphas: Vec<f64>,
    pub image_ids: Vec<String>,
    pub semantic_scores: Vec<f64>,
    /// Name of the perceptual distance behind the increments.
    #[serde(default)]
    pub distance_oracle: String,
}

impl TraceBundle {
    pub fn from_trace(trace: &SliderTrace, distance_oracle: impl Into<String>) -> Self {
        Self {
            alpha_max: trace.alpha_max(),
            n: trace.len(),
            alphas: trace.alphas.clone(),
            image_ids: trace.refs.iter().map(|r| r.id.clone()).collect(),
            semantic_scores: trace.semantic_scores.clone(),
            distance_oracle: distance_oracle.into(),
        }
    }
}

/// Semantic edit score of a rendered image.
pub trait Scorer: Send + Sync {
    fn score(&self, image: &ImageRef, question: &str) -> std::result::Result<f64, BackendError>;
}

/// Scores through `POST /v1/score`.
pub struct RemoteScorer {
    client: JsonClient,
}

impl RemoteScorer {
    pub fn new(config: &RemoteConfig) -> Self {
        let bearer = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        Self {
            client: JsonClient::new(
                &config.base_url,
                Duration::from_secs_f64(config.timeout_s),
                RetryPolicy {
                    retries: config.retries,
                    initial_backoff: Duration::from_millis(config.backoff_ms),
                },
            )
            .with_bearer(bearer),
        }
    }
}

impl Scorer for RemoteScorer {
    fn score(&self, image: &ImageRef, question: &str) -> std::result::Result<f64, BackendError> {
        let resp: ScoreResponse = self.client.post_json(
            SCORE_PATH,
            &ScoreBody {
                image_id: image.id.clone(),
                question: question.to_string(),
            },
        )?;
        if !resp.score.is_finite() {
            return Err(BackendError::Protocol(format!("non-finite score {}", resp.score)));
        }
        Ok(resp.score)
    }
}

/// Scores synthetic images as `gain * r(alpha)`, proportional to the world's
/// perceptual response.
pub struct SyntheticScorer {
    world: SyntheticWorld,
    gain: f64,
}

impl SyntheticScorer {
    pub fn new(world: SyntheticWorld, gain: f64) -> Self {
        Self { world, gain }
    }

    pub fn for_backend(backend: &SyntheticBackend) -> Self {
        Self::new(backend.world().clone(), 1.0 / backend.world().max_distance())
    }

    pub fn world(&self) -> &SyntheticWorld {
        &self.world
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }
}

impl Scorer for SyntheticScorer {
    fn score(&self, image: &ImageRef, _question: &str) -> std::result::Result<f64, BackendError> {
        let alpha = SyntheticBackend::effective_alpha(&image.id)
            .ok_or_else(|| BackendError::UnknownRef(image.id.clone()))?;
        Ok(self.gain * self.world.response(alpha))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub trace: SliderTrace,
    pub dv: Vec<f64>,
    pub dd: Vec<f64>,
    pub distributions: IncrementDistributions,
    pub mid: f64,
}

/// Renders `n` evenly spaced strengths up to `alpha_max`, scores them and
/// computes MID.
pub fn evaluate_slider(
    oracle: &mut BackendOracle<'_>,
    backend: &dyn Backend,
    scorer: &dyn Scorer,
    question: &str,
    alpha_max: f64,
    n: usize,
    epsilon: f64,
) -> Result<Evaluation> {
    let alphas = uniform_alphas(alpha_max, n)?;
    let refs = oracle.render(&alphas)?;
    let scores = refs
        .iter()
        .map(|r| scorer.score(r, question))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let trace = SliderTrace::new(alphas, scores, refs)?;
    let (dv, dd) = increments(&trace, backend)?;
    let distributions = normalize_increments(&dv, &dd, epsilon)?;
    let mid = mid_dist(&distributions)?;
    Ok(Evaluation {
        trace,
        dv,
        dd,
        distributions,
        mid,
    })
}
