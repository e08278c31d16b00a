//! Prompt embeddings and steering-vector arithmetic.
//!
//! Everything here is a pure function over immutable inputs. Embeddings are
//! held as `f64` regardless of the precision the encoder delivered, so the
//! oracle comparisons in the test suite can run at `1e-12`.

mod container;

pub use container::{ContainerDtype, TensorContainer, TokenRecord};

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

/// Raw directions with an l2 norm at or below this are treated as degenerate.
pub const DEGENERACY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("embedding has {rows} rows but {tokens} tokens")]
    RowTokenMismatch { rows: usize, tokens: usize },
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error("ragged matrix: row {row} has {got} columns, expected {expected}")]
    Ragged {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("token offsets out of order at token {index}")]
    OffsetOrder { index: usize },
    #[error("token span is empty")]
    EmptySpan,
    #[error("token index {index} out of range for {num_tokens} tokens")]
    IndexOutOfRange { index: usize, num_tokens: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("pooled lists differ in length: {pos} positive vs {neg} negative")]
    PairCountMismatch { pos: usize, neg: usize },
    #[error("no pooled vectors supplied")]
    EmptyPools,
    #[error("degenerate steering direction: raw norm {raw_norm:e} is at or below {DEGENERACY_TOLERANCE:e}")]
    DegenerateDirection { raw_norm: f64 },
    #[error("encoder mismatch: embedding from `{embedding}`, vector from `{vector}`")]
    EncoderMismatch { embedding: String, vector: String },
    #[error("step {step} out of range for {total_steps} total steps")]
    StepOutOfRange { step: usize, total_steps: usize },
    #[error("invalid steering vector: {0}")]
    InvalidVector(String),
    #[error("tensor container: {0}")]
    Container(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// One token of an encoded prompt with its character range `[start, end)`.
///
/// Offsets count Unicode scalar values, not bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn new(text: impl Into<String>, start: usize, end: usize) -> Self {
        Self {
            text: text.into(),
            start,
            end,
        }
    }
}

/// Text-encoder output for one prompt: one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding {
    prompt_text: String,
    tokens: Vec<Token>,
    rows: Vec<Vec<f64>>,
    encoder_id: String,
}

impl PromptEmbedding {
    pub fn new(
        prompt_text: impl Into<String>,
        tokens: Vec<Token>,
        rows: Vec<Vec<f64>>,
        encoder_id: impl Into<String>,
    ) -> Result<Self> {
        if rows.len() != tokens.len() {
            return Err(TensorError::RowTokenMismatch {
                rows: rows.len(),
                tokens: tokens.len(),
            });
        }
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if dim == 0 {
            return Err(TensorError::ZeroDim);
        }
        for (row, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(TensorError::Ragged {
                    row,
                    got: r.len(),
                    expected: dim,
                });
            }
        }
        let mut last_end = 0;
        for (index, t) in tokens.iter().enumerate() {
            if t.start > t.end || t.start < last_end {
                return Err(TensorError::OffsetOrder { index });
            }
            last_end = t.end;
        }
        Ok(Self {
            prompt_text: prompt_text.into(),
            tokens,
            rows,
            encoder_id: encoder_id.into(),
        })
    }

    pub fn prompt_text(&self) -> &str {
        &self.prompt_text
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.rows[index]
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn num_tokens(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }
}

/// Ordered, non-empty set of token positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct TokenSpan(BTreeSet<usize>);

impl TokenSpan {
    pub fn new(indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let set: BTreeSet<usize> = indices.into_iter().collect();
        if set.is_empty() {
            return Err(TensorError::EmptySpan);
        }
        Ok(Self(set))
    }

    pub fn single(index: usize) -> Self {
        Self(BTreeSet::from([index]))
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.contains(&index)
    }

    pub fn union(&self, other: &TokenSpan) -> TokenSpan {
        TokenSpan(self.0.union(&other.0).copied().collect())
    }

    /// Checks every index addresses a row of `emb`.
    pub fn validate_for(&self, emb: &PromptEmbedding) -> Result<()> {
        let num_tokens = emb.num_tokens();
        match self.0.iter().next_back() {
            Some(&index) if index >= num_tokens => {
                Err(TensorError::IndexOutOfRange { index, num_tokens })
            }
            _ => Ok(()),
        }
    }
}

impl TryFrom<Vec<usize>> for TokenSpan {
    type Error = TensorError;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        TokenSpan::new(v)
    }
}

impl From<TokenSpan> for Vec<usize> {
    fn from(s: TokenSpan) -> Self {
        s.0.into_iter().collect()
    }
}

impl fmt::Display for TokenSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// Unit-norm concept direction together with the statistics it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    direction: Vec<f64>,
    raw_norm: f64,
    concept: String,
    pair_count: usize,
    encoder_id: String,
    /// Largest projection of the raw direction onto a positive pooled
    /// feature, kept so calibration can seed its range without re-encoding.
    projection_max: Option<f64>,
}

impl SteeringVector {
    /// Rebuilds a vector from persisted parts, re-checking its invariants.
    pub fn from_parts(
        direction: Vec<f64>,
        raw_norm: f64,
        concept: impl Into<String>,
        pair_count: usize,
        encoder_id: impl Into<String>,
        projection_max: Option<f64>,
    ) -> Result<Self> {
        if direction.is_empty() {
            return Err(TensorError::ZeroDim);
        }
        let norm = l2_norm(&direction);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(TensorError::InvalidVector(format!(
                "direction norm {norm} is not 1"
            )));
        }
        if raw_norm.is_nan() || raw_norm <= 0.0 {
            return Err(TensorError::InvalidVector(format!(
                "raw_norm {raw_norm} must be positive"
            )));
        }
        if pair_count == 0 {
            return Err(TensorError::InvalidVector("pair_count must be >= 1".into()));
        }
        Ok(Self {
            direction,
            raw_norm,
            concept: concept.into(),
            pair_count,
            encoder_id: encoder_id.into(),
            projection_max,
        })
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn raw_norm(&self) -> f64 {
        self.raw_norm
    }

    pub fn concept(&self) -> &str {
        &self.concept
    }

    pub fn pair_count(&self) -> usize {
        self.pair_count
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }

    pub fn projection_max(&self) -> Option<f64> {
        self.projection_max
    }

    pub fn with_projection_max(mut self, value: f64) -> Self {
        self.projection_max = Some(value);
        self
    }

    /// The unnormalized difference-of-means vector, `raw_norm · direction`.
    pub fn raw_direction(&self) -> Vec<f64> {
        self.direction.iter().map(|x| x * self.raw_norm).collect()
    }
}

/// How the steering strength evolves across the generator's timesteps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    #[default]
    Uniform,
    LinearRamp,
    NegatedUniform,
}

impl ScheduleMode {
    pub const ALL: [ScheduleMode; 3] = [
        ScheduleMode::Uniform,
        ScheduleMode::LinearRamp,
        ScheduleMode::NegatedUniform,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleMode::Uniform => "uniform",
            ScheduleMode::LinearRamp => "linear_ramp",
            ScheduleMode::NegatedUniform => "negated_uniform",
        }
    }
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ScheduleMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ScheduleMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                format!("unknown schedule `{s}` (expected uniform, linear_ramp or negated_uniform)")
            })
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean of the rows of `emb` addressed by `span`.
pub fn pool_span(emb: &PromptEmbedding, span: &TokenSpan) -> Result<Vec<f64>> {
    if span.is_empty() {
        return Err(TensorError::EmptySpan);
    }
    span.validate_for(emb)?;
    let mut acc = vec![0.0; emb.dim()];
    for index in span.indices() {
        for (a, x) in acc.iter_mut().zip(emb.row(index)) {
            *a += x;
        }
    }
    let n = span.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

fn mean_of(vectors: &[Vec<f64>], dim: usize) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; dim];
    for v in vectors {
        if v.len() != dim {
            return Err(TensorError::DimMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let k = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Ok(acc)
}

/// `mean(pos) − mean(neg)` and its l2 norm. Index `i` of both lists is a pair.
pub fn difference_of_means(
    pos_pools: &[Vec<f64>],
    neg_pools: &[Vec<f64>],
) -> Result<(Vec<f64>, f64)> {
    if pos_pools.len() != neg_pools.len() {
        return Err(TensorError::PairCountMismatch {
            pos: pos_pools.len(),
            neg: neg_pools.len(),
        });
    }
    let dim = pos_pools.first().ok_or(TensorError::EmptyPools)?.len();
    if dim == 0 {
        return Err(TensorError::ZeroDim);
    }
    let pos_mean = mean_of(pos_pools, dim)?;
    let neg_mean = mean_of(neg_pools, dim)?;
    let s: Vec<f64> = pos_mean.iter().zip(&neg_mean).map(|(p, n)| p - n).collect();
    let raw_norm = l2_norm(&s);
    Ok((s, raw_norm))
}

pub fn normalize(
    s: &[f64],
    raw_norm: f64,
    concept: impl Into<String>,
    pair_count: usize,
    encoder_id: impl Into<String>,
) -> Result<SteeringVector> {
    if raw_norm.is_nan() || raw_norm <= DEGENERACY_TOLERANCE {
        return Err(TensorError::DegenerateDirection { raw_norm });
    }
    if pair_count == 0 {
        return Err(TensorError::InvalidVector("pair_count must be >= 1".into()));
    }
    if s.is_empty() {
        return Err(TensorError::ZeroDim);
    }
    let direction = s.iter().map(|x| x / raw_norm).collect();
    Ok(SteeringVector {
        direction,
        raw_norm,
        concept: concept.into(),
        pair_count,
        encoder_id: encoder_id.into(),
        projection_max: None,
    })
}

/// Returns a copy of `emb` with `alpha · direction` added to every span row.
pub fn apply_steering(
    emb: &PromptEmbedding,
    span: &TokenSpan,
    vector: &SteeringVector,
    alpha: f64,
) -> Result<PromptEmbedding> {
    if emb.encoder_id() != vector.encoder_id() {
        return Err(TensorError::EncoderMismatch {
            embedding: emb.encoder_id().to_string(),
            vector: vector.encoder_id().to_string(),
        });
    }
    if emb.dim() != vector.dim() {
        return Err(TensorError::DimMismatch {
            expected: emb.dim(),
            got: vector.dim(),
        });
    }
    span.validate_for(emb)?;
    let mut out = emb.clone();
    if alpha == 0.0 {
        return Ok(out);
    }
    for index in span.indices() {
        for (x, d) in out.rows[index].iter_mut().zip(vector.direction()) {
            *x += alpha * d;
        }
    }
    Ok(out)
}

/// Effective steering strength at generator step `step` of `total_steps`.
pub fn schedule_alpha(
    alpha: f64,
    mode: ScheduleMode,
    step: usize,
    total_steps: usize,
) -> Result<f64> {
    if total_steps == 0 || step >= total_steps {
        return Err(TensorError::StepOutOfRange { step, total_steps });
    }
    Ok(match mode {
        ScheduleMode::Uniform => alpha,
        ScheduleMode::LinearRamp => (step + 1) as f64 / total_steps as f64 * alpha,
        ScheduleMode::NegatedUniform => -alpha,
    })
}

/// Largest inner product between `s_raw` and any of `pos_pools`.
///
/// The result may be negative; deciding what that means is up to the caller.
pub fn max_positive_projection(s_raw: &[f64], pos_pools: &[Vec<f64>]) -> Result<f64> {
    if pos_pools.is_empty() {
        return Err(TensorError::EmptyPools);
    }
    let mut best = f64::NEG_INFINITY;
    for pool in pos_pools {
        if pool.len() != s_raw.len() {
            return Err(TensorError::DimMismatch {
                expected: s_raw.len(),
                got: pool.len(),
            });
        }
        best = best.max(dot(s_raw, pool));
    }
    Ok(best)
}
