//! Contrastive prompt-pair datasets and the steering-vector build pipeline.
//!
//! A dataset is a JSON Lines file with exactly four keys per line:
//!
//! ```text
//! {"pos_style": "bright", "neg_style": "dark", "pos": "A bright living room with large windows.", "neg": "A dark living room with large windows."}
//! ```
//!
//! Every line shares the same identifiers and each identifier must appear in
//! its sentence. The steering vector is the normalized difference of the mean
//! pooled style-token features of the positive and negative sentences.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{encode_many, Backend, BackendError};
use crate::llm::{ChatMessage, LlmClient, LlmError};
use crate::prompts;
use crate::tensor::{
    difference_of_means, max_positive_projection, normalize, pool_span, PromptEmbedding,
    SteeringVector, TensorError, TokenSpan,
};
use crate::text;

/// Pair count used when none is given.
pub const DEFAULT_PAIR_COUNT: usize = 100;
/// Attempts at getting a valid reply from the LLM.
pub const DEFAULT_LLM_ATTEMPTS: usize = 3;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("dataset files must be UTF-8 without a byte-order mark")]
    Bom,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("line {line}: malformed JSON: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("line {line}: identifier `{style}` does not appear in the {side} sentence")]
    StyleNotInSentence {
        line: usize,
        side: &'static str,
        style: String,
    },
    #[error("line {line}: positive and negative sentences are identical")]
    IdenticalSentences { line: usize },
    #[error("line {line}: empty {field}")]
    EmptyField { line: usize, field: &'static str },
    #[error("line {line}: identifiers ({got_pos}, {got_neg}) differ from ({pos}, {neg}) used by line 1")]
    InconsistentIdentifiers {
        line: usize,
        pos: String,
        neg: String,
        got_pos: String,
        got_neg: String,
    },
    #[error("expected {expected} pairs, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("pair count k must be at least 1")]
    InvalidPairCount,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("LLM reply rejected after {attempts} attempts: {reason}")]
    ReplyRejected {
        attempts: usize,
        reason: Box<DatasetError>,
        raw_reply: String,
    },
    #[error("style `{style}` not found in prompt `{prompt}`")]
    StyleNotFound { style: String, prompt: String },
    #[error("no token overlaps style `{style}`; token offsets are inconsistent with the prompt")]
    OverlapEmpty { style: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastivePair {
    pub pos_style: String,
    pub neg_style: String,
    pub pos: String,
    pub neg: String,
}

impl ContrastivePair {
    pub fn new(
        pos_style: impl Into<String>,
        neg_style: impl Into<String>,
        pos: impl Into<String>,
        neg: impl Into<String>,
    ) -> Self {
        Self {
            pos_style: pos_style.into(),
            neg_style: neg_style.into(),
            pos: pos.into(),
            neg: neg.into(),
        }
    }

    /// Checks the pair on its own; `line` is only used in error messages.
    pub fn validate(&self, line: usize) -> Result<()> {
        for (field, value) in [
            ("pos_style", &self.pos_style),
            ("neg_style", &self.neg_style),
            ("pos", &self.pos),
            ("neg", &self.neg),
        ] {
            if value.trim().is_empty() {
                return Err(DatasetError::EmptyField { line, field });
            }
        }
        if !text::contains_ci(&self.pos, &self.pos_style) {
            return Err(DatasetError::StyleNotInSentence {
                line,
                side: "positive",
                style: self.pos_style.clone(),
            });
        }
        if !text::contains_ci(&self.neg, &self.neg_style) {
            return Err(DatasetError::StyleNotInSentence {
                line,
                side: "negative",
                style: self.neg_style.clone(),
            });
        }
        if self.pos == self.neg {
            return Err(DatasetError::IdenticalSentences { line });
        }
        Ok(())
    }

    /// Number of words that differ between the sentences beyond what the
    /// identifiers themselves account for.
    pub fn extra_token_diff(&self) -> usize {
        let lower = |s: &str| -> Vec<String> {
            text::words(s).into_iter().map(|w| w.text.to_lowercase()).collect()
        };
        let pos = lower(&self.pos);
        let mut neg = lower(&self.neg);
        let mut unmatched_pos = 0;
        for w in &pos {
            if let Some(i) = neg.iter().position(|n| n == w) {
                neg.swap_remove(i);
            } else {
                unmatched_pos += 1;
            }
        }
        let diff = unmatched_pos + neg.len();
        let allowed = text::words(&self.pos_style).len() + text::words(&self.neg_style).len();
        diff.saturating_sub(allowed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastiveDataset {
    concept: String,
    pairs: Vec<ContrastivePair>,
}

/// Non-fatal findings from validation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub warnings: Vec<String>,
}

impl ContrastiveDataset {
    pub fn new(concept: impl Into<String>, pairs: Vec<ContrastivePair>) -> Result<Self> {
        validate_pairs(&pairs)?;
        Ok(Self {
            concept: concept.into(),
            pairs,
        })
    }

    pub fn concept(&self) -> &str {
        &self.concept
    }

    pub fn pairs(&self) -> &[ContrastivePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pos_style(&self) -> &str {
        &self.pairs[0].pos_style
    }

    pub fn neg_style(&self) -> &str {
        &self.pairs[0].neg_style
    }

    /// Lint warnings for pairs that differ in more than their identifiers.
    pub fn lint(&self) -> ValidationReport {
        let warnings = self
            .pairs
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let extra = p.extra_token_diff();
                (extra > 0).then(|| {
                    format!("line {}: sentences differ in {extra} word(s) beyond the identifiers", i + 1)
                })
            })
            .collect();
        ValidationReport { warnings }
    }

    /// JSON Lines text, one pair per line, keys in canonical order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&pair_to_line(p));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }
}

fn validate_pairs(pairs: &[ContrastivePair]) -> Result<()> {
    let first = pairs.first().ok_or(DatasetError::EmptyDataset)?;
    for (i, p) in pairs.iter().enumerate() {
        let line = i + 1;
        p.validate(line)?;
        if p.pos_style != first.pos_style || p.neg_style != first.neg_style {
            return Err(DatasetError::InconsistentIdentifiers {
                line,
                pos: first.pos_style.clone(),
                neg: first.neg_style.clone(),
                got_pos: p.pos_style.clone(),
                got_neg: p.neg_style.clone(),
            });
        }
    }
    Ok(())
}

// `{"a": 1, "b": 2}` spacing, matching how generated datasets are written.
struct SpacedFormatter;

impl serde_json::ser::Formatter for SpacedFormatter {
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        if first {
            Ok(())
        } else {
            writer.write_all(b", ")
        }
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        writer.write_all(b": ")
    }
}

fn pair_to_line(p: &ContrastivePair) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SpacedFormatter);
    p.serialize(&mut ser).expect("pair serializes");
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

fn parse_line(line_no: usize, line: &str) -> Result<ContrastivePair> {
    serde_json::from_str(line).map_err(|e| {
        let message = e.to_string();
        match message
            .strip_prefix("missing field `")
            .and_then(|rest| rest.split('`').next())
        {
            Some(field) => DatasetError::MissingField {
                line: line_no,
                field: field.to_string(),
            },
            None => DatasetError::MalformedLine {
                line: line_no,
                message,
            },
        }
    })
}

/// Parses JSON Lines text. Blank lines are skipped; line numbers in errors
/// refer to the input text.
pub fn parse_jsonl(text: &str) -> Result<Vec<ContrastivePair>> {
    if text.starts_with('\u{feff}') {
        return Err(DatasetError::Bom);
    }
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let pair = parse_line(i + 1, trimmed)?;
        pair.validate(i + 1)?;
        pairs.push(pair);
    }
    if pairs.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    validate_pairs(&pairs)?;
    Ok(pairs)
}

/// Loads and validates a dataset file. The concept is named after the
/// identifiers, e.g. `bright vs dark`.
pub fn load_dataset(path: &Path) -> Result<ContrastiveDataset> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(&[0xEF, 0xBB, 0xBF]) {
        return Err(DatasetError::Bom);
    }
    let text = String::from_utf8(bytes)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let pairs = parse_jsonl(&text)?;
    let concept = format!("{} vs {}", pairs[0].pos_style, pairs[0].neg_style);
    Ok(ContrastiveDataset { concept, pairs })
}

// LLM replies sometimes arrive fenced despite instructions.
fn strip_fences(reply: &str) -> String {
    reply
        .lines()
        .map(|l| if l.trim_start().starts_with("```") { "" } else { l })
        .collect::<Vec<_>>()
        .join("\n")
}

fn parse_reply(reply: &str, k: usize) -> Result<Vec<ContrastivePair>> {
    let pairs = parse_jsonl(&strip_fences(reply))?;
    if pairs.len() != k {
        return Err(DatasetError::CountMismatch {
            expected: k,
            got: pairs.len(),
        });
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateOptions {
    pub attempts: usize,
    pub temperature: f64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            attempts: DEFAULT_LLM_ATTEMPTS,
            temperature: 0.7,
        }
    }
}

/// Asks the LLM for `k` contrastive pairs, retrying invalid replies.
pub fn generate_dataset(
    concept: &str,
    k: usize,
    llm: &dyn LlmClient,
    options: GenerateOptions,
) -> Result<ContrastiveDataset> {
    if k == 0 {
        return Err(DatasetError::InvalidPairCount);
    }
    let messages = [
        ChatMessage::system(prompts::dataset_prompt(concept, k)),
        ChatMessage::user(format!(
            "Generate the {k} JSON Lines for the concept: {concept}"
        )),
    ];
    let attempts = options.attempts.max(1);
    let mut last = None;
    for attempt in 1..=attempts {
        let reply = llm.complete(&messages, options.temperature)?;
        match parse_reply(&reply, k) {
            Ok(pairs) => {
                return Ok(ContrastiveDataset {
                    concept: concept.to_string(),
                    pairs,
                })
            }
            Err(e) => {
                tracing::warn!(attempt, error = %e, "LLM dataset reply rejected");
                last = Some((e, reply));
            }
        }
    }
    let (reason, raw_reply) = last.expect("at least one attempt");
    Err(DatasetError::ReplyRejected {
        attempts,
        reason: Box::new(reason),
        raw_reply,
    })
}

/// Tokens overlapping the first occurrence of `style` in the prompt.
///
/// Matching is case-insensitive. Occurrences on word boundaries win over
/// occurrences inside longer words ("man" in "a woman and a man" picks the
/// second); among those the first is used.
pub fn locate_style_span(emb: &PromptEmbedding, style: &str) -> Result<TokenSpan> {
    let prompt = emb.prompt_text();
    let occurrences = text::find_all_ci(prompt, style.trim());
    let bounded: Vec<_> = occurrences
        .iter()
        .copied()
        .filter(|&r| text::on_word_boundary(prompt, r))
        .collect();
    let candidates = if bounded.is_empty() { &occurrences } else { &bounded };
    let &(start, end) = candidates.first().ok_or_else(|| DatasetError::StyleNotFound {
        style: style.to_string(),
        prompt: prompt.to_string(),
    })?;
    if candidates.len() > 1 {
        tracing::warn!(style, prompt, count = candidates.len(), "style occurs more than once; using the first");
    }
    let indices: Vec<usize> = emb
        .tokens()
        .iter()
        .enumerate()
        .filter(|(_, t)| t.start < end && t.end > start)
        .map(|(i, _)| i)
        .collect();
    TokenSpan::new(indices).map_err(|_| DatasetError::OverlapEmpty {
        style: style.to_string(),
    })
}

/// Pooled style-token features of every positive and negative sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeatures {
    pub pos: Vec<Vec<f64>>,
    pub neg: Vec<Vec<f64>>,
    pub encoder_id: String,
}

pub fn pool_dataset(ds: &ContrastiveDataset, backend: &dyn Backend) -> Result<PooledFeatures> {
    let sentences: Vec<&str> = ds
        .pairs
        .iter()
        .flat_map(|p| [p.pos.as_str(), p.neg.as_str()])
        .collect();
    let embeddings = encode_many(backend, &sentences)?;
    let mut pos = Vec::with_capacity(ds.len());
    let mut neg = Vec::with_capacity(ds.len());
    for (pair, chunk) in ds.pairs.iter().zip(embeddings.chunks_exact(2)) {
        let span = locate_style_span(&chunk[0], &pair.pos_style)?;
        pos.push(pool_span(&chunk[0], &span)?);
        let span = locate_style_span(&chunk[1], &pair.neg_style)?;
        neg.push(pool_span(&chunk[1], &span)?);
    }
    Ok(PooledFeatures {
        pos,
        neg,
        encoder_id: backend.capabilities().encoder_id.clone(),
    })
}

/// Encodes, pools, takes the difference of means and normalizes it. The
/// returned vector also records the largest positive projection of the raw
/// direction, which seeds range calibration.
pub fn build_steering_vector(ds: &ContrastiveDataset, backend: &dyn Backend) -> Result<SteeringVector> {
    let pools = pool_dataset(ds, backend)?;
    let (s, raw_norm) = difference_of_means(&pools.pos, &pools.neg)?;
    let vector = normalize(&s, raw_norm, ds.concept(), ds.len(), pools.encoder_id)?;
    let projection = max_positive_projection(&s, &pools.pos)?;
    Ok(vector.with_projection_max(projection))
}
