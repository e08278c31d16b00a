//! JSON tensor container used for embeddings on the wire and for persisted
//! steering vectors.
//!
//! ```json
//! {"encoder_id": "...", "dtype": "f32" | "f64", "shape": [rows, dim],
//!  "tokens": [{"text", "start", "end"}], "data_b64": "..."}
//! ```
//!
//! `data_b64` holds little-endian row-major floats. Steering vectors use shape
//! `[1, dim]` and add `concept`, `raw_norm` and `pair_count`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{PromptEmbedding, Result, SteeringVector, TensorError, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ContainerDtype {
    /// Encoders that omit `dtype` are assumed to ship 32-bit floats.
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl From<&Token> for TokenRecord {
    fn from(t: &Token) -> Self {
        Self {
            text: t.text.clone(),
            start: t.start,
            end: t.end,
        }
    }
}

impl From<TokenRecord> for Token {
    fn from(t: TokenRecord) -> Self {
        Token::new(t.text, t.start, t.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorContainer {
    pub encoder_id: String,
    #[serde(default)]
    pub dtype: ContainerDtype,
    pub shape: [usize; 2],
    #[serde(default)]
    pub tokens: Vec<TokenRecord>,
    pub data_b64: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection_max: Option<f64>,
}

fn encode_floats(values: impl Iterator<Item = f64>, dtype: ContainerDtype) -> String {
    let mut bytes = Vec::new();
    for v in values {
        match dtype {
            ContainerDtype::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
            ContainerDtype::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
        }
    }
    STANDARD.encode(bytes)
}

fn decode_floats(data_b64: &str, dtype: ContainerDtype, count: usize) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(data_b64)
        .map_err(|e| TensorError::Container(format!("bad base64: {e}")))?;
    let width = match dtype {
        ContainerDtype::F32 => 4,
        ContainerDtype::F64 => 8,
    };
    if bytes.len() != count * width {
        return Err(TensorError::Container(format!(
            "payload has {} bytes, shape needs {}",
            bytes.len(),
            count * width
        )));
    }
    let values = bytes
        .chunks_exact(width)
        .map(|c| match dtype {
            ContainerDtype::F32 => f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64,
            ContainerDtype::F64 => {
                f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])
            }
        })
        .collect();
    Ok(values)
}

impl TensorContainer {
    pub fn from_embedding(emb: &PromptEmbedding, dtype: ContainerDtype) -> Self {
        Self {
            encoder_id: emb.encoder_id().to_string(),
            dtype,
            shape: [emb.num_tokens(), emb.dim()],
            tokens: emb.tokens().iter().map(TokenRecord::from).collect(),
            data_b64: encode_floats(emb.rows().iter().flatten().copied(), dtype),
            prompt: Some(emb.prompt_text().to_string()),
            concept: None,
            raw_norm: None,
            pair_count: None,
            projection_max: None,
        }
    }

    /// Decodes an embedding. `prompt` fills in the text when the container
    /// does not carry it (the encode endpoint echoes only tokens).
    pub fn to_embedding(&self, prompt: Option<&str>) -> Result<PromptEmbedding> {
        let [rows, dim] = self.shape;
        let data = decode_floats(&self.data_b64, self.dtype, rows * dim)?;
        if dim == 0 {
            return Err(TensorError::ZeroDim);
        }
        let matrix = data.chunks_exact(dim).map(<[f64]>::to_vec).collect();
        let text = prompt
            .map(str::to_string)
            .or_else(|| self.prompt.clone())
            .unwrap_or_default();
        PromptEmbedding::new(
            text,
            self.tokens.iter().cloned().map(Token::from).collect(),
            matrix,
            self.encoder_id.clone(),
        )
    }

    /// Steering vectors are always persisted as `f64` so reloads are lossless.
    pub fn from_vector(v: &SteeringVector) -> Self {
        Self {
            encoder_id: v.encoder_id().to_string(),
            dtype: ContainerDtype::F64,
            shape: [1, v.dim()],
            tokens: Vec::new(),
            data_b64: encode_floats(v.direction().iter().copied(), ContainerDtype::F64),
            prompt: None,
            concept: Some(v.concept().to_string()),
            raw_norm: Some(v.raw_norm()),
            pair_count: Some(v.pair_count()),
            projection_max: v.projection_max(),
        }
    }

    pub fn to_vector(&self) -> Result<SteeringVector> {
        let [rows, dim] = self.shape;
        if rows != 1 {
            return Err(TensorError::Container(format!(
                "steering vector must have shape [1, dim], got [{rows}, {dim}]"
            )));
        }
        let direction = decode_floats(&self.data_b64, self.dtype, dim)?;
        let missing = |f: &str| TensorError::Container(format!("steering vector missing `{f}`"));
        SteeringVector::from_parts(
            direction,
            self.raw_norm.ok_or_else(|| missing("raw_norm"))?,
            self.concept.clone().ok_or_else(|| missing("concept"))?,
            self.pair_count.ok_or_else(|| missing("pair_count"))?,
            self.encoder_id.clone(),
            self.projection_max,
        )
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("container serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| TensorError::Container(e.to_string()))
    }
}
