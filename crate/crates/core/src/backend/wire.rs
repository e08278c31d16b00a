//! Request and response bodies of the remote backend protocol.
//!
//! ```text
//! POST /v1/encode          {"prompt"}                         -> {"encoder_id","tokens","shape","data_b64"}
//! POST /v1/generate        {"embedding","seed","schedule"}    -> {"image_id"}
//! POST /v1/generate_batch  {"items":[generate bodies]}        -> {"image_ids"}
//! POST /v1/distance        {"a","b"}                          -> {"distance"}
//! POST /v1/score           {"image_id","question"}            -> {"score"}
//! ```

use serde::{Deserialize, Serialize};

use super::{GenerateRequest, Schedule};
use crate::tensor::{ContainerDtype, PromptEmbedding, TensorContainer};

pub const ENCODE_PATH: &str = "/v1/encode";
pub const GENERATE_PATH: &str = "/v1/generate";
pub const GENERATE_BATCH_PATH: &str = "/v1/generate_batch";
pub const DISTANCE_PATH: &str = "/v1/distance";
pub const SCORE_PATH: &str = "/v1/score";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeBody {
    pub prompt: String,
}

/// The encode response is a tensor container without the prompt echo.
pub type EncodeResponse = TensorContainer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateBody {
    pub embedding: TensorContainer,
    pub seed: u64,
    #[serde(default)]
    pub schedule: Schedule,
}

impl GenerateBody {
    /// Embeddings travel as `f64` with the prompt attached so the server can
    /// relate them to its own encoding.
    pub fn from_request(r: &GenerateRequest) -> Self {
        Self {
            embedding: TensorContainer::from_embedding(&r.embedding, ContainerDtype::F64),
            seed: r.seed,
            schedule: r.schedule,
        }
    }

    pub fn into_request(self) -> Result<GenerateRequest, crate::tensor::TensorError> {
        let embedding: PromptEmbedding = self.embedding.to_embedding(None)?;
        Ok(GenerateRequest {
            embedding,
            seed: self.seed,
            schedule: self.schedule,
            alpha: 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub image_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateBatchBody {
    pub items: Vec<GenerateBody>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateBatchResponse {
    pub image_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistanceBody {
    pub a: String,
    pub b: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceResponse {
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreBody {
    pub image_id: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ScheduleMode, Token};

    #[test]
    fn generate_body_shape() {
        let emb = PromptEmbedding::new("hi", vec![Token::new("hi", 0, 2)], vec![vec![1.0]], "e").unwrap();
        let req = GenerateRequest::new(emb, 7).with_schedule(Schedule::new(ScheduleMode::NegatedUniform));
        let v = serde_json::to_value(GenerateBody::from_request(&req)).unwrap();
        assert_eq!(v["seed"], 7);
        assert_eq!(v["schedule"]["kind"], "negated_uniform");
        assert_eq!(v["schedule"]["total_steps"], 30);
        assert_eq!(v["embedding"]["shape"], serde_json::json!([1, 1]));
        assert_eq!(v["embedding"]["dtype"], "f64");
        let back: GenerateBody = serde_json::from_value(v).unwrap();
        assert_eq!(back.into_request().unwrap().embedding, req.embedding);
    }
}
