//! Serves any [`Backend`] over the remote backend protocol, so a synthetic
//! world or a recorded fixture can stand in for a model server.

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use steerkit_core::backend::wire::{
    DistanceBody, DistanceResponse, EncodeBody, ErrorBody, GenerateBatchBody, GenerateBatchResponse,
    GenerateBody, GenerateResponse, ScoreBody, ScoreResponse, DISTANCE_PATH, ENCODE_PATH,
    GENERATE_BATCH_PATH, GENERATE_PATH, SCORE_PATH,
};
use steerkit_core::backend::{Backend, BackendError, ImageRef};
use steerkit_core::metrics::Scorer;
use steerkit_core::tensor::{ContainerDtype, TensorContainer};

#[derive(Clone)]
pub struct WireState {
    backend: Arc<dyn Backend>,
    scorer: Option<Arc<dyn Scorer>>,
}

pub struct WireError(BackendError);

impl From<BackendError> for WireError {
    fn from(e: BackendError) -> Self {
        Self(e)
    }
}

impl IntoResponse for WireError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            BackendError::UnknownRef(_) => StatusCode::NOT_FOUND,
            BackendError::EmptyPrompt
            | BackendError::Protocol(_)
            | BackendError::BatchTooLarge { .. }
            | BackendError::EncoderMismatch { .. }
            | BackendError::Tensor(_) => StatusCode::UNPROCESSABLE_ENTITY,
            BackendError::Status { status, .. } => {
                StatusCode::from_u16(*status).unwrap_or(StatusCode::BAD_GATEWAY)
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(ErrorBody { error: self.0.to_string() })).into_response()
    }
}

type WireResult<T> = Result<Json<T>, WireError>;

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, BackendError> + Send + 'static,
) -> Result<T, WireError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| WireError(BackendError::GenerationFailed(format!("worker failed: {e}"))))?
        .map_err(WireError)
}

async fn encode(State(s): State<WireState>, Json(body): Json<EncodeBody>) -> WireResult<TensorContainer> {
    let emb = blocking(move || s.backend.encode(&body.prompt)).await?;
    let mut container = TensorContainer::from_embedding(&emb, ContainerDtype::F64);
    container.prompt = None;
    Ok(Json(container))
}

async fn generate(State(s): State<WireState>, Json(body): Json<GenerateBody>) -> WireResult<GenerateResponse> {
    let img = blocking(move || {
        let req = body.into_request()?;
        s.backend.generate(&req)
    })
    .await?;
    Ok(Json(GenerateResponse { image_id: img.id }))
}

async fn generate_batch(
    State(s): State<WireState>,
    Json(body): Json<GenerateBatchBody>,
) -> WireResult<GenerateBatchResponse> {
    let imgs = blocking(move || {
        let reqs = body
            .items
            .into_iter()
            .map(|b| b.into_request())
            .collect::<Result<Vec<_>, _>>()?;
        s.backend.generate_batch(&reqs)
    })
    .await?;
    Ok(Json(GenerateBatchResponse {
        image_ids: imgs.into_iter().map(|i| i.id).collect(),
    }))
}

async fn distance(State(s): State<WireState>, Json(body): Json<DistanceBody>) -> WireResult<DistanceResponse> {
    let d = blocking(move || s.backend.distance_ids(&body.a, &body.b)).await?;
    Ok(Json(DistanceResponse { distance: d }))
}

async fn score(State(s): State<WireState>, Json(body): Json<ScoreBody>) -> WireResult<ScoreResponse> {
    let scorer = s
        .scorer
        .clone()
        .ok_or_else(|| WireError(BackendError::Protocol("no scorer behind this server".into())))?;
    let value = blocking(move || {
        let img = ImageRef {
            id: body.image_id,
            alpha: 0.0,
            prompt_hash: String::new(),
        };
        scorer.score(&img, &body.question)
    })
    .await?;
    Ok(Json(ScoreResponse { score: value }))
}

pub fn wire_router(backend: Arc<dyn Backend>, scorer: Option<Arc<dyn Scorer>>) -> Router {
    Router::new()
        .route(ENCODE_PATH, post(encode))
        .route(GENERATE_PATH, post(generate))
        .route(GENERATE_BATCH_PATH, post(generate_batch))
        .route(DISTANCE_PATH, post(distance))
        .route(SCORE_PATH, post(score))
        .with_state(WireState { backend, scorer })
}
