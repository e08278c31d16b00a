//! HTTP API consumed by the slider UI.
//!
//! ```text
//! POST /sliders                 {prompt, concept?, vector, edit_type?, overrides?} -> {slider_id, valid_points, band}
//! GET  /sliders/{id}            -> calibration profile
//! POST /sliders/{id}/render     {alpha, seed?} -> {image_id, image_url?}
//! GET  /sliders/{id}/metrics?n= -> {mid, curve}
//! GET  /healthz                 -> {backend, llm, scorer}
//! ```
//!
//! GET handlers never call the LLM. Sessions are written to
//! `<root>/sessions/` on every change and reloaded at startup.

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use steerkit_core::profile::CalibrationProfile;
use steerkit_core::select::EditType;
use steerkit_core::tensor::ScheduleMode;
use tokio::sync::{Mutex, RwLock};

use crate::engine::{CalibrateArgs, Engine};
use crate::error::{AppError, AppResult, ErrorKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliderSession {
    pub id: String,
    pub profile: CalibrationProfile,
    /// Rendered image per strength, for the profile's own seed.
    pub renders: Vec<(f64, String)>,
}

impl SliderSession {
    fn cached(&self, alpha: f64) -> Option<&str> {
        self.renders
            .iter()
            .find(|(a, _)| *a == alpha)
            .map(|(_, id)| id.as_str())
    }
}

pub struct ServiceState {
    pub engine: Arc<Engine>,
    sessions: RwLock<HashMap<String, Arc<Mutex<SliderSession>>>>,
}

impl ServiceState {
    /// Loads persisted sessions from the storage root.
    pub fn new(engine: Arc<Engine>) -> AppResult<Self> {
        let mut sessions = HashMap::new();
        for path in engine.storage.list("sessions")? {
            let text = std::fs::read_to_string(&path)?;
            match serde_json::from_str::<SliderSession>(&text) {
                Ok(s) => {
                    sessions.insert(s.id.clone(), Arc::new(Mutex::new(s)));
                }
                Err(e) => tracing::warn!(path = %path.display(), "skipping unreadable session: {e}"),
            }
        }
        Ok(Self {
            engine,
            sessions: RwLock::new(sessions),
        })
    }

    fn persist(&self, session: &SliderSession) -> AppResult<()> {
        let text = serde_json::to_string_pretty(session)?;
        self.engine.storage.put("sessions", &session.id, &text)?;
        Ok(())
    }

    /// Writes every session to disk.
    pub async fn flush(&self) -> AppResult<()> {
        let sessions: Vec<_> = self.sessions.read().await.values().cloned().collect();
        for s in sessions {
            let s = s.lock().await;
            self.persist(&s)?;
        }
        Ok(())
    }

    async fn session(&self, id: &str) -> AppResult<Arc<Mutex<SliderSession>>> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| AppError::not_found(format!("no slider `{id}`")))
    }
}

#[derive(Debug, Serialize)]
struct ErrorReply {
    error: String,
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let status = match self.kind {
            ErrorKind::Usage => StatusCode::BAD_REQUEST,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Validation | ErrorKind::Degenerate => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::Backend => StatusCode::BAD_GATEWAY,
        };
        (status, Json(ErrorReply { error: self.message })).into_response()
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> AppResult<T> + Send + 'static) -> AppResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| AppError::new(ErrorKind::Backend, format!("worker failed: {e}")))?
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSlider {
    pub prompt: String,
    #[serde(default)]
    pub concept: Option<String>,
    pub vector: String,
    #[serde(default)]
    pub edit_type: Option<EditType>,
    #[serde(default)]
    pub overrides: Option<serde_json::Map<String, serde_json::Value>>,
    #[serde(default)]
    pub schedule: Option<ScheduleMode>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BandSummary {
    pub points: Vec<f64>,
    pub similarities: Vec<f64>,
    pub sim_min: f64,
    pub sim_max: f64,
    pub alpha_max: f64,
    pub iterations_used: usize,
    pub generations_used: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreatedSlider {
    pub slider_id: String,
    pub valid_points: Vec<f64>,
    pub band: BandSummary,
}

async fn create_slider(
    State(state): State<Arc<ServiceState>>,
    Json(body): Json<CreateSlider>,
) -> AppResult<(StatusCode, Json<CreatedSlider>)> {
    let engine = state.engine.clone();
    let profile = blocking(move || {
        let args = CalibrateArgs {
            prompt: body.prompt,
            vector: body.vector,
            concept: body.concept,
            edit_type: body.edit_type,
            overrides: body.overrides.unwrap_or_default(),
            schedule: body.schedule,
            ..CalibrateArgs::default()
        };
        let profile = engine.calibrate(&args)?;
        engine.save_profile(&profile)?;
        Ok(profile)
    })
    .await?;
    let id = profile.id();
    let reply = CreatedSlider {
        slider_id: id.clone(),
        valid_points: profile.valid_points.clone(),
        band: BandSummary {
            points: profile.band_points.clone(),
            similarities: profile.similarities.clone(),
            sim_min: profile.config.sim_min,
            sim_max: profile.config.sim_max,
            alpha_max: profile.alpha_max_used,
            iterations_used: profile.iterations_used,
            generations_used: profile.generations_used,
        },
    };
    let mut sessions = state.sessions.write().await;
    let session = sessions
        .entry(id.clone())
        .or_insert_with(|| {
            Arc::new(Mutex::new(SliderSession {
                id: id.clone(),
                profile,
                renders: Vec::new(),
            }))
        })
        .clone();
    drop(sessions);
    state.persist(&*session.lock().await)?;
    Ok((StatusCode::CREATED, Json(reply)))
}

async fn get_slider(
    State(state): State<Arc<ServiceState>>,
    Path(id): Path<String>,
) -> AppResult<Json<CalibrationProfile>> {
    let session = state.session(&id).await?;
    let profile = session.lock().await.profile.clone();
    Ok(Json(profile))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderBody {
    pub alpha: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RenderReply {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
}

async fn render(
    State(state): State<Arc<ServiceState>>,
    Path(id): Path<String>,
    Json(body): Json<RenderBody>,
) -> AppResult<Json<RenderReply>> {
    let session = state.session(&id).await?;
    // Renders on one slider are serialized; different sliders run in parallel.
    let mut s = session.lock().await;
    let (lo, hi) = s
        .profile
        .range()
        .ok_or_else(|| AppError::validation("slider has no valid points"))?;
    if !(body.alpha.is_finite() && lo <= body.alpha && body.alpha <= hi) {
        return Err(AppError::validation(format!(
            "alpha {} outside the calibrated range [{lo}, {hi}]",
            body.alpha
        )));
    }
    let default_seed = body.seed.is_none() || body.seed == Some(s.profile.seed);
    if default_seed {
        if let Some(image_id) = s.cached(body.alpha) {
            return Ok(Json(RenderReply {
                image_id: image_id.to_string(),
                image_url: None,
            }));
        }
    }
    let engine = state.engine.clone();
    let profile = s.profile.clone();
    let alpha = body.alpha;
    let seed = body.seed.unwrap_or(profile.seed);
    let img = blocking(move || {
        let vector = engine.profile_vector(&profile)?;
        engine.render_profile(&profile, &vector, alpha, seed)
    })
    .await?;
    if default_seed {
        s.renders.push((alpha, img.id.clone()));
        s.renders.sort_by(|a, b| a.0.total_cmp(&b.0));
        state.persist(&s)?;
    }
    Ok(Json(RenderReply {
        image_id: img.id,
        image_url: None,
    }))
}

#[derive(Debug, Deserialize)]
pub struct MetricsQuery {
    #[serde(default = "default_n")]
    pub n: usize,
}

fn default_n() -> usize {
    steerkit_core::metrics::DEFAULT_POINTS
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsReply {
    pub mid: f64,
    pub curve: Vec<steerkit_core::metrics::TradeoffRow>,
}

async fn metrics(
    State(state): State<Arc<ServiceState>>,
    Path(id): Path<String>,
    Query(q): Query<MetricsQuery>,
) -> AppResult<Json<MetricsReply>> {
    let session = state.session(&id).await?;
    let profile = session.lock().await.profile.clone();
    let engine = state.engine.clone();
    let report = blocking(move || engine.evaluate(&profile, q.n, None)).await?;
    Ok(Json(MetricsReply {
        mid: report.mid,
        curve: report.curve,
    }))
}

async fn healthz(State(state): State<Arc<ServiceState>>) -> Response {
    let engine = state.engine.clone();
    match tokio::task::spawn_blocking(move || engine.health()).await {
        Ok(h) => {
            let status = if h.backend == "ok" {
                StatusCode::OK
            } else {
                StatusCode::SERVICE_UNAVAILABLE
            };
            (status, Json(h)).into_response()
        }
        Err(e) => AppError::new(ErrorKind::Backend, e.to_string()).into_response(),
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/sliders", post(create_slider))
        .route("/sliders/{id}", get(get_slider))
        .route("/sliders/{id}/render", post(render))
        .route("/sliders/{id}/metrics", get(metrics))
        .route("/healthz", get(healthz))
        .with_state(state)
}

/// Binds, serves until Ctrl-C, then flushes sessions.
pub async fn serve(engine: Arc<Engine>, listen: &str) -> AppResult<()> {
    let health = {
        let engine = engine.clone();
        tokio::task::spawn_blocking(move || engine.health())
            .await
            .map_err(|e| AppError::new(ErrorKind::Backend, e.to_string()))?
    };
    if health.backend != "ok" {
        return Err(AppError::new(ErrorKind::Backend, format!("backend health check failed: {}", health.backend)));
    }
    let state = Arc::new(ServiceState::new(engine)?);
    let listener = tokio::net::TcpListener::bind(listen)
        .await
        .map_err(|e| AppError::usage(format!("cannot bind {listen}: {e}")))?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    state.flush().await
}

/// Known slider ids, sorted.
pub async fn session_ids(state: &ServiceState) -> Vec<String> {
    let mut ids: Vec<String> = state.sessions.read().await.keys().cloned().collect();
    ids.sort();
    ids
}
