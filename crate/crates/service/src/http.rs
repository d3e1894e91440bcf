//! HTTP front end. Submissions are validated synchronously, queued as jobs
//! and executed on a bounded pool of blocking workers; clients poll
//! `GET /jobs/{id}`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::Semaphore;

use crate::error::ServiceError;
use crate::jobs::{Job, JobStore};
use crate::models::Models;
use crate::ops::{self, ColorizeRequest, EnhanceRequest, JobRequest, RankRequest};

/// Largest accepted request body.
pub const BODY_LIMIT: usize = 64 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    pub models: Arc<Models>,
    pub store: Arc<JobStore>,
    workers: Arc<Semaphore>,
}

impl AppState {
    pub fn new(models: Arc<Models>, store: Arc<JobStore>, workers: usize) -> Self {
        Self {
            models,
            store,
            workers: Arc::new(Semaphore::new(workers.max(1))),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Transition { .. } => StatusCode::CONFLICT,
            e if e.is_client_error() => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(json!({"error": self.to_string()}))).into_response()
    }
}

type HttpResult<T> = std::result::Result<T, ServiceError>;

/// Parses a JSON body, reporting every malformed payload as 400.
fn parse<T: serde::de::DeserializeOwned>(body: &Bytes) -> HttpResult<T> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(e.to_string()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/colorize", post(submit_colorize))
        .route("/enhance", post(submit_enhance))
        .route("/rank", post(submit_rank))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/artifacts/{name}", get(get_artifact))
        .route("/jobs/{id}/rescale", post(rescale))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

async fn healthz(State(state): State<AppState>) -> Json<serde_json::Value> {
    let m = &state.models;
    Json(json!({
        "status": "ok",
        "codec": m.codec.kind(),
        "denoiser": m.restorer.is_some(),
        "ranker": m.ranker.is_some(),
        "embedder": m.embedder.id(),
        "config_hash": m.config_hash,
    }))
}

async fn submit(state: AppState, req: JobRequest) -> HttpResult<Response> {
    let check = {
        let (models, req) = (state.models.clone(), req.clone());
        tokio::task::spawn_blocking(move || ops::validate(&req, &models))
    };
    check
        .await
        .map_err(|e| ServiceError::Internal(format!("validation aborted: {e}")))??;
    let job = state.store.create(&req, &state.models.config_hash)?;
    let id = job.id.clone();
    tokio::spawn(async move {
        let Ok(_permit) = state.workers.clone().acquire_owned().await else {
            return;
        };
        let (store, models, job_id) = (state.store.clone(), state.models.clone(), id.clone());
        let done = tokio::task::spawn_blocking(move || ops::run_job(&store, &models, &job_id, &req)).await;
        if let Err(e) = done {
            log::error!("worker for job {id} panicked: {e}");
            let _ = state.store.transition(&id, crate::jobs::JobStatus::Failed, |j| {
                j.error = Some("worker panicked".into())
            });
        }
    });
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({"job_id": job.id, "status": job.status})),
    )
        .into_response())
}

async fn submit_colorize(State(state): State<AppState>, body: Bytes) -> HttpResult<Response> {
    let req: ColorizeRequest = parse(&body)?;
    submit(state, JobRequest::Colorize(req)).await
}

async fn submit_enhance(State(state): State<AppState>, body: Bytes) -> HttpResult<Response> {
    let req: EnhanceRequest = parse(&body)?;
    submit(state, JobRequest::Enhance(req)).await
}

async fn submit_rank(State(state): State<AppState>, body: Bytes) -> HttpResult<Response> {
    let req: RankRequest = parse(&body)?;
    submit(state, JobRequest::Rank(req)).await
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> HttpResult<Json<Job>> {
    state.store.get(&id).map(Json).ok_or(ServiceError::NotFound(id))
}

fn content_type(name: &str) -> &'static str {
    match name.rsplit_once('.').map(|(_, ext)| ext) {
        Some("png") => "image/png",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    }
}

async fn get_artifact(State(state): State<AppState>, Path((id, name)): Path<(String, String)>) -> HttpResult<Response> {
    let path = state
        .store
        .artifact_path(&id, &name)
        .ok_or_else(|| ServiceError::NotFound(format!("{id}/{name}")))?;
    let bytes: Vec<u8> = tokio::fs::read(path).await?;
    Ok(([(header::CONTENT_TYPE, content_type(&name))], bytes).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RescaleRequest {
    color_scale: f64,
}

/// Re-renders a finished colorization at another color scale from its
/// cached residual. No diffusion iterations run on a cache hit.
async fn rescale(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> HttpResult<Response> {
    let req: RescaleRequest = parse(&body)?;
    let job = state.store.get(&id).ok_or_else(|| ServiceError::NotFound(id.clone()))?;
    if job.status != crate::jobs::JobStatus::Done {
        return Err(ServiceError::BadRequest(format!(
            "job {id} is {:?}, not done",
            job.status
        )));
    }
    let png = tokio::task::spawn_blocking(move || ops::rescale(&state.store, &state.models, &id, req.color_scale))
        .await
        .map_err(|e| ServiceError::Internal(format!("rescale aborted: {e}")))??;
    Ok((
        [
            (header::CONTENT_TYPE, "image/png".to_string()),
            (
                header::HeaderName::from_static("x-color-scale"),
                req.color_scale.to_string(),
            ),
        ],
        png,
    )
        .into_response())
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: AppState, addr: &str) -> crate::error::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
