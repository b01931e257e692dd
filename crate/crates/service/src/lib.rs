//! HTTP service for blinded side-by-side annotation of two models' galleries.
//!
//! Galleries never carry model ids: each prompt's left/right assignment comes
//! from [`Blinding`], and choices are un-blinded only when written to the
//! JSON-lines store.

mod blinding;

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::{mpsc, oneshot};
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;

use scs_core::analysis::compute_agreement;
use scs_core::dataset::manifest::validate_id;
use scs_core::dataset::{
    effective_records, load_scores_as, read_records, AnnotationLog, AnnotationRecord,
    ExperimentManifest, StoreError,
};
use scs_core::encoder::ImageFormat;

pub use blinding::{Blinding, Side};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub manifest: ExperimentManifest,
    pub annotations_path: PathBuf,
    /// Score CSVs for the first and second manifest model.
    pub score_paths: [PathBuf; 2],
    /// Built annotation UI, served for every non-API path.
    pub ui_dir: Option<PathBuf>,
    /// Extra origin allowed to call the API, for a UI dev server.
    pub cors_origin: Option<String>,
}

impl ServiceConfig {
    /// Store and score locations from the manifest's canonical layout.
    pub fn new(manifest: ExperimentManifest) -> Self {
        let layout = manifest.layout();
        let score_path = |i: usize| {
            manifest
                .models
                .get(i)
                .map(|m| layout.scores_path(&m.model_id))
                .unwrap_or_default()
        };
        Self {
            annotations_path: layout.annotations_path(),
            score_paths: [score_path(0), score_path(1)],
            ui_dir: None,
            cors_origin: None,
            manifest,
        }
    }
}

struct WriteRequest {
    annotator_id: String,
    prompt_id: String,
    chosen_model_id: String,
    reply: oneshot::Sender<Result<AnnotationRecord, String>>,
}

struct AppState {
    manifest: ExperimentManifest,
    blinding: Blinding,
    annotations_path: PathBuf,
    score_paths: [PathBuf; 2],
    writer: mpsc::Sender<WriteRequest>,
    issued: Mutex<HashSet<(String, String)>>,
}

type Shared = Arc<AppState>;

struct ApiError(StatusCode, Value);

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        Self(status, json!({ "error": msg.into() }))
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown {what}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

impl AppState {
    fn check_experiment(&self, id: &str) -> ApiResult<()> {
        if id == self.manifest.experiment_id {
            Ok(())
        } else {
            Err(ApiError::not_found("experiment"))
        }
    }

    fn check_prompt(&self, id: &str, pid: &str) -> ApiResult<()> {
        self.check_experiment(id)?;
        match self.manifest.prompt(pid) {
            Some(_) => Ok(()),
            None => Err(ApiError::not_found("prompt")),
        }
    }

    fn model_for(&self, pid: &str, side: Side) -> &str {
        self.blinding
            .model_for(&self.manifest.experiment_id, pid, side)
    }
}

fn check_annotator(aid: &str) -> ApiResult<()> {
    validate_id("annotator_id", aid).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))
}

fn image_url(exp: &str, pid: &str, side: Side, index: usize) -> String {
    format!("/api/experiments/{exp}/prompts/{pid}/images/{}/{index}", side.as_str())
}

async fn list_prompts(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    s.check_experiment(&id)?;
    let ids: Vec<&str> = s.manifest.prompt_ids().collect();
    Ok(Json(json!({ "experiment_id": id, "prompt_ids": ids })))
}

#[derive(Deserialize)]
struct GalleryQuery {
    annotator: Option<String>,
}

async fn galleries(
    State(s): State<Shared>,
    Path((id, pid)): Path<(String, String)>,
    Query(q): Query<GalleryQuery>,
) -> ApiResult<Json<Value>> {
    s.check_prompt(&id, &pid)?;
    let aid = q
        .annotator
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing `annotator` query parameter"))?;
    check_annotator(&aid)?;

    let layout = s.manifest.layout();
    let mut gaps = Vec::new();
    for side in [Side::Left, Side::Right] {
        let model = s.model_for(&pid, side);
        for &seed in &s.manifest.seeds {
            if !layout.image_path(model, &pid, seed).is_file() {
                gaps.push(json!({ "side": side, "seed": seed }));
            }
        }
    }
    if !gaps.is_empty() {
        return Err(ApiError(
            StatusCode::CONFLICT,
            json!({ "error": format!("{} image(s) missing for this prompt", gaps.len()), "gaps": gaps }),
        ));
    }
    s.issued.lock().unwrap().insert((aid, pid.clone()));
    let urls = |side| -> Vec<String> {
        (0..s.manifest.seeds.len())
            .map(|i| image_url(&id, &pid, side, i))
            .collect()
    };
    Ok(Json(json!({
        "prompt_id": pid,
        "left": urls(Side::Left),
        "right": urls(Side::Right),
    })))
}

async fn image(
    State(s): State<Shared>,
    Path((id, pid, side, index)): Path<(String, String, String, usize)>,
) -> ApiResult<Response> {
    s.check_prompt(&id, &pid)?;
    let side = Side::parse(&side).ok_or_else(|| ApiError::not_found("side"))?;
    let seed = *s
        .manifest
        .seeds
        .get(index)
        .ok_or_else(|| ApiError::not_found("image index"))?;
    let path = s.manifest.layout().image_path(s.model_for(&pid, side), &pid, seed);
    let content_type = match ImageFormat::from_path(&path) {
        Some(ImageFormat::Jpeg) => "image/jpeg",
        _ => "image/png",
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response()),
        // the path names the model, so it stays out of the response
        Err(e) => {
            log::warn!("{}: {e}", path.display());
            Err(ApiError::new(StatusCode::NOT_FOUND, "image not available"))
        }
    }
}

#[derive(Deserialize)]
struct ChoiceBody {
    annotator_id: String,
    side: String,
}

/// What the annotator gets back: the stored record minus the model id.
#[derive(Serialize)]
struct Receipt {
    annotator_id: String,
    prompt_id: String,
    side: Side,
    timestamp: DateTime<Utc>,
}

async fn choice(
    State(s): State<Shared>,
    Path((id, pid)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<Receipt>> {
    s.check_prompt(&id, &pid)?;
    let body: ChoiceBody = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))?;
    let side = Side::parse(&body.side).ok_or_else(|| {
        ApiError::new(StatusCode::BAD_REQUEST, "`side` must be \"left\" or \"right\"")
    })?;
    check_annotator(&body.annotator_id)?;
    let key = (body.annotator_id.clone(), pid.clone());
    if !s.issued.lock().unwrap().contains(&key) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "galleries for this prompt were not requested by this annotator",
        ));
    }

    let (reply, rx) = oneshot::channel();
    let req = WriteRequest {
        annotator_id: body.annotator_id,
        prompt_id: pid,
        chosen_model_id: s.model_for(&key.1, side).to_string(),
        reply,
    };
    let unavailable = || ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "annotation store is closed");
    s.writer.send(req).await.map_err(|_| unavailable())?;
    let record = rx
        .await
        .map_err(|_| unavailable())?
        .map_err(|e| {
            log::error!("append failed: {e}");
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "could not store the choice")
        })?;
    Ok(Json(Receipt {
        annotator_id: record.annotator_id,
        prompt_id: record.prompt_id,
        side,
        timestamp: record.timestamp,
    }))
}

async fn snapshot(path: PathBuf) -> ApiResult<Vec<AnnotationRecord>> {
    tokio::task::spawn_blocking(move || read_records(&path))
        .await
        .expect("reader task")
        .map_err(|e| {
            log::error!("{e}");
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "annotation store is unreadable")
        })
}

async fn annotator_choices(
    State(s): State<Shared>,
    Path((id, aid)): Path<(String, String)>,
) -> ApiResult<Json<Value>> {
    s.check_experiment(&id)?;
    check_annotator(&aid)?;
    let records = snapshot(s.annotations_path.clone()).await?;
    let mine: Vec<AnnotationRecord> = effective_records(&records)
        .into_iter()
        .filter(|r| r.annotator_id == aid)
        .collect();
    let choices: Vec<Value> = s
        .manifest
        .prompt_ids()
        .filter_map(|pid| {
            let r = mine.iter().find(|r| r.prompt_id == pid)?;
            let side = s
                .blinding
                .side_of(&s.manifest.experiment_id, pid, &r.chosen_model_id)?;
            Some(json!({ "prompt_id": pid, "side": side, "timestamp": r.timestamp }))
        })
        .collect();
    Ok(Json(json!({ "annotator_id": aid, "choices": choices })))
}

async fn agreement(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    s.check_experiment(&id)?;
    let mut tables = Vec::with_capacity(2);
    for (model, path) in s.manifest.models.iter().zip(&s.score_paths) {
        if !path.is_file() {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!(
                    "no scores for model `{}` at {}; run `scs score` for both models first",
                    model.model_id,
                    path.display()
                ),
            ));
        }
        let table = load_scores_as(path, model.model_id.clone())
            .map_err(|e| ApiError::new(StatusCode::CONFLICT, e.to_string()))?;
        tables.push(table);
    }
    let records = snapshot(s.annotations_path.clone()).await?;
    if records.is_empty() {
        return Err(ApiError::new(StatusCode::CONFLICT, "no annotations recorded yet"));
    }
    let report = compute_agreement(&records, &tables[0], &tables[1])
        .map_err(|e| ApiError::new(StatusCode::CONFLICT, e.to_string()))?;
    Ok(Json(serde_json::to_value(report).expect("report serializes")))
}

/// Serializes all appends through one blocking task. Timestamps are taken
/// here and forced strictly increasing so latest-wins is unambiguous.
fn spawn_writer(mut log: AnnotationLog, mut last: Option<DateTime<Utc>>) -> mpsc::Sender<WriteRequest> {
    let (tx, mut rx) = mpsc::channel::<WriteRequest>(64);
    tokio::task::spawn_blocking(move || {
        while let Some(req) = rx.blocking_recv() {
            let mut timestamp = Utc::now();
            if let Some(prev) = last.filter(|&p| timestamp <= p) {
                timestamp = prev + TimeDelta::microseconds(1);
            }
            let record = AnnotationRecord {
                annotator_id: req.annotator_id,
                prompt_id: req.prompt_id,
                chosen_model_id: req.chosen_model_id,
                timestamp,
            };
            let result = log.append(&record).map(|()| record).map_err(|e| e.to_string());
            if result.is_ok() {
                last = Some(timestamp);
            }
            let _ = req.reply.send(result);
        }
    });
    tx
}

/// Builds the service. Must run inside a Tokio runtime.
pub fn router(config: ServiceConfig) -> Result<Router, ServiceError> {
    let m = &config.manifest;
    if m.models.len() != 2 {
        return Err(ServiceError::Config(format!(
            "annotation needs exactly two models, the manifest has {}",
            m.models.len()
        )));
    }
    let existing = read_records(&config.annotations_path)?;
    let issued = existing
        .iter()
        .map(|r| (r.annotator_id.clone(), r.prompt_id.clone()))
        .collect();
    let last = existing.iter().map(|r| r.timestamp).max();
    let log = AnnotationLog::open(&config.annotations_path)?;
    let state = Arc::new(AppState {
        blinding: Blinding::new(&m.models[0].model_id, &m.models[1].model_id),
        manifest: config.manifest.clone(),
        annotations_path: config.annotations_path.clone(),
        score_paths: config.score_paths.clone(),
        writer: spawn_writer(log, last),
        issued: Mutex::new(issued),
    });

    let mut app = Router::new()
        .route("/api/experiments/{id}/prompts", get(list_prompts))
        .route("/api/experiments/{id}/prompts/{pid}/galleries", get(galleries))
        .route(
            "/api/experiments/{id}/prompts/{pid}/images/{side}/{index}",
            get(image),
        )
        .route("/api/experiments/{id}/prompts/{pid}/choice", post(choice))
        .route("/api/experiments/{id}/annotators/{aid}/choices", get(annotator_choices))
        .route("/api/experiments/{id}/agreement", get(agreement))
        .with_state(state);
    if let Some(dir) = &config.ui_dir {
        app = app.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true));
    }
    if let Some(origin) = &config.cors_origin {
        let origin: HeaderValue = origin
            .parse()
            .map_err(|_| ServiceError::Config(format!("invalid CORS origin `{origin}`")))?;
        app = app.layer(
            CorsLayer::new()
                .allow_origin(AllowOrigin::exact(origin))
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([header::CONTENT_TYPE]),
        );
    }
    Ok(app)
}
