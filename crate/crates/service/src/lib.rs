// SPDX-License-Identifier: Apache-2.0

//! HTTP+JSON front end for examination sessions.
//!
//! Sessions advance eagerly: after creation and after every decision all
//! queued instances are examined, so the queue always lists every open
//! suggestion. Mutations on one session are serialized by its lock.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use ltg_core::classifier::{Classifier, DecisionPolicy};
use ltg_core::examiner::{Action, AssignmentReport, Counters, ExamError, ExamSession, Status, SuggestionRecord, Timing};
use ltg_core::layout::{parse_gdsii, DesignHash, LayoutError};
use ltg_core::raster::RasterConfig;
use ltg_core::svm::load_classifier_file;

pub const PREVIEW_SIZE: usize = 64;

type Session = ExamSession<Box<dyn Classifier + Send>>;

struct Entry {
    session: Session,
    version: u64,
}

/// Shared server state: the default model and the live sessions.
pub struct AppState {
    default_model: Option<PathBuf>,
    raster: RasterConfig,
    next_id: AtomicU64,
    sessions: Mutex<HashMap<String, Arc<Mutex<Entry>>>>,
}

impl AppState {
    pub fn new(default_model: Option<PathBuf>, raster: RasterConfig) -> Arc<Self> {
        Arc::new(Self { default_model, raster, next_id: AtomicU64::new(1), sessions: Mutex::new(HashMap::new()) })
    }

    fn entry(&self, id: &str) -> Result<Arc<Mutex<Entry>>, ApiError> {
        self.sessions
            .lock()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl From<ExamError> for ApiError {
    fn from(e: ExamError) -> Self {
        let status = match e {
            ExamError::State(_) => StatusCode::CONFLICT,
            ExamError::UnknownRecord(_) | ExamError::UnknownDesign(_) => StatusCode::NOT_FOUND,
            ExamError::Layout(_) | ExamError::Raster(_) => StatusCode::BAD_REQUEST,
            ExamError::Classifier(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Deserialize)]
pub struct PolicyBody {
    pub threshold: f64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_top_k() -> usize {
    DecisionPolicy::default().top_k
}

/// Body of `POST /sessions`. Exactly one of `gdsii_path` and
/// `gdsii_base64` is given.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct CreateSession {
    pub gdsii_path: Option<PathBuf>,
    pub gdsii_base64: Option<String>,
    /// Defaults to the single top cell of the library.
    pub top: Option<String>,
    pub model_path: Option<PathBuf>,
    pub policy: Option<PolicyBody>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub top: String,
    pub records: usize,
    pub version: u64,
}

/// A record as listed in the queue, with its suggestion id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueueItem {
    pub suggestion_id: String,
    #[serde(flatten)]
    pub record: SuggestionRecord,
}

#[derive(Debug, Clone, Deserialize)]
pub struct DecisionBody {
    pub action: Action,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stats {
    pub version: u64,
    pub complete: bool,
    pub records: usize,
    pub open: usize,
    pub counters: Counters,
    pub timing: Timing,
}

#[derive(Debug, Clone, Deserialize)]
pub struct QueueQuery {
    pub status: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PreviewQuery {
    #[serde(default)]
    pub channel: usize,
    pub size: Option<usize>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/queue", get(queue))
        .route("/sessions/{id}/report", get(report))
        .route("/sessions/{id}/stats", get(stats))
        .route("/suggestions/{id}/decision", post(decide))
        .route("/cells/{session}/{hash}/preview", get(preview))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

fn start(state: &AppState, body: CreateSession) -> ApiResult<(Session, String)> {
    let bytes = match (&body.gdsii_path, &body.gdsii_base64) {
        (Some(p), None) => std::fs::read(p).map_err(|e| ApiError::bad_request(format!("{}: {e}", p.display())))?,
        (None, Some(b)) => base64::engine::general_purpose::STANDARD
            .decode(b)
            .map_err(|e| ApiError::bad_request(format!("upload is not base64: {e}")))?,
        _ => return Err(ApiError::bad_request("give exactly one of gdsii_path and gdsii_base64")),
    };
    let lib = parse_gdsii(&bytes).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let top = match body.top {
        Some(t) => t,
        None => match &lib.top_candidates()[..] {
            [t] => t.clone(),
            c => return Err(ApiError::bad_request(format!("library has {} top cells; name one", c.len()))),
        },
    };
    let model_path = body
        .model_path
        .or_else(|| state.default_model.clone())
        .ok_or_else(|| ApiError::bad_request("no model given and the server has no default"))?;
    let (model, registry) =
        load_classifier_file(&model_path).map_err(|e| ApiError::bad_request(format!("{}: {e}", model_path.display())))?;
    let policy = match body.policy {
        Some(p) => DecisionPolicy::new(p.threshold, p.top_k).map_err(|e| ApiError::bad_request(e.to_string()))?,
        None => DecisionPolicy::default(),
    };
    let mut session = ExamSession::start(lib, &top, model, policy, registry, state.raster.clone()).map_err(|e| match e {
        ExamError::Layout(LayoutError::NotFound(_)) => ApiError::bad_request(e.to_string()),
        other => other.into(),
    })?;
    session.examine_all()?;
    Ok((session, top))
}

async fn create_session(State(state): State<Arc<AppState>>, Json(body): Json<CreateSession>) -> ApiResult<(StatusCode, Json<Created>)> {
    let st = state.clone();
    let (session, top) = blocking(move || start(&st, body)).await?;
    let id = format!("s{}", state.next_id.fetch_add(1, Ordering::Relaxed));
    let created = Created { id: id.clone(), top, records: session.records().len(), version: 0 };
    state.sessions.lock().expect("session table lock").insert(id, Arc::new(Mutex::new(Entry { session, version: 0 })));
    Ok((StatusCode::CREATED, Json(created)))
}

fn parse_status(s: &str) -> ApiResult<Status> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| ApiError::bad_request(format!("unknown status {s:?}")))
}

async fn queue(State(state): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<QueueQuery>) -> ApiResult<Json<Vec<QueueItem>>> {
    let status = q.status.as_deref().map(parse_status).transpose()?;
    let entry = state.entry(&id)?;
    let e = entry.lock().expect("session lock");
    let items = e
        .session
        .records()
        .iter()
        .filter(|r| status.is_none_or(|s| r.status == s))
        .map(|r| QueueItem { suggestion_id: format!("{id}-{}", r.id), record: r.clone() })
        .collect();
    Ok(Json(items))
}

async fn report(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<AssignmentReport>> {
    let entry = state.entry(&id)?;
    let report = entry.lock().expect("session lock").session.report();
    Ok(Json(report))
}

async fn stats(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Stats>> {
    let entry = state.entry(&id)?;
    let e = entry.lock().expect("session lock");
    let s = &e.session;
    Ok(Json(Stats {
        version: e.version,
        complete: s.is_complete(),
        records: s.records().len(),
        open: s.records().iter().filter(|r| !r.is_settled()).count(),
        counters: s.counters(),
        timing: s.timing(),
    }))
}

fn split_suggestion(id: &str) -> ApiResult<(&str, usize)> {
    id.rsplit_once('-')
        .and_then(|(s, r)| Some((s, r.parse().ok()?)))
        .ok_or_else(|| ApiError::not_found(format!("no suggestion {id}")))
}

async fn decide(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<DecisionBody>,
) -> ApiResult<Json<QueueItem>> {
    let (session_id, record) = split_suggestion(&id)?;
    let entry = state.entry(session_id)?;
    let record = blocking(move || {
        let mut e = entry.lock().expect("session lock");
        e.session.apply_decision(record, body.action)?;
        e.version += 1;
        e.session.examine_all()?;
        Ok(e.session.record(record)?.clone())
    })
    .await?;
    Ok(Json(QueueItem { suggestion_id: id, record }))
}

async fn preview(
    State(state): State<Arc<AppState>>,
    Path((session, hash)): Path<(String, String)>,
    Query(q): Query<PreviewQuery>,
) -> ApiResult<Json<Vec<Vec<f32>>>> {
    let size = q.size.unwrap_or(PREVIEW_SIZE);
    if size != PREVIEW_SIZE {
        return Err(ApiError::bad_request(format!("preview size is fixed at {PREVIEW_SIZE}")));
    }
    if q.channel >= state.raster.channel_map.channel_count() {
        return Err(ApiError::bad_request(format!("channel {} out of range", q.channel)));
    }
    let hash = DesignHash::from_hex(&hash).ok_or_else(|| ApiError::bad_request(format!("bad design hash {hash:?}")))?;
    let entry = state.entry(&session)?;
    let grid = blocking(move || Ok(entry.lock().expect("session lock").session.preview(&hash, q.channel, size)?)).await?;
    Ok(Json(grid))
}
