//! HTTP inference service: suggestions, canned-set inspection, selection
//! feedback and health, over artifacts loaded once at startup.

mod config;

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use medreply_core::pipeline::{suggest, Artifacts, PipelineError, SuggestOptions, Suggestion};
use serde::{Deserialize, Serialize};

pub use config::{
    online_precision_at_k, read_selection_log, JsonlLog, SelectionEvent, ServiceConfig, ARTIFACT_DIR_ENV, BIND_ENV,
};

/// Request ids remembered for feedback validation.
const ISSUED_CAPACITY: usize = 100_000;
const DEFAULT_K: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("invalid service config: {0}")]
    Config(String),
    #[error("failed to load artifacts: {0}")]
    Load(#[from] PipelineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Deserialize)]
pub struct SuggestRequest {
    pub text: String,
    #[serde(default)]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestItem {
    pub rank: usize,
    pub response_id: String,
    pub text: String,
    pub score: f64,
    pub cluster_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestResponse {
    pub request_id: String,
    pub triggered: bool,
    pub trigger_score: f64,
    pub items: Vec<SuggestItem>,
    pub latency_ms: f64,
}

impl SuggestResponse {
    pub fn from_suggestion(request_id: String, s: Suggestion) -> Self {
        Self {
            request_id,
            triggered: s.triggered,
            trigger_score: s.trigger_score,
            items: s
                .items
                .into_iter()
                .map(|i| SuggestItem {
                    rank: i.rank,
                    response_id: i.response_id,
                    text: i.display_text,
                    score: i.score,
                    cluster_id: i.cluster_id,
                })
                .collect(),
            latency_ms: s.latency_ms,
        }
    }
}

#[derive(Debug, Serialize)]
struct RequestLogEntry<'a> {
    request_id: &'a str,
    timestamp: u64,
    session_id: Option<&'a str>,
    text: &'a str,
    threshold_p: f64,
    k: usize,
    triggered: bool,
    trigger_score: f64,
    response_ids: Vec<&'a str>,
    latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CannedEntry {
    pub id: String,
    pub text: String,
    pub cluster_id: usize,
    pub rule_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CannedSummary {
    pub k_selected: usize,
    pub density_threshold: f64,
    pub responses: Vec<CannedEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub fingerprints: BTreeMap<String, String>,
    pub uptime_seconds: f64,
}

/// Bounded FIFO of issued request ids.
#[derive(Debug, Default)]
struct Issued {
    ids: HashSet<String>,
    order: VecDeque<String>,
}

impl Issued {
    fn insert(&mut self, id: String) {
        if self.order.len() == ISSUED_CAPACITY {
            if let Some(old) = self.order.pop_front() {
                self.ids.remove(&old);
            }
        }
        self.ids.insert(id.clone());
        self.order.push_back(id);
    }
}

#[derive(Debug)]
struct Inner {
    artifacts: Option<Arc<Artifacts>>,
    opts: SuggestOptions,
    started: Instant,
    issued: Mutex<Issued>,
    request_log: Option<JsonlLog>,
    selection_log: Option<JsonlLog>,
    max_body_bytes: usize,
}

/// Shared handler state; cheap to clone.
#[derive(Debug, Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// State over already-loaded artifacts; config overrides win over the
    /// threshold and k stored with them.
    pub fn new(artifacts: Option<Arc<Artifacts>>, cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        cfg.validate()?;
        let base = artifacts.as_ref().map_or(
            SuggestOptions {
                threshold_p: 0.5,
                k: DEFAULT_K,
            },
            |a| a.options(),
        );
        let opts = SuggestOptions {
            threshold_p: cfg.threshold_p.unwrap_or(base.threshold_p),
            k: cfg.k.unwrap_or(base.k),
        };
        let open = |p: &Option<std::path::PathBuf>| p.as_deref().map(JsonlLog::open).transpose();
        Ok(Self {
            inner: Arc::new(Inner {
                artifacts,
                opts,
                started: Instant::now(),
                issued: Mutex::new(Issued::default()),
                request_log: open(&cfg.request_log)?,
                selection_log: open(&cfg.selection_log)?,
                max_body_bytes: cfg.max_body_bytes,
            }),
        })
    }

    /// Loads artifacts from `cfg.artifact_dir`.
    pub fn load(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        let artifacts = Artifacts::load(&cfg.artifact_dir)?;
        Self::new(Some(Arc::new(artifacts)), cfg)
    }

    pub fn options(&self) -> SuggestOptions {
        self.inner.opts
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn not_loaded() -> ApiError {
    ApiError(StatusCode::SERVICE_UNAVAILABLE, "artifacts not loaded".into())
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn parse<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| bad_request(format!("malformed body: {e}")))
}

pub fn router(state: AppState) -> Router {
    let limit = state.inner.max_body_bytes;
    Router::new()
        .route("/suggest", post(suggest_handler))
        .route("/canned", get(canned_handler))
        .route("/feedback", post(feedback_handler))
        .route("/health", get(health_handler))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

async fn suggest_handler(State(state): State<AppState>, body: Bytes) -> Result<Json<SuggestResponse>, ApiError> {
    let inner = &state.inner;
    let art = inner.artifacts.as_ref().ok_or_else(not_loaded)?;
    let req: SuggestRequest = parse(&body)?;
    if req.text.trim().is_empty() {
        return Err(bad_request("text must not be empty"));
    }
    let s = suggest(&req.text, inner.opts, art)
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let request_id = uuid::Uuid::new_v4().to_string();
    let out = SuggestResponse::from_suggestion(request_id.clone(), s);
    if let Some(log) = &inner.request_log {
        let entry = RequestLogEntry {
            request_id: &out.request_id,
            timestamp: now_ms(),
            session_id: req.session_id.as_deref(),
            text: &req.text,
            threshold_p: inner.opts.threshold_p,
            k: inner.opts.k,
            triggered: out.triggered,
            trigger_score: out.trigger_score,
            response_ids: out.items.iter().map(|i| i.response_id.as_str()).collect(),
            latency_ms: out.latency_ms,
        };
        if let Err(e) = log.append(&entry) {
            tracing::warn!(path = %log.path().display(), "request log write failed: {e}");
        }
    }
    inner
        .issued
        .lock()
        .unwrap_or_else(|p| p.into_inner())
        .insert(request_id);
    Ok(Json(out))
}

async fn canned_handler(State(state): State<AppState>) -> Result<Json<CannedSummary>, ApiError> {
    let art = state.inner.artifacts.as_ref().ok_or_else(not_loaded)?;
    let canned = &art.canned;
    let mut responses: Vec<CannedEntry> = canned
        .responses
        .iter()
        .map(|r| CannedEntry {
            id: r.id.clone(),
            text: r.text.clone(),
            cluster_id: r.cluster_id,
            rule_ids: r.variants.iter().map(|v| v.rule_id.clone()).collect(),
        })
        .collect();
    responses.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Json(CannedSummary {
        k_selected: canned.k_selected,
        density_threshold: canned.density_threshold,
        responses,
    }))
}

async fn feedback_handler(State(state): State<AppState>, body: Bytes) -> Result<StatusCode, ApiError> {
    let inner = &state.inner;
    let mut event: SelectionEvent = parse(&body)?;
    if let Some(rank) = event.chosen_rank {
        if rank == 0 || rank > inner.opts.k {
            return Err(bad_request(format!("chosen_rank must lie in [1, {}], got {rank}", inner.opts.k)));
        }
    }
    let known = inner
        .issued
        .lock()
        .unwrap_or_else(|p| p.into_inner())
        .ids
        .contains(&event.request_id);
    if !known {
        return Err(ApiError(StatusCode::NOT_FOUND, format!("unknown request_id {}", event.request_id)));
    }
    // only sessions that opted in are recorded
    if let (Some(log), Some(_)) = (&inner.selection_log, &event.session_id) {
        event.timestamp.get_or_insert_with(now_ms);
        log.append(&event)
            .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("selection log: {e}")))?;
    }
    Ok(StatusCode::NO_CONTENT)
}

async fn health_handler(State(state): State<AppState>) -> Json<Health> {
    let inner = &state.inner;
    Json(Health {
        status: if inner.artifacts.is_some() { "ok" } else { "unloaded" }.into(),
        fingerprints: inner
            .artifacts
            .as_ref()
            .map(|a| a.fingerprints.clone())
            .unwrap_or_default(),
        uptime_seconds: inner.started.elapsed().as_secs_f64(),
    })
}

/// Loads artifacts, binds, and serves until Ctrl-C.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let state = AppState::load(&cfg)?;
    let listener = tokio::net::TcpListener::bind(&cfg.bind).await?;
    tracing::info!(
        addr = %listener.local_addr()?,
        artifacts = %cfg.artifact_dir.display(),
        "serving"
    );
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
