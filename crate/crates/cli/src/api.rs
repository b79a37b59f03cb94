//! HTTP/JSON API over prover sessions.
//!
//! Every session sits behind its own mutex, so requests to one session are
//! applied in arrival order while different sessions proceed in parallel.
//! Query handlers answer with the response stored in the transcript, so
//! what a client sees is byte-for-byte what replay checks.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ebp_core::adversary::AdversaryConfig;
use ebp_core::codec::state_records;
use ebp_core::complex::export::to_export;
use ebp_core::complex::graph::{build_level, Caps};
use ebp_core::harness::{Session, SessionError};
use ebp_core::{ProcessId, Schedule, TaskSpec, Value};
use serde::Deserialize;
use serde_json::{json, Value as JsonValue};

use crate::run::{new_protocol, ProtocolName};

type Shared = Arc<Mutex<Session>>;

#[derive(Default)]
pub struct AppState {
    sessions: RwLock<HashMap<String, Shared>>,
    next_id: AtomicU64,
    caps: Caps,
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            _ if e.is_cap() => StatusCode::UNPROCESSABLE_ENTITY,
            _ if e.is_internal() => StatusCode::INTERNAL_SERVER_ERROR,
            SessionError::NotRunning => StatusCode::CONFLICT,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(status, e.to_string())
    }
}

fn bad(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

pub fn router(static_dir: Option<PathBuf>) -> Router {
    let app = Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(summary))
        .route("/sessions/{id}/query", post(query))
        .route("/sessions/{id}/output-query", post(output_query))
        .route("/sessions/{id}/commit", post(commit))
        .route("/sessions/{id}/graph", get(graph))
        .route("/sessions/{id}/transcript", get(transcript))
        .with_state(Arc::new(AppState::default()));
    match static_dir {
        Some(dir) => app.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => app,
    }
}

fn lookup(state: &AppState, id: &str) -> Result<Shared, ApiError> {
    let sessions = state.sessions.read().expect("session table lock");
    sessions.get(id).cloned().ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no session {id}")))
}

/// Runs `f` on the session off the async workers; game queries can take
/// seconds.
async fn with_session<T: Send + 'static>(
    state: &AppState,
    id: &str,
    f: impl FnOnce(&mut Session) -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    let shared = lookup(state, id)?;
    tokio::task::spawn_blocking(move || {
        let mut s = shared.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut s)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

#[derive(Deserialize)]
struct CreateRequest {
    n: u8,
    k: u8,
    #[serde(default)]
    protocol: Option<ProtocolName>,
}

async fn create(State(state): State<Arc<AppState>>, Json(req): Json<CreateRequest>) -> Result<Response, ApiError> {
    let task = TaskSpec::new(req.n, req.k).map_err(|e| bad(e.to_string()))?;
    let which = req.protocol.unwrap_or(ProtocolName::Adversary);
    let protocol = new_protocol(task, which, AdversaryConfig::default()).map_err(bad)?;
    let session = Session::new(protocol);
    let id = (state.next_id.fetch_add(1, Ordering::Relaxed) + 1).to_string();
    state.sessions.write().expect("session table lock").insert(id.clone(), Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(json!({ "sessionId": id }))).into_response())
}

fn describe(id: &str, s: &Session) -> JsonValue {
    let store = s.store();
    let config = |c: &ebp_core::Configuration| json!({ "configKey": s.key_of(c), "states": state_records(store, c) });
    let committed: Vec<JsonValue> = s
        .committed()
        .iter()
        .map(|(origin, c)| {
            let mut j = config(c);
            j["inputs"] = json!(origin.inputs(store));
            j
        })
        .collect();
    let reached: Vec<JsonValue> = s
        .reached()
        .iter()
        .map(|r| {
            let mut j = config(&r.config);
            j["base"] = json!(s.key_of(&s.committed()[r.base].1));
            j["beta"] = json!(r.beta);
            j
        })
        .collect();
    let mut j = json!({
        "sessionId": id,
        "n": s.task().n,
        "k": s.task().k,
        "phase": s.phase(),
        "status": s.status(),
        "queries": s.queries(),
        "level": s.protocol().level(),
        "alpha": s.alpha(),
        "committed": committed,
        "reached": reached,
        "transcriptLength": s.transcript().len(),
    });
    if let Some(adv) = s.adversary() {
        let terminated: Vec<Vec<String>> = s
            .task()
            .values()
            .map(|a| adv.terminated(a).iter().map(|&v| store.key(v).to_hex()).collect())
            .collect();
        j["terminated"] = json!(terminated);
    }
    j
}

async fn summary(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<JsonValue>, ApiError> {
    let key = id.clone();
    with_session(&state, &id, move |s| Ok(Json(describe(&key, s)))).await
}

/// The response of the record just appended, plus the session status.
fn last_response(s: &Session) -> JsonValue {
    let mut j = s.transcript().last().map(|r| r.response.clone()).unwrap_or(JsonValue::Null);
    j["sessionStatus"] = json!(s.status());
    j
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct StepRequest {
    config_key: String,
    process: ProcessId,
}

async fn query(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<StepRequest>,
) -> Result<Json<JsonValue>, ApiError> {
    with_session(&state, &id, move |s| {
        let c = s.resolve(&req.config_key)?;
        s.step_query(&c, req.process)?;
        Ok(Json(last_response(s)))
    })
    .await
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct OutputRequest {
    config_key: String,
    processes: Vec<ProcessId>,
    value: Value,
}

async fn output_query(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<OutputRequest>,
) -> Result<Json<JsonValue>, ApiError> {
    with_session(&state, &id, move |s| {
        let c = s.resolve(&req.config_key)?;
        s.output_query(&c, &req.processes, req.value)?;
        Ok(Json(last_response(s)))
    })
    .await
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct CommitRequest {
    config_key: String,
    schedule: Schedule,
}

async fn commit(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<CommitRequest>,
) -> Result<Json<JsonValue>, ApiError> {
    with_session(&state, &id, move |s| {
        let c = s.resolve(&req.config_key)?;
        let before = s.transcript().len();
        s.commit(&c, &req.schedule)?;
        // A first commit also appends the finalization record.
        let mut j = s.transcript()[before].response.clone();
        if let Some(f) = s.transcript().get(before + 1) {
            j["finalize"] = f.response.clone();
        }
        j["sessionStatus"] = json!(s.status());
        Ok(Json(j))
    })
    .await
}

#[derive(Deserialize)]
struct GraphQuery {
    level: Option<u32>,
}

async fn graph(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<GraphQuery>,
) -> Result<Json<JsonValue>, ApiError> {
    let caps = state.caps;
    with_session(&state, &id, move |s| {
        let task = s.task();
        let adv = s.adversary_mut().ok_or_else(|| bad("graph export needs the adversary protocol"))?;
        let level = q.level.unwrap_or(adv.level());
        if level > adv.level() || level > caps.max_level {
            return Err(bad(format!("level {level} is not built (current level {})", adv.level())));
        }
        let delta = adv.delta().clone();
        let g = build_level(adv.store_mut(), &task, &delta, level, &caps)
            .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
        let export = to_export(adv.store(), &g, &delta);
        Ok(Json(serde_json::to_value(export).expect("export serializes")))
    })
    .await
}

async fn transcript(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let body = with_session(&state, &id, |s| Ok(s.transcript_jsonl())).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}
