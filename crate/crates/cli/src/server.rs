//! HTTP control service: sessions, live steering, metrics and the advisor.
//!
//! Every mutation of a session goes through that session's lock, so
//! concurrent callers are applied one at a time at event boundaries.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dstesim_core::prelude::*;
use futures::Stream;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

/// Events a running session processes per lock acquisition.
const RUN_BUDGET: u64 = 2000;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let kind = match self.status {
            StatusCode::NOT_FOUND => "NOT_FOUND",
            StatusCode::CONFLICT => "CONFLICT",
            _ => "VALIDATION_ERROR",
        };
        (self.status, Json(serde_json::json!({ "error": kind, "message": self.message }))).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::IllegalTransition { .. } | SessionError::Engine(EngineError::Finished) => ApiError::new(StatusCode::CONFLICT, e.to_string()),
            SessionError::Engine(e) => ApiError::bad_request(e.to_string()),
        }
    }
}

impl From<AdvisorError> for ApiError {
    fn from(e: AdvisorError) -> Self {
        match e {
            AdvisorError::EmptyBase => ApiError::new(StatusCode::CONFLICT, e.to_string()),
            AdvisorError::Io(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
            _ => ApiError::bad_request(e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn body<T: DeserializeOwned>(bytes: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

struct SessionHandle {
    session: Mutex<Session>,
    version: watch::Sender<u64>,
    driving: AtomicBool,
}

impl SessionHandle {
    fn lock(&self) -> std::sync::MutexGuard<'_, Session> {
        self.session.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn bump(&self) {
        self.version.send_modify(|v| *v += 1);
    }
}

pub struct AppState {
    sessions: Mutex<BTreeMap<String, Arc<SessionHandle>>>,
    next_id: AtomicU64,
    advisor: Mutex<CaseBase>,
    /// Directory that advisor load/save paths resolve against.
    case_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(advisor: CaseBase, case_dir: Option<PathBuf>) -> Arc<Self> {
        Arc::new(AppState { sessions: Mutex::new(BTreeMap::new()), next_id: AtomicU64::new(1), advisor: Mutex::new(advisor), case_dir })
    }

    fn session(&self, id: &str) -> ApiResult<Arc<SessionHandle>> {
        self.sessions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session `{id}`")))
    }

    fn advisor(&self) -> std::sync::MutexGuard<'_, CaseBase> {
        self.advisor.lock().unwrap_or_else(|p| p.into_inner())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/start", post(start))
        .route("/sessions/{id}/pause", post(pause))
        .route("/sessions/{id}/resume", post(resume))
        .route("/sessions/{id}/step", post(step))
        .route("/sessions/{id}/model", post(switch_model))
        .route("/sessions/{id}/bc", post(retune))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/stream", get(stream))
        .route("/sessions/{id}/trace", get(trace))
        .route("/sessions/{id}/report", get(report))
        .route("/advisor/recommend", post(recommend))
        .route("/advisor/retain", post(retain))
        .route("/advisor/cases", get(get_cases).put(put_cases))
        .route("/advisor/load", post(load_cases))
        .route("/advisor/save", post(save_cases))
        .with_state(state)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    #[serde(default)]
    scenario: Option<Scenario>,
    #[serde(default)]
    script: Option<String>,
    #[serde(default)]
    run: usize,
}

#[derive(Serialize)]
struct Created {
    id: String,
    state: SessionState,
}

async fn create_session(State(app): State<Arc<AppState>>, bytes: Bytes) -> ApiResult<(StatusCode, Json<Created>)> {
    let req: CreateSession = body(&bytes)?;
    let scenario = match (req.scenario, req.script) {
        (Some(s), None) => s,
        (None, Some(text)) => parse_script(&text, None).map_err(|e| ApiError::bad_request(e.to_string()))?,
        _ => return Err(ApiError::bad_request("give exactly one of `scenario` or `script`")),
    };
    let id = format!("s{}", app.next_id.fetch_add(1, Ordering::Relaxed));
    let session = Session::new(id.clone(), scenario, req.run)?;
    let state = session.state();
    let handle = Arc::new(SessionHandle { session: Mutex::new(session), version: watch::channel(0).0, driving: AtomicBool::new(false) });
    app.sessions.lock().unwrap_or_else(|p| p.into_inner()).insert(id.clone(), handle);
    Ok((StatusCode::CREATED, Json(Created { id, state })))
}

async fn list_sessions(State(app): State<Arc<AppState>>) -> Json<Vec<SessionState>> {
    let handles: Vec<Arc<SessionHandle>> = app.sessions.lock().unwrap_or_else(|p| p.into_inner()).values().cloned().collect();
    Json(handles.iter().map(|h| h.lock().state()).collect())
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionState>> {
    Ok(Json(app.session(&id)?.lock().state()))
}

async fn delete_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    app.session(&id)?;
    app.sessions.lock().unwrap_or_else(|p| p.into_inner()).remove(&id);
    Ok(StatusCode::NO_CONTENT)
}

/// Advances a running session in the background until it pauses or ends.
fn drive(handle: Arc<SessionHandle>) {
    if handle.driving.swap(true, Ordering::AcqRel) {
        return;
    }
    tokio::spawn(async move {
        loop {
            let running = {
                let mut s = handle.lock();
                s.advance(RUN_BUDGET);
                s.status() == SessionStatus::Running
            };
            handle.bump();
            if !running {
                break;
            }
            tokio::task::yield_now().await;
        }
        handle.driving.store(false, Ordering::Release);
        // A resume may have raced with the exit above.
        if handle.lock().status() == SessionStatus::Running {
            drive(handle);
        }
    });
}

fn transition(app: &AppState, id: &str, f: impl FnOnce(&mut Session) -> Result<(), SessionError>) -> ApiResult<(Arc<SessionHandle>, SessionState)> {
    let h = app.session(id)?;
    let state = {
        let mut s = h.lock();
        f(&mut s)?;
        s.state()
    };
    h.bump();
    Ok((h, state))
}

async fn start(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionState>> {
    let (h, state) = transition(&app, &id, Session::start)?;
    drive(h);
    Ok(Json(state))
}

async fn pause(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionState>> {
    Ok(Json(transition(&app, &id, Session::pause)?.1))
}

async fn resume(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionState>> {
    let (h, state) = transition(&app, &id, Session::resume)?;
    drive(h);
    Ok(Json(state))
}

#[derive(Deserialize)]
struct StepQuery {
    events: Option<u64>,
    /// Seconds.
    until: Option<f64>,
}

#[derive(Serialize)]
struct Stepped {
    processed: u64,
    state: SessionState,
}

async fn step(State(app): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<StepQuery>) -> ApiResult<Json<Stepped>> {
    if q.until.is_some_and(|t| !(t.is_finite() && t >= 0.0)) {
        return Err(ApiError::bad_request("`until` must be a non-negative number of seconds"));
    }
    let h = app.session(&id)?;
    let out = {
        let mut s = h.lock();
        let processed = s.step(q.events, q.until.map(SimTime::from_secs))?;
        Stepped { processed, state: s.state() }
    };
    h.bump();
    Ok(Json(out))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ModelRequest {
    WithBc { config: GbamConfig, #[serde(default)] bc: Option<BcVector> },
    Bare(GbamConfig),
}

#[derive(Serialize)]
struct Switched {
    report: SwitchReport,
    state: SessionState,
}

fn apply(app: &AppState, id: &str, action: ControlAction) -> ApiResult<Json<Switched>> {
    let h = app.session(id)?;
    let out = {
        let mut s = h.lock();
        let report = s.apply(action)?;
        Switched { report, state: s.state() }
    };
    h.bump();
    Ok(Json(out))
}

async fn switch_model(State(app): State<Arc<AppState>>, Path(id): Path<String>, bytes: Bytes) -> ApiResult<Json<Switched>> {
    app.session(&id)?;
    let (config, bc) = match body(&bytes)? {
        ModelRequest::WithBc { config, bc } => (config, bc),
        ModelRequest::Bare(config) => (config, None),
    };
    apply(&app, &id, ControlAction::Model { config, bc })
}

#[derive(Deserialize)]
struct BcRequest {
    #[serde(default = "all_links")]
    selector: LinkSelector,
    bc: BcVector,
}

fn all_links() -> LinkSelector {
    LinkSelector::All
}

async fn retune(State(app): State<Arc<AppState>>, Path(id): Path<String>, bytes: Bytes) -> ApiResult<Json<Switched>> {
    app.session(&id)?;
    let req: BcRequest = body(&bytes)?;
    apply(&app, &id, ControlAction::Bc { selector: req.selector, bc: req.bc })
}

#[derive(Deserialize)]
struct SinceQuery {
    /// Seconds; slots starting at or after it are returned.
    since: Option<f64>,
}

fn since(q: &SinceQuery) -> ApiResult<SimTime> {
    match q.since {
        Some(t) if !(t.is_finite() && t >= 0.0) => Err(ApiError::bad_request("`since` must be a non-negative number of seconds")),
        Some(t) => Ok(SimTime::from_secs(t)),
        None => Ok(SimTime::ZERO),
    }
}

async fn metrics(State(app): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<SinceQuery>) -> ApiResult<Json<MetricsDelta>> {
    let t = since(&q)?;
    Ok(Json(app.session(&id)?.lock().metrics(t)))
}

/// One consolidated sample as pushed on the stream.
#[derive(Serialize)]
struct Sample<'a> {
    metric: &'a str,
    slot_start: SimTime,
    value: Option<f64>,
}

fn samples(delta: &MetricsDelta) -> Vec<Event> {
    let mut out = Vec::new();
    for s in &delta.series {
        for sl in &s.slots {
            let data = serde_json::to_string(&Sample { metric: &s.id, slot_start: sl.start, value: sl.value }).expect("sample serializes");
            out.push(Event::default().event("sample").id(format!("{}", delta.next.as_secs())).data(data));
        }
    }
    out
}

/// Server-sent samples from `since`, one event per consolidated slot; a
/// `cursor` event after each batch carries the value to reconnect with.
async fn stream(State(app): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<SinceQuery>) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let start = since(&q)?;
    let h = app.session(&id)?;
    let rx = h.version.subscribe();
    let s = futures::stream::unfold((h, rx, start, false), |(h, mut rx, cursor, ended)| async move {
        if ended {
            return None;
        }
        loop {
            let (delta, done) = {
                let s = h.lock();
                (s.metrics(cursor), s.status() == SessionStatus::Done)
            };
            if delta.next > cursor || done {
                let mut events = samples(&delta);
                events.push(Event::default().event(if done { "end" } else { "cursor" }).data(format!("{{\"next\":{}}}", delta.next.as_secs())));
                let batch = futures::stream::iter(events.into_iter().map(Ok));
                return Some((batch, (h, rx, delta.next, done)));
            }
            if rx.changed().await.is_err() {
                return None;
            }
        }
    });
    use futures::StreamExt;
    Ok(Sse::new(s.flatten()).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}

async fn trace(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let h = app.session(&id)?;
    let mut text = String::new();
    for r in h.lock().trace() {
        text.push_str(&serde_json::to_string(r).expect("trace serializes"));
        text.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

async fn report(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<RunReport>> {
    let h = app.session(&id)?;
    let r = h.lock().report();
    r.map(Json).ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "session has not finished"))
}

#[derive(Deserialize)]
struct RecommendRequest {
    features: Vec<f64>,
}

async fn recommend(State(app): State<Arc<AppState>>, bytes: Bytes) -> ApiResult<Json<Recommendation>> {
    let req: RecommendRequest = body(&bytes)?;
    Ok(Json(app.advisor().recommend(&req.features)?))
}

#[derive(Serialize)]
struct Retained {
    changed: bool,
    size: usize,
}

async fn retain(State(app): State<Arc<AppState>>, bytes: Bytes) -> ApiResult<Json<Retained>> {
    let case: Case = body(&bytes)?;
    let mut base = app.advisor();
    let changed = base.retain(case)?;
    Ok(Json(Retained { changed, size: base.len() }))
}

async fn get_cases(State(app): State<Arc<AppState>>) -> Json<CaseBase> {
    Json(app.advisor().clone())
}

async fn put_cases(State(app): State<Arc<AppState>>, bytes: Bytes) -> ApiResult<Json<Retained>> {
    let text = std::str::from_utf8(&bytes).map_err(|_| ApiError::bad_request("body is not UTF-8"))?;
    let base = CaseBase::from_json(text)?;
    let size = base.len();
    *app.advisor() = base;
    Ok(Json(Retained { changed: true, size }))
}

#[derive(Deserialize)]
struct PathRequest {
    path: PathBuf,
}

fn case_path(app: &AppState, p: PathBuf) -> PathBuf {
    match &app.case_dir {
        Some(d) if p.is_relative() => d.join(p),
        _ => p,
    }
}

async fn load_cases(State(app): State<Arc<AppState>>, bytes: Bytes) -> ApiResult<Json<Retained>> {
    let req: PathRequest = body(&bytes)?;
    let path = case_path(&app, req.path);
    let base = CaseBase::load(&path).map_err(|e| match e {
        AdvisorError::Io(io) => ApiError::bad_request(format!("{}: {io}", path.display())),
        other => other.into(),
    })?;
    let size = base.len();
    *app.advisor() = base;
    Ok(Json(Retained { changed: true, size }))
}

async fn save_cases(State(app): State<Arc<AppState>>, bytes: Bytes) -> ApiResult<Json<Retained>> {
    let req: PathRequest = body(&bytes)?;
    let path = case_path(&app, req.path);
    let base = app.advisor().clone();
    base.save(&path)?;
    Ok(Json(Retained { changed: false, size: base.len() }))
}

/// Serves the API on `addr` until the process is stopped.
pub async fn serve(addr: &str, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
