//! Session-oriented HTTP API. Each session holds one source image and one
//! pair list; a run executes on a blocking worker and is observed by polling.

use std::collections::{HashMap, VecDeque};
use std::future::Future;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dragkit_core::engine::{IterationRecord, RgbImage};
use dragkit_core::geometry::PointPair;
use serde::{Deserialize, Serialize};

use crate::engine::Engine;
use crate::error::PointIssue;
use crate::formats::{self, PointEntry, ReportDocument};

pub const API_VERSION: u32 = 1;
/// Iteration records kept per session for the status endpoint.
pub const LOSS_TAIL: usize = 20;
const BODY_LIMIT: usize = 32 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Idle,
    Running,
    Done,
    Failed,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Idle => "idle",
            Status::Running => "running",
            Status::Done => "done",
            Status::Failed => "failed",
        }
    }
}

struct Artifacts {
    edited: Vec<u8>,
    mask: Vec<u8>,
    displacement: Vec<u8>,
    report: String,
    mean_distance: f64,
    converged: bool,
}

struct Session {
    image: Arc<RgbImage>,
    pairs: Vec<PointPair>,
    status: Status,
    seed: Option<u64>,
    tail: VecDeque<IterationRecord>,
    iterations: usize,
    error: Option<String>,
    artifacts: Option<Arc<Artifacts>>,
}

struct Shared {
    engine: Arc<Engine>,
    sessions: Mutex<HashMap<String, Session>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(engine: Engine) -> Self {
        Self(Arc::new(Shared {
            engine: Arc::new(engine),
            sessions: Mutex::new(HashMap::new()),
        }))
    }

    fn sessions(&self) -> MutexGuard<'_, HashMap<String, Session>> {
        self.0.sessions.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(delete_session))
        .route("/sessions/{id}/pairs", post(set_pairs))
        .route("/sessions/{id}/mask", get(mask))
        .route("/sessions/{id}/run", post(run))
        .route("/sessions/{id}/status", get(status))
        .route("/sessions/{id}/result", get(result_image))
        .route("/sessions/{id}/result/report", get(result_report))
        .route("/sessions/{id}/result/mask", get(result_mask))
        .route(
            "/sessions/{id}/result/displacement",
            get(result_displacement),
        )
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

pub async fn serve(
    listener: tokio::net::TcpListener,
    engine: Engine,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(AppState::new(engine)))
        .with_graceful_shutdown(shutdown)
        .await
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    details: Vec<PointIssue>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            details: Vec::new(),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no session {id}"),
        )
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    fn invalid(message: impl Into<String>, details: Vec<PointIssue>) -> Self {
        Self {
            details,
            ..Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", message)
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    version: u32,
    error: ErrorDetail<'a>,
}

#[derive(Serialize)]
struct ErrorDetail<'a> {
    code: &'a str,
    message: &'a str,
    details: &'a [PointIssue],
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            version: API_VERSION,
            error: ErrorDetail {
                code: self.code,
                message: &self.message,
                details: &self.details,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

#[derive(Serialize)]
struct SessionBody {
    version: u32,
    id: String,
    width: usize,
    height: usize,
    status: Status,
    pairs: Vec<PointEntry>,
}

fn session_body(id: &str, s: &Session) -> SessionBody {
    SessionBody {
        version: API_VERSION,
        id: id.to_string(),
        width: s.image.width(),
        height: s.image.height(),
        status: s.status,
        pairs: s.pairs.iter().copied().map(PointEntry::from).collect(),
    }
}

async fn create_session(
    State(state): State<AppState>,
    mut multipart: Multipart,
) -> ApiResult<(StatusCode, Json<SessionBody>)> {
    let mut upload = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text()))?
    {
        if field.name() == Some("image") {
            let bytes = field.bytes().await.map_err(|e| {
                ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
            })?;
            upload = Some(bytes);
        }
    }
    let bytes =
        upload.ok_or_else(|| ApiError::invalid("multipart field \"image\" is required", vec![]))?;
    let image = formats::decode_png(&bytes)
        .map_err(|e| ApiError::invalid(format!("image is not a readable PNG: {e}"), vec![]))?;
    state
        .0
        .engine
        .check_image(image.width(), image.height())
        .map_err(|e| ApiError::invalid(e, vec![]))?;

    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = Session {
        image: Arc::new(image),
        pairs: Vec::new(),
        status: Status::Idle,
        seed: None,
        tail: VecDeque::new(),
        iterations: 0,
        error: None,
        artifacts: None,
    };
    let body = session_body(&id, &session);
    state.sessions().insert(id, session);
    Ok((StatusCode::CREATED, Json(body)))
}

async fn delete_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<StatusCode> {
    state
        .sessions()
        .remove(&id)
        .map(|_| StatusCode::NO_CONTENT)
        .ok_or_else(|| ApiError::not_found(&id))
}

async fn set_pairs(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<SessionBody>> {
    let text = std::str::from_utf8(&body)
        .map_err(|_| ApiError::invalid("body must be UTF-8 JSON", vec![]))?;
    let mut sessions = state.sessions();
    let session = sessions
        .get_mut(&id)
        .ok_or_else(|| ApiError::not_found(&id))?;
    if session.status != Status::Idle {
        return Err(ApiError::conflict(format!(
            "pairs can only change while idle; session is {}",
            session.status.as_str()
        )));
    }
    let pairs = formats::parse_points(text)
        .map_err(|issues| ApiError::invalid("malformed pairs", issues))?;
    formats::validate_pairs(&pairs, session.image.width(), session.image.height())
        .map_err(|issues| ApiError::invalid("invalid pairs", issues))?;
    session.pairs = pairs;
    Ok(Json(session_body(&id, session)))
}

async fn mask(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let (w, h, pairs) = {
        let sessions = state.sessions();
        let s = sessions.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
        (s.image.width(), s.image.height(), s.pairs.clone())
    };
    if pairs.is_empty() {
        return Err(ApiError::conflict("session has no pairs"));
    }
    let mask = state
        .0
        .engine
        .mask(w, h, &pairs)
        .map_err(|e| ApiError::invalid(e.to_string(), vec![]))?;
    Ok(png(formats::encode_mask_png(&mask)))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunRequest {
    #[serde(default)]
    seed: u64,
}

async fn run(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<SessionBody>)> {
    let request: RunRequest = if body.iter().all(u8::is_ascii_whitespace) {
        RunRequest::default()
    } else {
        serde_json::from_slice(&body)
            .map_err(|e| ApiError::invalid(format!("run request: {e}"), vec![]))?
    };
    let (image, pairs, body) = {
        let mut sessions = state.sessions();
        let s = sessions
            .get_mut(&id)
            .ok_or_else(|| ApiError::not_found(&id))?;
        if s.status != Status::Idle {
            return Err(ApiError::conflict(format!(
                "session is {}",
                s.status.as_str()
            )));
        }
        if s.pairs.is_empty() {
            return Err(ApiError::conflict("session has no pairs"));
        }
        s.status = Status::Running;
        s.seed = Some(request.seed);
        (s.image.clone(), s.pairs.clone(), session_body(&id, s))
    };

    let worker = state.clone();
    let seed = request.seed;
    tokio::task::spawn_blocking(move || execute(worker, id, image, pairs, seed));
    Ok((StatusCode::ACCEPTED, Json(body)))
}

fn execute(state: AppState, id: String, image: Arc<RgbImage>, pairs: Vec<PointPair>, seed: u64) {
    let engine = state.0.engine.clone();
    let mut observe = |record: &IterationRecord| {
        if let Some(s) = state.sessions().get_mut(&id) {
            s.iterations += 1;
            s.tail.push_back(record.clone());
            while s.tail.len() > LOSS_TAIL {
                s.tail.pop_front();
            }
        }
    };
    let outcome = engine.edit(&image, &pairs, seed, &mut observe).map(|out| {
        let factor = engine.backend().latent_factor;
        let (mean_distance, converged) = (out.report.mean_distance, out.report.converged);
        Artifacts {
            edited: formats::encode_png(&out.image),
            mask: formats::encode_mask_png(&out.mask),
            displacement: formats::encode_displacement_png(&out.displacement, factor),
            report: ReportDocument::new(seed, &image, &pairs, out.report).to_json(),
            mean_distance,
            converged,
        }
    });
    if let Some(s) = state.sessions().get_mut(&id) {
        match outcome {
            Ok(artifacts) => {
                s.artifacts = Some(Arc::new(artifacts));
                s.status = Status::Done;
            }
            Err(e) => {
                s.error = Some(e.to_string());
                s.status = Status::Failed;
            }
        }
    }
}

#[derive(Serialize)]
struct StatusBody {
    version: u32,
    id: String,
    status: Status,
    seed: Option<u64>,
    iterations: usize,
    loss_tail: Vec<IterationRecord>,
    error: Option<String>,
    mean_distance: Option<f64>,
    converged: Option<bool>,
}

async fn status(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<StatusBody>> {
    let sessions = state.sessions();
    let s = sessions.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    Ok(Json(StatusBody {
        version: API_VERSION,
        id: id.clone(),
        status: s.status,
        seed: s.seed,
        iterations: s.iterations,
        loss_tail: s.tail.iter().cloned().collect(),
        error: s.error.clone(),
        mean_distance: s.artifacts.as_ref().map(|a| a.mean_distance),
        converged: s.artifacts.as_ref().map(|a| a.converged),
    }))
}

fn artifacts(state: &AppState, id: &str) -> ApiResult<Arc<Artifacts>> {
    let sessions = state.sessions();
    let s = sessions.get(id).ok_or_else(|| ApiError::not_found(id))?;
    match (&s.artifacts, s.status) {
        (Some(a), Status::Done) => Ok(a.clone()),
        (_, Status::Failed) => Err(ApiError::conflict(format!(
            "run failed: {}",
            s.error.as_deref().unwrap_or("unknown error")
        ))),
        _ => Err(ApiError::conflict("no result yet")),
    }
}

async fn result_image(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    Ok(png(artifacts(&state, &id)?.edited.clone()))
}

async fn result_mask(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(png(artifacts(&state, &id)?.mask.clone()))
}

async fn result_displacement(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    Ok(png(artifacts(&state, &id)?.displacement.clone()))
}

async fn result_report(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let report = artifacts(&state, &id)?.report.clone();
    Ok(([(header::CONTENT_TYPE, "application/json")], report).into_response())
}
