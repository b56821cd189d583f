//! HTTP/JSON API over profiler sessions.
//!
//! Model artifacts are JSON files in a data directory, addressed by file
//! stem. Sessions live in memory and are evicted after an idle timeout.
//! Every payload carries `"v": 1`.

use std::collections::HashMap;
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::net::TcpListener;

use profiler_core::data::{FactorKind, FactorValue};
use profiler_core::desirability::Goal;
use profiler_core::extrapolation::MetricKind;
use profiler_core::models::ModelArtifact;
use profiler_core::optimizer::{GaConfig, OptimumReport};
use profiler_core::profiler::{init_state, FactorUpdate, Mode, ProfilerState, StateSnapshot};
use profiler_core::Error as CoreError;

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(3600);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub idle_timeout: Duration,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
        }
    }
}

struct Session {
    state: Mutex<ProfilerState>,
    optimizing: AtomicBool,
    touched: Mutex<Instant>,
}

impl Session {
    fn touch(&self) {
        *lock(&self.touched) = Instant::now();
    }

    fn idle_for(&self) -> Duration {
        lock(&self.touched).elapsed()
    }
}

/// Clears the in-flight flag when the optimize request finishes, however it
/// finishes.
struct InFlight(Arc<Session>);

impl Drop for InFlight {
    fn drop(&mut self) {
        self.0.optimizing.store(false, Ordering::SeqCst);
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Clone)]
pub struct AppState {
    config: Arc<ServiceConfig>,
    sessions: Arc<Mutex<HashMap<String, Arc<Session>>>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            config: Arc::new(config),
            sessions: Arc::default(),
        }
    }

    pub fn data_dir(&self) -> &Path {
        &self.config.data_dir
    }

    pub fn session_count(&self) -> usize {
        lock(&self.sessions).len()
    }

    /// Drops sessions idle for longer than `max_idle`, skipping any with an
    /// optimization in flight. Returns how many were removed.
    pub fn evict_idle(&self, max_idle: Duration) -> usize {
        let mut sessions = lock(&self.sessions);
        let before = sessions.len();
        sessions.retain(|_, s| s.optimizing.load(Ordering::SeqCst) || s.idle_for() <= max_idle);
        before - sessions.len()
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        let s = lock(&self.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id:?}")))?;
        s.touch();
        Ok(s)
    }

    fn model_path(&self, id: &str) -> Option<PathBuf> {
        let ok = !id.is_empty()
            && !id.starts_with('.')
            && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
        ok.then(|| self.config.data_dir.join(format!("{id}.json")))
    }

    fn load_model(&self, id: &str) -> Result<ModelArtifact, ApiError> {
        let path = self
            .model_path(id)
            .filter(|p| p.is_file())
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown model {id:?}")))?;
        ModelArtifact::load(&path).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(e: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, e.to_string())
    }

    fn unprocessable(e: impl ToString) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
    }

    fn internal(e: impl ToString) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    v: u32,
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            v: 1,
            error: &self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))
}

/// A model referenced by stored id or given inline.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Id(String),
    Inline(Box<ModelArtifact>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub v: Option<u32>,
    pub model: ModelRef,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub goals: Vec<Goal>,
    #[serde(default)]
    pub resolution: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetFactor {
    #[serde(default)]
    pub v: Option<u32>,
    pub name: String,
    /// A number for continuous factors, a level name for discrete ones, or
    /// the tagged `{"real": x}` / `{"level": i}` form.
    pub value: Value,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetMode {
    #[serde(default)]
    pub v: Option<u32>,
    pub mode: Mode,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SessionResponse {
    pub v: u32,
    pub id: String,
    pub state: StateSnapshot,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct FactorResponse {
    pub v: u32,
    pub update: FactorUpdate,
    pub state: StateSnapshot,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct OptimizeResponse {
    pub v: u32,
    pub report: OptimumReport,
    pub state: StateSnapshot,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelSummary {
    pub id: String,
    pub responses: Vec<String>,
    pub factors: Vec<String>,
    pub metric: MetricKind,
    pub threshold: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelList {
    pub v: u32,
    pub models: Vec<ModelSummary>,
}

fn check_version(v: Option<u32>) -> ApiResult<()> {
    match v {
        None | Some(1) => Ok(()),
        Some(other) => Err(ApiError::bad_request(format!("unsupported payload version {other}"))),
    }
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

async fn list_models(State(app): State<AppState>) -> ApiResult<Json<ModelList>> {
    blocking(move || {
        let dir = app.data_dir();
        let entries = std::fs::read_dir(dir).map_err(|e| ApiError::internal(format!("{}: {e}", dir.display())))?;
        let mut models = Vec::new();
        for entry in entries.flatten() {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
                continue;
            };
            match ModelArtifact::load(&path) {
                Ok(a) => models.push(ModelSummary {
                    id,
                    responses: a.responses.iter().map(|r| r.response().to_string()).collect(),
                    factors: a.space.factors.iter().map(|f| f.name.clone()).collect(),
                    metric: a.extrapolation.kind(),
                    threshold: a.extrapolation.threshold(),
                }),
                Err(e) => tracing::warn!("skipping {}: {e}", path.display()),
            }
        }
        models.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Json(ModelList { v: 1, models }))
    })
    .await
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<SessionResponse>)> {
    let req: CreateSession = parse_body(&body)?;
    check_version(req.v)?;
    blocking(move || {
        let artifact = match req.model {
            ModelRef::Id(id) => app.load_model(&id)?,
            ModelRef::Inline(a) => {
                a.validate().map_err(ApiError::bad_request)?;
                *a
            }
        };
        let mut state = init_state(Arc::new(artifact), req.goals, req.mode).map_err(ApiError::bad_request)?;
        if let Some(r) = req.resolution {
            state.set_resolution(r).map_err(ApiError::bad_request)?;
        }
        let snapshot = state.snapshot().map_err(ApiError::internal)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Arc::new(Session {
            state: Mutex::new(state),
            optimizing: AtomicBool::new(false),
            touched: Mutex::new(Instant::now()),
        });
        lock(&app.sessions).insert(id.clone(), session);
        Ok((
            StatusCode::CREATED,
            Json(SessionResponse {
                v: 1,
                id,
                state: snapshot,
            }),
        ))
    })
    .await
}

async fn get_session(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionResponse>> {
    let session = app.session(&id)?;
    blocking(move || {
        let state = lock(&session.state).snapshot().map_err(ApiError::internal)?;
        Ok(Json(SessionResponse { v: 1, id, state }))
    })
    .await
}

fn resolve_value(state: &ProfilerState, name: &str, value: &Value) -> ApiResult<FactorValue> {
    let factor = state.artifact().space.factor(name).map_err(ApiError::unprocessable)?;
    match (value, &factor.kind) {
        (Value::Number(n), FactorKind::Continuous { .. }) => n
            .as_f64()
            .map(FactorValue::Real)
            .ok_or_else(|| ApiError::unprocessable(format!("value {n} is not a finite number"))),
        (Value::String(s), FactorKind::Categorical { .. } | FactorKind::Ordinal { .. }) => {
            factor.level_index(s).map(FactorValue::Level).map_err(ApiError::unprocessable)
        }
        (Value::Object(_), _) => serde_json::from_value(value.clone()).map_err(ApiError::bad_request),
        (_, FactorKind::Continuous { .. }) => Err(ApiError::unprocessable(format!("factor `{name}` expects a number"))),
        _ => Err(ApiError::unprocessable(format!("factor `{name}` expects a level name"))),
    }
}

async fn set_factor(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<FactorResponse>> {
    let session = app.session(&id)?;
    let req: SetFactor = parse_body(&body)?;
    check_version(req.v)?;
    blocking(move || {
        let mut state = lock(&session.state);
        let value = resolve_value(&state, &req.name, &req.value)?;
        let update = state.set_factor(&req.name, value).map_err(|e| match e {
            CoreError::OutOfRange { .. } | CoreError::UnknownLevel { .. } | CoreError::MissingColumn(_) => {
                ApiError::unprocessable(e)
            }
            other => ApiError::internal(other),
        })?;
        let snapshot = state.snapshot().map_err(ApiError::internal)?;
        Ok(Json(FactorResponse {
            v: 1,
            update,
            state: snapshot,
        }))
    })
    .await
}

async fn set_mode(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<SessionResponse>> {
    let session = app.session(&id)?;
    let req: SetMode = parse_body(&body)?;
    check_version(req.v)?;
    blocking(move || {
        let mut state = lock(&session.state);
        state.set_mode(req.mode).map_err(ApiError::unprocessable)?;
        let snapshot = state.snapshot().map_err(ApiError::internal)?;
        Ok(Json(SessionResponse {
            v: 1,
            id,
            state: snapshot,
        }))
    })
    .await
}

async fn optimize(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<OptimizeResponse>> {
    let session = app.session(&id)?;
    let config: GaConfig = if body.iter().all(u8::is_ascii_whitespace) {
        GaConfig::default()
    } else {
        parse_body(&body)?
    };
    config.validate().map_err(ApiError::bad_request)?;
    if session.optimizing.swap(true, Ordering::SeqCst) {
        return Err(ApiError::new(StatusCode::CONFLICT, "an optimization is already running for this session"));
    }
    let guard = InFlight(Arc::clone(&session));
    blocking(move || {
        let _guard = guard;
        let mut state = lock(&session.state);
        if state.goals().is_empty() {
            return Err(ApiError::unprocessable("session has no goals to optimize"));
        }
        let report = state.optimize_desirability(&config).map_err(ApiError::unprocessable)?;
        let snapshot = state.snapshot().map_err(ApiError::internal)?;
        session.touch();
        Ok(Json(OptimizeResponse {
            v: 1,
            report,
            state: snapshot,
        }))
    })
    .await
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/api/models", get(list_models))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/factor", post(set_factor))
        .route("/api/sessions/{id}/mode", post(set_mode))
        .route("/api/sessions/{id}/optimize", post(optimize))
        .with_state(app)
}

/// Serves until `shutdown` resolves, evicting idle sessions in the
/// background.
pub async fn serve<F>(listener: TcpListener, app: AppState, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    let idle = app.config.idle_timeout;
    let sweeper = {
        let app = app.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval((idle / 4).clamp(Duration::from_secs(1), Duration::from_secs(60)));
            loop {
                tick.tick().await;
                let n = app.evict_idle(idle);
                if n > 0 {
                    tracing::info!("evicted {n} idle sessions");
                }
            }
        })
    };
    let result = axum::serve(listener, router(app)).with_graceful_shutdown(shutdown).await;
    sweeper.abort();
    result
}
