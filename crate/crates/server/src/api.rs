//! HTTP JSON API over the session store.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use scsim_core::ingest::parse_dataset;
use scsim_core::synthetic::{generate, SyntheticConfig};
use scsim_core::CompanyId;
use scsim_session::session::KnowledgeScope;
use scsim_session::store::{SharedSession, Store};
use scsim_session::views::{fetch_view, ViewKind};
use scsim_session::{Adjustment, NodeId, Session, SessionConfig, SessionError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const ENV_TOKEN: &str = "SCSIM_TOKEN";

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "bad_request",
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            code: "not_found",
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: message.into(),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        use SessionError::*;
        let (status, code) = match &e {
            UnknownNode(_) => (StatusCode::NOT_FOUND, "unknown_node"),
            UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            UnknownCompany(_) => (StatusCode::NOT_FOUND, "unknown_company"),
            UnknownView(_) => (StatusCode::NOT_FOUND, "unknown_view"),
            InvalidConfig(_) => (StatusCode::BAD_REQUEST, "invalid_config"),
            InvalidReference(_) => (StatusCode::BAD_REQUEST, "invalid_reference"),
            InvalidAdjustment(_) => (StatusCode::BAD_REQUEST, "invalid_adjustment"),
            NodeNotSimulated(_) => (StatusCode::BAD_REQUEST, "node_not_simulated"),
            NothingStaged(_) => (StatusCode::BAD_REQUEST, "nothing_staged"),
            Import { .. } => (StatusCode::BAD_REQUEST, "import"),
            Model(_) => (StatusCode::BAD_REQUEST, "invalid_dataset"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self {
            status,
            code,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, Serialize)]
pub struct JobStatus {
    pub id: String,
    pub session: String,
    pub state: JobState,
    pub done: usize,
    pub total: usize,
    pub nodes: Vec<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Inner {
    store: RwLock<Store>,
    jobs: Mutex<BTreeMap<String, JobStatus>>,
    next_job: AtomicUsize,
    token: Option<String>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(store: Store, token: Option<String>) -> Self {
        Self {
            inner: Arc::new(Inner {
                store: RwLock::new(store),
                jobs: Mutex::new(BTreeMap::new()),
                next_job: AtomicUsize::new(0),
                token,
            }),
        }
    }

    fn session(&self, id: &str) -> ApiResult<SharedSession> {
        Ok(self.inner.store.read().expect("store lock").session(id)?)
    }

    fn persist(&self, id: &str, session: &Session) -> ApiResult<()> {
        Ok(self.inner.store.read().expect("store lock").persist(id, session)?)
    }

    fn update_job(&self, id: &str, f: impl FnOnce(&mut JobStatus)) {
        if let Some(job) = self.inner.jobs.lock().expect("jobs lock").get_mut(id) {
            f(job);
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/datasets", post(create_dataset))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/run", post(start_run))
        .route("/sessions/{id}/tree", get(tree))
        .route("/sessions/{id}/active", put(set_active))
        .route("/sessions/{id}/config", put(configure))
        .route("/sessions/{id}/knowledge", put(update_knowledge))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/nodes/{node}/view/{kind}", get(view))
        .route("/sessions/{id}/nodes/{node}/adjustments", post(stage).get(staged))
        .route("/sessions/{id}/nodes/{node}/adjustments:apply", post(apply))
        .route("/sessions/{id}/nodes/{node}/adjustments:reset", post(reset))
        .route("/jobs/{job}", get(job_status))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.inner.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|v| v == token);
        if !ok {
            return ApiError {
                status: StatusCode::UNAUTHORIZED,
                code: "unauthorized",
                message: "missing or wrong bearer token".into(),
            }
            .into_response();
        }
    }
    next.run(req).await
}

/// Runs blocking work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

#[derive(Deserialize)]
struct DatasetBody {
    companies: Option<String>,
    edges: Option<String>,
    #[serde(default)]
    knowledge: String,
    /// Generate a synthetic dataset; missing fields take their defaults.
    synthetic: Option<Value>,
}

async fn create_dataset(State(state): State<AppState>, Json(body): Json<DatasetBody>) -> ApiResult<impl IntoResponse> {
    let dataset = match (body.synthetic, body.companies, body.edges) {
        (Some(overrides), None, None) => {
            let mut base = serde_json::to_value(SyntheticConfig::default()).map_err(|e| ApiError::internal(e.to_string()))?;
            if let (Value::Object(b), Value::Object(o)) = (&mut base, overrides) {
                b.extend(o);
            }
            let config: SyntheticConfig = serde_json::from_value(base).map_err(|e| ApiError::bad_request(e.to_string()))?;
            generate(config).map_err(SessionError::from)?
        }
        (None, Some(companies), Some(edges)) => parse_dataset(&companies, &edges, &body.knowledge).map_err(SessionError::from)?,
        _ => return Err(ApiError::bad_request("send either `synthetic` or both `companies` and `edges`")),
    };
    let summary = json!({
        "companies": dataset.companies.len(),
        "timestamps": dataset.timestamps,
        "features": dataset.feature_names,
    });
    let id = state.inner.store.write().expect("store lock").add_dataset(dataset);
    Ok((StatusCode::CREATED, Json(json!({ "id": id, "dataset": summary }))))
}

#[derive(Deserialize)]
struct SessionBody {
    dataset: String,
    #[serde(default)]
    config: SessionConfig,
}

async fn create_session(State(state): State<AppState>, Json(body): Json<SessionBody>) -> ApiResult<impl IntoResponse> {
    let dataset = state
        .inner
        .store
        .read()
        .expect("store lock")
        .dataset(&body.dataset)
        .ok_or_else(|| ApiError::not_found(format!("unknown dataset `{}`", body.dataset)))?;
    let st = state.clone();
    blocking(move || {
        let session = Session::new((*dataset).clone(), body.config)?;
        let tree = fetch_view(&session, session.tree().active(), &ViewKind::Path)?;
        let id = st.inner.store.write().expect("store lock").add_session(session)?;
        Ok((StatusCode::CREATED, Json(json!({ "id": id, "tree": tree["view"] }))))
    })
    .await
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RunBody {
    from_node: Option<NodeId>,
    turns: Option<usize>,
}

async fn start_run(State(state): State<AppState>, Path(id): Path<String>, Json(body): Json<RunBody>) -> ApiResult<impl IntoResponse> {
    let shared = state.session(&id)?;
    let job = {
        let mut s = shared.write().expect("session lock");
        let from = body.from_node.unwrap_or(s.tree().active());
        let turns = body.turns.unwrap_or(s.config().simulation_turns);
        s.prepare_run(from, turns)?
    };
    let job_id = format!("job-{}", state.inner.next_job.fetch_add(1, Ordering::SeqCst));
    let status = JobStatus {
        id: job_id.clone(),
        session: id.clone(),
        state: JobState::Running,
        done: 0,
        total: job.turns(),
        nodes: Vec::new(),
        error: None,
    };
    state.inner.jobs.lock().expect("jobs lock").insert(job_id.clone(), status.clone());
    let st = state.clone();
    let jid = job_id.clone();
    tokio::task::spawn_blocking(move || {
        let progress = |done| st.update_job(&jid, |j| j.done = done);
        let outcome = job.execute(progress).and_then(|result| {
            let mut s = shared.write().expect("session lock");
            let nodes = s.commit_run(result)?;
            st.persist(&id, &s).map_err(|e| SessionError::InvalidConfig(e.message))?;
            Ok(nodes)
        });
        st.update_job(&jid, |j| match outcome {
            Ok(nodes) => {
                j.state = JobState::Done;
                j.nodes = nodes;
            }
            Err(e) => {
                log::error!("run {jid} failed: {e}");
                j.state = JobState::Failed;
                j.error = Some(e.to_string());
            }
        });
    });
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn job_status(State(state): State<AppState>, Path(job): Path<String>) -> ApiResult<Json<JobStatus>> {
    state
        .inner
        .jobs
        .lock()
        .expect("jobs lock")
        .get(&job)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown job `{job}`")))
}

async fn tree(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let shared = state.session(&id)?;
    let s = shared.read().expect("session lock");
    Ok(Json(fetch_view(&s, s.tree().active(), &ViewKind::Path)?["view"].clone()))
}

#[derive(Deserialize)]
struct ActiveBody {
    node: NodeId,
}

async fn set_active(State(state): State<AppState>, Path(id): Path<String>, Json(body): Json<ActiveBody>) -> ApiResult<Json<Value>> {
    let shared = state.session(&id)?;
    let mut s = shared.write().expect("session lock");
    s.set_active(body.node)?;
    state.persist(&id, &s)?;
    Ok(Json(json!({ "active": body.node })))
}

async fn configure(State(state): State<AppState>, Path(id): Path<String>, Json(config): Json<SessionConfig>) -> ApiResult<Json<Value>> {
    let shared = state.session(&id)?;
    let st = state.clone();
    blocking(move || {
        let mut s = shared.write().expect("session lock");
        s.configure(config)?;
        st.persist(&id, &s)?;
        Ok(Json(json!({ "config": s.config() })))
    })
    .await
}

#[derive(Deserialize)]
struct KnowledgeBody {
    /// Omitted for global knowledge.
    company: Option<CompanyId>,
    text: String,
}

async fn update_knowledge(State(state): State<AppState>, Path(id): Path<String>, Json(body): Json<KnowledgeBody>) -> ApiResult<Json<Value>> {
    let shared = state.session(&id)?;
    let mut s = shared.write().expect("session lock");
    let scope = match body.company {
        Some(company) => KnowledgeScope::Company { company },
        None => KnowledgeScope::Global,
    };
    s.update_knowledge(scope, body.text)?;
    state.persist(&id, &s)?;
    Ok(Json(json!({ "knowledge": s.knowledge() })))
}

async fn export(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let shared = state.session(&id)?;
    let text = shared.read().expect("session lock").export()?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/x-ndjson".to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{id}.jsonl\"")),
        ],
        text,
    ))
}

#[derive(Deserialize, Default)]
struct ViewParams {
    /// Comma-separated focal company ids.
    focal: Option<String>,
    start: Option<usize>,
    end: Option<usize>,
    company: Option<CompanyId>,
}

async fn view(
    State(state): State<AppState>,
    Path((id, node, kind)): Path<(String, NodeId, String)>,
    Query(params): Query<ViewParams>,
) -> ApiResult<Json<Value>> {
    let kind = match kind.parse::<ViewKind>()? {
        ViewKind::Focus { .. } => ViewKind::Focus {
            focal: params
                .focal
                .as_deref()
                .unwrap_or("")
                .split(',')
                .filter(|s| !s.is_empty())
                .map(CompanyId::from)
                .collect(),
            range: match (params.start, params.end) {
                (None, None) => None,
                (s, e) => Some(s.unwrap_or(0)..e.unwrap_or(usize::MAX)),
            },
        },
        ViewKind::Adjustment { .. } => ViewKind::Adjustment {
            company: params.company.ok_or_else(|| ApiError::bad_request("adjustment view needs `company`"))?,
        },
        other => other,
    };
    let shared = state.session(&id)?;
    blocking(move || {
        let s = shared.read().expect("session lock");
        let kind = match kind {
            ViewKind::Focus { focal, range: Some(r) } => {
                let len = s.tree().node(node)?.t + 1;
                ViewKind::Focus {
                    focal,
                    range: Some(r.start..r.end.min(len)),
                }
            }
            k => k,
        };
        Ok(Json(fetch_view(&s, node, &kind)?))
    })
    .await
}

async fn stage(
    State(state): State<AppState>,
    Path((id, node)): Path<(String, NodeId)>,
    Json(adj): Json<Adjustment>,
) -> ApiResult<Json<Value>> {
    let shared = state.session(&id)?;
    let mut s = shared.write().expect("session lock");
    let staged = s.stage_adjustment(node, adj)?.to_vec();
    state.persist(&id, &s)?;
    Ok(Json(json!({ "node": node, "staged": staged })))
}

async fn staged(State(state): State<AppState>, Path((id, node)): Path<(String, NodeId)>) -> ApiResult<Json<Value>> {
    let shared = state.session(&id)?;
    let s = shared.read().expect("session lock");
    s.tree().node(node)?;
    Ok(Json(json!({ "node": node, "staged": s.staged(node) })))
}

async fn apply(State(state): State<AppState>, Path((id, node)): Path<(String, NodeId)>) -> ApiResult<Json<Value>> {
    let shared = state.session(&id)?;
    let st = state.clone();
    blocking(move || {
        let mut s = shared.write().expect("session lock");
        let branch = s.apply_adjustments(node)?;
        st.persist(&id, &s)?;
        Ok(Json(json!({ "branch": branch, "tree": fetch_view(&s, branch, &ViewKind::Path)?["view"] })))
    })
    .await
}

async fn reset(State(state): State<AppState>, Path((id, node)): Path<(String, NodeId)>) -> ApiResult<Json<Value>> {
    let shared = state.session(&id)?;
    let mut s = shared.write().expect("session lock");
    s.reset_adjustments(node)?;
    state.persist(&id, &s)?;
    Ok(Json(json!({ "node": node, "staged": [] })))
}
