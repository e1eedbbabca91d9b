//! HTTP routes over a shared [`ReviewSession`].

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hardcase_core::score_blocked_with_progress;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::audit::timestamp_now;
use crate::error::ServiceError;
use crate::session::{DecisionRequest, ReviewSession, ScoreColumn};

pub const DEFAULT_PAGE_LIMIT: usize = 50;
pub const DEFAULT_NEIGHBORS: usize = 10;
pub const DEFAULT_PROJECTION_K: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobResult {
    pub dataset_fingerprint: String,
    pub n: usize,
}

#[derive(Debug)]
struct Job {
    id: u64,
    started_at: String,
    done_tiles: AtomicUsize,
    total_tiles: AtomicUsize,
    outcome: Mutex<Option<(Result<JobResult, String>, String)>>,
}

impl Job {
    fn view(&self) -> Value {
        let total = self.total_tiles.load(Ordering::Relaxed);
        let done = self.done_tiles.load(Ordering::Relaxed);
        let outcome = self.outcome.lock().unwrap();
        let (state, progress) = match outcome.as_ref() {
            None if total == 0 => (JobState::Running, 0.0),
            None => (JobState::Running, done as f64 / total as f64),
            Some((Ok(_), _)) => (JobState::Done, 1.0),
            Some((Err(_), _)) => (JobState::Failed, done as f64 / total.max(1) as f64),
        };
        let mut v = json!({
            "id": self.id,
            "state": state,
            "progress": progress,
            "started_at": self.started_at,
        });
        if let Some((res, finished)) = outcome.as_ref() {
            v["finished_at"] = json!(finished);
            match res {
                Ok(r) => v["result"] = json!(r),
                Err(e) => v["error"] = json!(e),
            }
        }
        v
    }
}

#[derive(Debug, Default)]
struct JobRegistry {
    next_id: u64,
    jobs: BTreeMap<u64, Arc<Job>>,
}

/// Shared server state. Mutations take the job registry lock first, then the
/// session lock, so a decision can never slip in after a rescore snapshot.
/// `active` is written only under the registry lock but read lock-free, which
/// keeps readers from ever waiting on the registry while holding the session.
#[derive(Debug, Default)]
pub struct AppState {
    session: RwLock<Option<ReviewSession>>,
    jobs: Mutex<JobRegistry>,
    /// Running job id, 0 when idle.
    active: AtomicU64,
}

/// Fingerprint and staleness attached to every response.
#[derive(Debug, Clone)]
struct Meta {
    dataset_fingerprint: Option<String>,
    stale: bool,
}

impl Meta {
    fn wrap<T: Serialize>(&self, key: &str, payload: T) -> Json<Value> {
        let mut v = json!({
            "dataset_fingerprint": self.dataset_fingerprint,
            "stale": self.stale,
        });
        v[key] = serde_json::to_value(payload).unwrap_or(Value::Null);
        Json(v)
    }

    fn err(&self, err: ServiceError) -> ApiError {
        ApiError {
            err,
            meta: self.clone(),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    err: ServiceError,
    meta: Meta,
}

impl From<ServiceError> for ApiError {
    fn from(err: ServiceError) -> Self {
        ApiError {
            err,
            meta: Meta {
                dataset_fingerprint: None,
                stale: false,
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({
            "error": self.err.kind(),
            "message": self.err.to_string(),
            "dataset_fingerprint": self.meta.dataset_fingerprint,
            "stale": self.meta.stale,
        });
        if let ServiceError::Busy { job_id } = self.err {
            body["job_id"] = json!(job_id);
        }
        (self.err.status(), Json(body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

impl AppState {
    pub fn new(session: Option<ReviewSession>) -> Arc<Self> {
        Arc::new(Self {
            session: RwLock::new(session),
            jobs: Mutex::new(JobRegistry::default()),
            active: AtomicU64::new(0),
        })
    }

    fn read(&self) -> Result<RwLockReadGuard<'_, Option<ReviewSession>>, ServiceError> {
        let guard = self.session.read().unwrap_or_else(|e| e.into_inner());
        if guard.is_none() {
            return Err(ServiceError::NoSession);
        }
        Ok(guard)
    }

    fn write(&self) -> Result<RwLockWriteGuard<'_, Option<ReviewSession>>, ServiceError> {
        let guard = self.session.write().unwrap_or_else(|e| e.into_inner());
        if guard.is_none() {
            return Err(ServiceError::NoSession);
        }
        Ok(guard)
    }

    fn active_job(&self) -> Option<u64> {
        match self.active.load(Ordering::Acquire) {
            0 => None,
            id => Some(id),
        }
    }

    fn meta(&self, s: &ReviewSession) -> Meta {
        Meta {
            dataset_fingerprint: Some(s.table_fingerprint().to_owned()),
            stale: s.is_stale() || self.active_job().is_some(),
        }
    }

    /// Snapshots the working copy and scores it on the blocking pool. The
    /// finished table replaces the session's in one write.
    pub fn start_rescore(self: &Arc<Self>) -> Result<u64, ServiceError> {
        let mut reg = self.jobs.lock().unwrap();
        if let Some(job_id) = self.active_job() {
            return Err(ServiceError::Busy { job_id });
        }
        let (input, rows) = {
            let guard = self.read()?;
            let s = guard.as_ref().expect("checked by read");
            (s.rescore_input(), s.rescore_rows())
        };
        reg.next_id += 1;
        let job = Arc::new(Job {
            id: reg.next_id,
            started_at: timestamp_now(),
            done_tiles: AtomicUsize::new(0),
            total_tiles: AtomicUsize::new(0),
            outcome: Mutex::new(None),
        });
        reg.jobs.insert(job.id, job.clone());
        self.active.store(job.id, Ordering::Release);
        drop(reg);

        let state = self.clone();
        let id = job.id;
        tokio::task::spawn_blocking(move || {
            let progress = |done: usize, total: usize| {
                job.total_tiles.store(total, Ordering::Relaxed);
                job.done_tiles.fetch_max(done, Ordering::Relaxed);
            };
            let scored =
                score_blocked_with_progress(&input.dataset, &input.params, &input.opts, &progress);
            let outcome = match scored {
                Ok(table) => {
                    let result = JobResult {
                        dataset_fingerprint: table.dataset_fingerprint.clone(),
                        n: table.n(),
                    };
                    match state.write() {
                        Ok(mut guard) => {
                            guard
                                .as_mut()
                                .expect("checked by write")
                                .install_table(table, rows);
                            Ok(result)
                        }
                        Err(e) => Err(e.to_string()),
                    }
                }
                Err(e) => Err(e.to_string()),
            };
            match &outcome {
                Ok(r) => tracing::info!(job = job.id, n = r.n, "rescore finished"),
                Err(e) => tracing::error!(job = job.id, error = %e, "rescore failed"),
            }
            {
                let _reg = state.jobs.lock().unwrap();
                state.active.store(0, Ordering::Release);
            }
            *job.outcome.lock().unwrap() = Some((outcome, timestamp_now()));
        });
        Ok(id)
    }

    fn job(&self, id: u64) -> Option<Arc<Job>> {
        self.jobs.lock().unwrap().jobs.get(&id).cloned()
    }
}

pub fn router(state: Arc<AppState>, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/summary", get(summary))
        .route("/api/samples", get(samples))
        .route("/api/samples/{id}/neighbors", get(neighbors))
        .route("/api/samples/{id}/decision", post(decision))
        .route("/api/rescore", post(rescore))
        .route("/api/jobs/{id}", get(job))
        .route("/api/export/labels", get(export_labels))
        .route("/api/projection", get(projection))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn summary(State(app): State<Arc<AppState>>) -> ApiResult {
    let guard = app.read()?;
    let s = guard.as_ref().expect("checked by read");
    let meta = app.meta(s);
    let eff = s.rescore_input().dataset;
    let counts = eff.class_counts();
    let classes: BTreeMap<&str, usize> = eff
        .vocab()
        .names()
        .iter()
        .zip(counts)
        .filter(|(_, c)| *c > 0)
        .map(|(name, c)| (name.as_str(), c))
        .collect();
    Ok(meta.wrap(
        "summary",
        json!({
            "n_total": s.working().n(),
            "n_active": eff.n(),
            "n_scored": s.table().n(),
            "removed": s.removed_count(),
            "d": eff.embeddings().d(),
            "classes": classes,
            "params": s.params(),
            "blocked": s.opts(),
            "decisions": s.audit().len(),
            "working_fingerprint": s.working_fingerprint(),
            "active_job": app.active_job(),
        }),
    ))
}

#[derive(Debug, Deserialize)]
struct SamplesQuery {
    #[serde(default)]
    offset: usize,
    limit: Option<usize>,
    #[serde(default)]
    mode: ScoreColumn,
}

async fn samples(State(app): State<Arc<AppState>>, Query(q): Query<SamplesQuery>) -> ApiResult {
    let guard = app.read()?;
    let s = guard.as_ref().expect("checked by read");
    let page = s.samples(q.offset, q.limit.unwrap_or(DEFAULT_PAGE_LIMIT), q.mode);
    let meta = app.meta(s);
    let mut body = meta.wrap("samples", &page.samples);
    body["total"] = json!(page.total);
    body["offset"] = json!(page.offset);
    body["limit"] = json!(page.limit);
    body["mode"] = json!(page.mode);
    Ok(body)
}

#[derive(Debug, Deserialize)]
struct NeighborsQuery {
    m: Option<usize>,
}

async fn neighbors(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<NeighborsQuery>,
) -> ApiResult {
    let guard = app.read()?;
    let s = guard.as_ref().expect("checked by read");
    let meta = app.meta(s);
    let rows = s
        .neighbors(&id, q.m.unwrap_or(DEFAULT_NEIGHBORS))
        .map_err(|e| meta.err(e))?;
    let mut body = meta.wrap("neighbors", rows);
    body["sample_id"] = json!(id);
    Ok(body)
}

async fn decision(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<DecisionRequest>,
) -> ApiResult {
    let _reg = app.jobs.lock().unwrap();
    let mut guard = app.write()?;
    let s = guard.as_mut().expect("checked by write");
    if let Some(job_id) = app.active_job() {
        let meta = Meta {
            dataset_fingerprint: Some(s.table_fingerprint().to_owned()),
            stale: true,
        };
        return Err(meta.err(ServiceError::Busy { job_id }));
    }
    let result = s.decide(&id, req);
    let meta = Meta {
        dataset_fingerprint: Some(s.table_fingerprint().to_owned()),
        stale: s.is_stale(),
    };
    let accepted = result.map_err(|e| meta.err(e))?;
    tracing::info!(sample = %id, action = accepted.action.as_str(), "decision recorded");
    let mut body = meta.wrap("decision", accepted);
    body["working_fingerprint"] = json!(s.working_fingerprint());
    Ok(body)
}

async fn rescore(State(app): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let started = app.start_rescore();
    let guard = app.read()?;
    let s = guard.as_ref().expect("checked by read");
    let meta = app.meta(s);
    let id = started.map_err(|e| meta.err(e))?;
    let mut body = meta.wrap("job", app.job(id).map(|j| j.view()));
    body["job_id"] = json!(id);
    Ok((StatusCode::ACCEPTED, body).into_response())
}

async fn job(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<u64>) -> ApiResult {
    let guard = app.read()?;
    let s = guard.as_ref().expect("checked by read");
    let meta = app.meta(s);
    let job = app
        .job(id)
        .ok_or_else(|| meta.err(ServiceError::UnknownJob(id)))?;
    Ok(meta.wrap("job", job.view()))
}

/// JSONL body; the fingerprint and staleness travel in headers.
async fn export_labels(State(app): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let guard = app.read()?;
    let s = guard.as_ref().expect("checked by read");
    let meta = app.meta(s);
    let body = s.export_labels();
    let header_value = |v: &str| {
        HeaderValue::from_str(v).map_err(|e| meta.err(ServiceError::Internal(e.to_string())))
    };
    Ok((
        [
            (
                header::CONTENT_TYPE,
                HeaderValue::from_static("application/x-ndjson"),
            ),
            (
                header::HeaderName::from_static("x-dataset-fingerprint"),
                header_value(s.table_fingerprint())?,
            ),
            (
                header::HeaderName::from_static("x-working-fingerprint"),
                header_value(s.working_fingerprint())?,
            ),
            (
                header::HeaderName::from_static("x-stale"),
                HeaderValue::from_static(if meta.stale { "true" } else { "false" }),
            ),
        ],
        body,
    )
        .into_response())
}

#[derive(Debug, Deserialize)]
struct ProjectionQuery {
    k: Option<f64>,
}

async fn projection(
    State(app): State<Arc<AppState>>,
    Query(q): Query<ProjectionQuery>,
) -> ApiResult {
    let guard = app.read()?;
    let s = guard.as_ref().expect("checked by read");
    let meta = app.meta(s);
    let k = q.k.unwrap_or(DEFAULT_PROJECTION_K);
    let p = s.projection(k).map_err(|e| meta.err(e))?;
    let mut body = meta.wrap("points", &p.points);
    body["rank"] = json!(p.rank);
    body["k_percent"] = json!(k);
    Ok(body)
}
