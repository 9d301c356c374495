//! Routes and handlers.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::extract::{DefaultBodyLimit, MatchedPath, Multipart, Path, Query, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use mirror_core::config::{DatasetConfig, MirrorConfig};
use mirror_core::http::HttpClient;
use mirror_core::ingestion::{detect_platform, ExportFile, IngestError};
use mirror_core::layout::Layout2D;
use mirror_core::model::{EventId, TopicId};
use mirror_core::pipeline::{self, ItemInfo, LayoutRequest, PipelineError, ReadyDataset, Services};
use mirror_core::store::{Stage, Store};
use mirror_core::temporal::{Frame, Timeline, TopicCount, TOP_TOPICS};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::jobs::{Job, JobKind, Jobs};
use crate::viewport::{layout_labels, render, RawMapQuery, ViewLabel};

/// Builds the services a job uses from its dataset's config.
pub type ServicesFactory = Arc<dyn Fn(&DatasetConfig) -> Result<Services, PipelineError> + Send + Sync>;

/// Most frames a timeline request may ask for.
pub const MAX_FRAMES: usize = 1000;
/// Ready datasets kept parsed in memory.
const READY_CACHE: usize = 8;

struct Inner {
    store: Store,
    config: MirrorConfig,
    services: ServicesFactory,
    jobs: Jobs,
    ready: Mutex<HashMap<String, Arc<ReadyDataset>>>,
    layouts: Mutex<HashMap<(String, String), Arc<Layout2D>>>,
    webhook: Option<(String, Arc<dyn HttpClient>)>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// `http` delivers job notifications when the config names a webhook.
    pub fn new(store: Store, config: MirrorConfig, services: ServicesFactory, http: Option<Arc<dyn HttpClient>>) -> Self {
        let jobs = Jobs::new(config.server.workers);
        let webhook = config.server.webhook_url.clone().zip(http);
        AppState {
            inner: Arc::new(Inner {
                store,
                config,
                services,
                jobs,
                ready: Mutex::new(HashMap::new()),
                layouts: Mutex::new(HashMap::new()),
                webhook,
            }),
        }
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }

    pub fn jobs(&self) -> &Jobs {
        &self.inner.jobs
    }

    fn ready(&self, id: &str) -> Result<Arc<ReadyDataset>, ApiError> {
        if let Some(r) = self.inner.ready.lock().unwrap().get(id) {
            return Ok(r.clone());
        }
        let loaded = Arc::new(pipeline::load_ready(&self.inner.store, id)?);
        let mut cache = self.inner.ready.lock().unwrap();
        if cache.len() >= READY_CACHE {
            if let Some(k) = cache.keys().next().cloned() {
                cache.remove(&k);
            }
        }
        cache.insert(id.to_string(), loaded.clone());
        Ok(loaded)
    }

    async fn ready_async(&self, id: &str) -> Result<Arc<ReadyDataset>, ApiError> {
        let (state, id) = (self.clone(), id.to_string());
        blocking(move || state.ready(&id)).await
    }

    fn layout(&self, id: &str, layout_id: &str) -> Result<Arc<Layout2D>, ApiError> {
        let key = (id.to_string(), layout_id.to_string());
        if let Some(l) = self.inner.layouts.lock().unwrap().get(&key) {
            return Ok(l.clone());
        }
        let l = Arc::new(pipeline::get_layout(&self.inner.store, id, layout_id)?);
        self.inner.layouts.lock().unwrap().insert(key, l.clone());
        Ok(l)
    }

    fn evict(&self, id: &str) {
        self.inner.ready.lock().unwrap().remove(id);
        self.inner.layouts.lock().unwrap().retain(|(d, _), _| d != id);
    }

    /// Queues a job that runs the remaining pipeline stages of a dataset.
    pub fn enqueue_pipeline(&self, dataset_id: &str) -> Result<Job, ApiError> {
        let stage = self.inner.store.manifest(dataset_id)?.stage;
        let job = self.inner.jobs.create(JobKind::Pipeline, dataset_id, stage);
        let (state, id, job_id) = (self.clone(), dataset_id.to_string(), job.job_id.clone());
        self.spawn(job.job_id.clone(), move || {
            let inner = &state.inner;
            let cfg = inner.store.manifest(&id)?.config;
            let svc = (inner.services)(&cfg)?;
            pipeline::run(&inner.store, &id, &svc, &|stage| inner.jobs.advance(&job_id, stage))?;
            Ok(None)
        });
        Ok(job)
    }

    fn enqueue_layout(&self, dataset_id: &str, req: LayoutRequest) -> Job {
        let job = self.inner.jobs.create(JobKind::Layout, dataset_id, Stage::Ready);
        let (state, id) = (self.clone(), dataset_id.to_string());
        self.spawn(job.job_id.clone(), move || {
            let inner = &state.inner;
            let cfg = inner.store.manifest(&id)?.config;
            let svc = (inner.services)(&cfg)?;
            let layout = pipeline::create_layout(&inner.store, &id, &req, &svc)?;
            let layout_id = layout.layout_id.clone();
            inner.layouts.lock().unwrap().insert((id.clone(), layout_id.clone()), Arc::new(layout));
            Ok(Some(layout_id))
        });
        job
    }

    fn spawn<F>(&self, job_id: String, work: F)
    where
        F: FnOnce() -> Result<Option<String>, PipelineError> + Send + 'static,
    {
        let state = self.clone();
        let slots = self.inner.jobs.slots();
        tokio::spawn(async move {
            let Ok(_permit) = slots.acquire_owned().await else { return };
            state.inner.jobs.start(&job_id);
            let outcome = tokio::task::spawn_blocking(work).await;
            let job = match outcome {
                Ok(Ok(layout_id)) => state.inner.jobs.finish(&job_id, layout_id),
                Ok(Err(e)) => {
                    tracing::warn!(job = %job_id, error = %e, "job failed");
                    state.inner.jobs.fail(&job_id, e.to_string())
                }
                Err(_) => state.inner.jobs.fail(&job_id, "job aborted".into()),
            };
            if let (Some(job), Some((url, http))) = (job, state.inner.webhook.clone()) {
                let body = serde_json::to_value(&job).expect("job serializes");
                let _ = tokio::task::spawn_blocking(move || {
                    if let Err(e) = http.post_json(&url, &[], &body) {
                        tracing::warn!(error = %e, "webhook delivery failed");
                    }
                })
                .await;
            }
        });
    }

    /// Queues pipeline jobs for datasets left unfinished by a previous run.
    pub fn resume_unfinished(&self) -> Result<Vec<Job>, ApiError> {
        let mut jobs = Vec::new();
        for id in self.inner.store.list()? {
            let m = self.inner.store.manifest(&id)?;
            if m.stage != Stage::Ready && !self.inner.jobs.active_for(&id) {
                jobs.push(self.enqueue_pipeline(&id)?);
            }
        }
        Ok(jobs)
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(e.to_string()))?
}

pub fn router(state: AppState) -> Router {
    let upload_limit = usize::try_from(state.inner.config.dataset.ingest.max_upload_bytes).unwrap_or(usize::MAX);
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route(
            "/datasets",
            post(upload).get(list_datasets).layer(DefaultBodyLimit::max(upload_limit.saturating_add(1 << 20))),
        )
        .route("/datasets/{id}", get(dataset_status).delete(delete_dataset))
        .route("/datasets/{id}/map", get(map))
        .route("/datasets/{id}/timeline", get(timeline))
        .route("/datasets/{id}/topics", get(topics))
        .route("/datasets/{id}/topics/{topic_id}/items", get(topic_items))
        .route("/datasets/{id}/layouts", post(create_layout))
        .route("/datasets/{id}/layouts/{layout_id}", get(get_layout))
        .route("/jobs/{id}", get(job_status))
        .layer(middleware::from_fn(log_request))
        .with_state(state)
}

/// Logs method, route template, status and latency; never paths with
/// ids filled in, query strings or bodies.
async fn log_request(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let route = req.extensions().get::<MatchedPath>().map_or("<unmatched>", |m| m.as_str()).to_string();
    let started = Instant::now();
    let res = next.run(req).await;
    tracing::info!(
        target: "mirror::http",
        %method,
        route,
        status = res.status().as_u16(),
        ms = started.elapsed().as_millis() as u64,
    );
    res
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Accepted {
    pub dataset_id: String,
    pub job_id: String,
}

async fn upload(State(state): State<AppState>, mut multipart: Multipart) -> Result<impl IntoResponse, ApiError> {
    let limit = state.inner.config.dataset.ingest.max_upload_bytes;
    let mut files = Vec::new();
    let mut total: u64 = 0;
    loop {
        let field = match multipart.next_field().await {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => {
                return Err(ApiError::TooLarge { size: limit.saturating_add(1), limit })
            }
            Err(e) => return Err(ApiError::BadRequest(e.body_text())),
        };
        let name = field
            .file_name()
            .or(field.name())
            .map(str::to_string)
            .unwrap_or_else(|| format!("upload-{}", files.len()));
        let bytes = match field.bytes().await {
            Ok(b) => b,
            Err(e) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => {
                return Err(ApiError::TooLarge { size: limit.saturating_add(1), limit })
            }
            Err(e) => return Err(ApiError::BadRequest(e.body_text())),
        };
        total += bytes.len() as u64;
        if total > limit {
            return Err(ApiError::TooLarge { size: total, limit });
        }
        if !bytes.is_empty() {
            files.push(ExportFile::new(name, bytes.to_vec()));
        }
    }
    if files.is_empty() {
        return Err(IngestError::EmptyBundle.into());
    }
    let st = state.clone();
    let dataset_id = blocking(move || {
        if !files.iter().any(|f| detect_platform(std::slice::from_ref(f)).is_ok()) {
            return Err(IngestError::UnknownExport.into());
        }
        Ok(pipeline::create_from_uploads(&st.inner.store, &st.inner.config.dataset, &files)?)
    })
    .await?;
    let job = state.enqueue_pipeline(&dataset_id)?;
    Ok((StatusCode::ACCEPTED, Json(Accepted { dataset_id, job_id: job.job_id })))
}

#[derive(Debug, Serialize)]
pub struct DatasetStatus {
    pub dataset_id: String,
    pub created_at: DateTime<Utc>,
    pub stage: Stage,
    pub raw_purged: bool,
}

fn status_of(store: &Store, id: &str) -> Result<DatasetStatus, ApiError> {
    let m = store.manifest(id)?;
    Ok(DatasetStatus { dataset_id: m.dataset_id, created_at: m.created_at, stage: m.stage, raw_purged: m.raw_purged_at.is_some() })
}

async fn list_datasets(State(state): State<AppState>) -> Result<Json<Vec<DatasetStatus>>, ApiError> {
    blocking(move || {
        let store = &state.inner.store;
        store.list()?.iter().map(|id| status_of(store, id)).collect::<Result<Vec<_>, _>>().map(Json)
    })
    .await
}

async fn dataset_status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<DatasetStatus>, ApiError> {
    blocking(move || status_of(&state.inner.store, &id).map(Json)).await
}

async fn delete_dataset(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    if state.inner.jobs.active_for(&id) {
        return Err(ApiError::Conflict("a job is still running for this dataset".into()));
    }
    blocking(move || {
        let store = &state.inner.store;
        store.manifest(&id)?;
        let lock = store.lock(&id)?;
        state.evict(&id);
        store.delete(&id)?;
        drop(lock);
        Ok(StatusCode::NO_CONTENT)
    })
    .await
}

async fn job_status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Job>, ApiError> {
    state.inner.jobs.get(&id).map(Json).ok_or_else(|| ApiError::NotFound(format!("job {id}")))
}

async fn map(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(raw): Query<RawMapQuery>,
) -> Result<Response, ApiError> {
    let levels = state.inner.config.server.map_levels;
    let q = raw.resolve(levels, state.inner.config.server.default_max_points)?;
    let ready = state.ready_async(&id).await?;
    blocking(move || {
        let (layout, own) = match raw.layout.as_deref() {
            Some(l) if l != ready.map.layout_id => (state.layout(&id, l)?, false),
            _ => (Arc::new(ready.map.clone()), true),
        };
        let labels: Vec<ViewLabel> = layout_labels(&ready.topics, &layout, own);
        let view = render(&layout, &labels, &ready.items, &q, levels);
        Ok(json_bytes(&view))
    })
    .await
}

/// Serializes once so identical queries give identical bytes.
fn json_bytes<T: Serialize>(value: &T) -> Response {
    let body = serde_json::to_vec(value).expect("response serializes");
    ([(axum::http::header::CONTENT_TYPE, "application/json")], body).into_response()
}

#[derive(Debug, Default, Deserialize)]
pub struct TimelineQuery {
    pub from: Option<String>,
    pub to: Option<String>,
    pub frames: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct Window {
    pub from: DateTime<Utc>,
    pub to: DateTime<Utc>,
    pub count: usize,
    pub top_topics: Vec<TopicCount>,
}

#[derive(Debug, Serialize)]
pub struct TimelineResponse {
    pub timeline: Timeline,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<Window>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<Frame>>,
}

fn parse_time(s: &str) -> Result<DateTime<Utc>, ApiError> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|_| ApiError::BadRequest(format!("`{s}` is not an RFC 3339 timestamp")))
}

async fn timeline(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<TimelineQuery>,
) -> Result<Response, ApiError> {
    let from = q.from.as_deref().map(parse_time).transpose()?;
    let to = q.to.as_deref().map(parse_time).transpose()?;
    if let (Some(f), Some(t)) = (from, to) {
        if f > t {
            return Err(ApiError::BadRequest("`from` is after `to`".into()));
        }
    }
    if q.frames.is_some_and(|n| n == 0 || n > MAX_FRAMES) {
        return Err(ApiError::BadRequest(format!("frames must be in 1..={MAX_FRAMES}")));
    }
    let ready = state.ready_async(&id).await?;
    blocking(move || {
        let index = &ready.timeline;
        let window = (from.is_some() || to.is_some()).then(|| {
            let lo = from.or(index.min()).unwrap_or(DateTime::<Utc>::MIN_UTC);
            let hi = to.or(index.max()).unwrap_or(DateTime::<Utc>::MAX_UTC);
            Window { from: lo, to: hi, count: index.window_len(lo, hi), top_topics: index.window_topics(lo, hi, TOP_TOPICS) }
        });
        let frames = q.frames.map(|n| index.timelapse_frames(n));
        Ok(json_bytes(&TimelineResponse { timeline: index.timeline(), window, frames }))
    })
    .await
}

#[derive(Debug, Serialize)]
pub struct TopicsResponse {
    pub topics: Vec<ViewLabel>,
}

async fn topics(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let ready = state.ready_async(&id).await?;
    Ok(json_bytes(&TopicsResponse { topics: layout_labels(&ready.topics, &ready.map, true) }))
}

#[derive(Debug, Serialize)]
pub struct TopicItems {
    pub topic_id: TopicId,
    pub label: String,
    pub count: usize,
    pub items: Vec<ItemInfo>,
}

async fn topic_items(
    State(state): State<AppState>,
    Path((id, topic_id)): Path<(String, u32)>,
) -> Result<Response, ApiError> {
    let ready = state.ready_async(&id).await?;
    let node = ready.topics.find(TopicId(topic_id)).ok_or_else(|| ApiError::NotFound(format!("topic {topic_id}")))?;
    let mut items: Vec<ItemInfo> = node.members.iter().filter_map(|m: &EventId| ready.items.get(m).cloned()).collect();
    items.sort_by(|a, b| a.watched_at.cmp(&b.watched_at).then_with(|| a.item_id.cmp(&b.item_id)));
    Ok(json_bytes(&TopicItems { topic_id: node.label.topic_id, label: node.label.label.clone(), count: items.len(), items }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LayoutAccepted {
    pub dataset_id: String,
    pub job_id: String,
}

async fn create_layout(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<LayoutRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::Unprocessable(e.body_text()))?;
    req.validate().map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    let st = state.clone();
    let stage = blocking(move || Ok(st.inner.store.manifest(&id).map(|m| (m.stage, id))?)).await?;
    let (stage, id) = stage;
    if stage != Stage::Ready {
        return Err(ApiError::NotReady(stage));
    }
    let job = state.enqueue_layout(&id, req);
    Ok((StatusCode::ACCEPTED, Json(LayoutAccepted { dataset_id: id, job_id: job.job_id })))
}

async fn get_layout(
    State(state): State<AppState>,
    Path((id, layout_id)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let ready = state.ready_async(&id).await?;
    blocking(move || {
        if layout_id == ready.map.layout_id {
            return Ok(json_bytes(&ready.map));
        }
        Ok(json_bytes(&*state.layout(&id, &layout_id)?))
    })
    .await
}
