//! HTTP API behind the expert review UI.
//!
//! Readers share the in-memory index; corrections are serialized through
//! one writer that commits each change to the dataset directory before it
//! becomes visible.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use vesselid::dataset::{format_annotation_file, merge_review, DatasetIndex, DatasetStore, Decision, ReviewDecision};
use vesselid::slide_store::SlideContainer;
use vesselid::{Annotation, Error, GenusCatalog, Review, SlideMeta, Source};

type Clock = Box<dyn Fn() -> u64 + Send + Sync>;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Shared>,
}

struct Shared {
    store: DatasetStore,
    catalog: GenusCatalog,
    index: RwLock<DatasetIndex>,
    containers: BTreeMap<String, SlideContainer>,
    clock: Clock,
}

impl AppState {
    /// Loads the dataset at `root` and opens the containers of indexed
    /// slides that have one under `slides/`.
    pub fn open(root: &Path, catalog: GenusCatalog) -> vesselid::Result<Self> {
        let store = DatasetStore::open(root)?;
        let index = store.load()?;
        let mut containers = BTreeMap::new();
        for s in &index.slides {
            let dir = store.slides_dir().join(&s.slide_id);
            if dir.join("meta.json").exists() {
                containers.insert(s.slide_id.clone(), SlideContainer::open(&dir)?);
            }
        }
        Ok(Self {
            inner: Arc::new(Shared {
                store,
                catalog,
                index: RwLock::new(index),
                containers,
                clock: Box::new(unix_now),
            }),
        })
    }

    /// Replaces the audit timestamp source. Only possible before the state
    /// is shared.
    pub fn with_clock(mut self, clock: impl Fn() -> u64 + Send + Sync + 'static) -> Self {
        Arc::get_mut(&mut self.inner)
            .expect("clock must be set before the state is cloned")
            .clock = Box::new(clock);
        self
    }

    /// Snapshot of the current index.
    pub fn index(&self) -> DatasetIndex {
        self.inner.index.read().unwrap().clone()
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/slides", get(list_slides))
        .route("/slides/{id}", get(get_slide))
        .route("/slides/{id}/tiles/{plane}/{level}/{xy}", get(get_tile))
        .route("/slides/{id}/annotations", get(list_annotations))
        .route("/slides/{id}/corrections", post(submit_correction))
        .route("/export", post(export))
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    /// The stored record, sent along with version conflicts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current: Option<Annotation>,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status: status.as_u16(), code: code.to_string(), message: message.into(), current: None }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownSlide(_) | Error::UnknownAnnotation(_) => StatusCode::NOT_FOUND,
            Error::VersionConflict { .. } => StatusCode::CONFLICT,
            Error::OutOfRange(_) | Error::Invalid(_) | Error::UnknownGenus(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

fn bad_body(r: JsonRejection) -> ApiError {
    ApiError::new(r.status(), "bad_request", r.body_text())
}

type ApiResult<T> = Result<T, ApiError>;

async fn list_slides(State(st): State<AppState>) -> Json<Vec<SlideMeta>> {
    Json(st.inner.index.read().unwrap().slides.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideInfo {
    #[serde(flatten)]
    pub slide: SlideMeta,
    /// Absent when the slide has no stored container.
    pub tile_size: Option<u32>,
    /// Width and height of every stored level.
    pub levels: Vec<[u32; 2]>,
    pub annotation_count: usize,
}

async fn get_slide(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SlideInfo>> {
    let index = st.inner.index.read().unwrap();
    let slide = index.slide(&id)?.clone();
    let container = st.inner.containers.get(&id);
    Ok(Json(SlideInfo {
        tile_size: container.map(|c| c.tile_size()),
        levels: container
            .map(|c| (0..c.level_count()).map(|l| c.level_dims(l).into()).collect())
            .unwrap_or_default(),
        annotation_count: index.annotations_for(&id).len(),
        slide,
    }))
}

async fn get_tile(
    State(st): State<AppState>,
    UrlPath((id, plane, level, xy)): UrlPath<(String, String, String, String)>,
) -> ApiResult<Response> {
    st.inner.index.read().unwrap().slide(&id)?;
    let missing = || ApiError::new(StatusCode::NOT_FOUND, "tile_not_found", format!("no tile {plane}/{level}/{xy} in `{id}`"));
    let container = st.inner.containers.get(&id).ok_or_else(missing)?;
    let coords = (|| {
        let (x, y) = xy.split_once('_')?;
        Some((plane.parse().ok()?, level.parse().ok()?, x.parse().ok()?, y.parse().ok()?))
    })();
    let (p, l, x, y) = coords.ok_or_else(missing)?;
    let bytes = container.tile_bytes(p, l, x, y)?.ok_or_else(missing)?;
    Ok((
        [(header::CONTENT_TYPE, "image/png"), (header::CACHE_CONTROL, "public, max-age=31536000, immutable")],
        bytes,
    )
        .into_response())
}

#[derive(Debug, Default, Deserialize)]
pub struct AnnotationFilter {
    pub source: Option<String>,
    pub review: Option<String>,
}

async fn list_annotations(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(filter): Query<AnnotationFilter>,
) -> ApiResult<Json<Vec<Annotation>>> {
    let parse = |e: Error| ApiError::new(StatusCode::BAD_REQUEST, e.code(), e.to_string());
    let source: Option<Source> = filter.source.as_deref().map(str::parse).transpose().map_err(parse)?;
    let review: Option<Review> = filter.review.as_deref().map(str::parse).transpose().map_err(parse)?;
    let index = st.inner.index.read().unwrap();
    index.slide(&id)?;
    let mut out: Vec<Annotation> = index
        .annotations_for(&id)
        .iter()
        .filter(|a| source.is_none_or(|s| a.source == s) && review.is_none_or(|r| a.review == r))
        .cloned()
        .collect();
    out.sort_by(|a, b| a.annotation_id.cmp(&b.annotation_id));
    Ok(Json(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRequest {
    pub annotation_id: String,
    pub expected_version: u32,
    #[serde(flatten)]
    pub action: Decision,
    pub reviewer: String,
}

async fn submit_correction(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<CorrectionRequest>, JsonRejection>,
) -> ApiResult<Json<Annotation>> {
    let Json(req) = body.map_err(bad_body)?;
    if req.reviewer.trim().is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", "reviewer name is empty"));
    }
    let mut index = st.inner.index.write().unwrap();
    index.slide(&id)?;
    let current = index
        .annotations_for(&id)
        .iter()
        .find(|a| a.annotation_id == req.annotation_id)
        .cloned()
        .ok_or_else(|| Error::UnknownAnnotation(req.annotation_id.clone()))?;

    let decision = ReviewDecision {
        annotation_id: req.annotation_id.clone(),
        expected_version: Some(req.expected_version),
        decision: req.action,
    };
    let mut next = index.clone();
    if let Err(e) = merge_review(&mut next, &[decision], Some(&st.inner.catalog), &req.reviewer, (st.inner.clock)()) {
        let conflict = matches!(e, Error::VersionConflict { .. });
        let mut err = ApiError::from(e);
        if conflict {
            err.current = Some(current);
        }
        return Err(err);
    }
    st.inner.store.save(&next)?;
    *index = next;
    Ok(Json(index.find(&req.annotation_id).expect("just updated").clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRequest {
    pub slide_id: String,
    /// Only accepted records, as used for training.
    #[serde(default)]
    pub accepted_only: bool,
}

/// The slide's annotation file as it stands, in the on-disk format.
async fn export(State(st): State<AppState>, body: Result<Json<ExportRequest>, JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body.map_err(bad_body)?;
    let index = st.inner.index.read().unwrap();
    index.slide(&req.slide_id)?;
    let anns: Vec<Annotation> = if req.accepted_only {
        index.training_annotations(&req.slide_id).into_iter().cloned().collect()
    } else {
        index.annotations_for(&req.slide_id).to_vec()
    };
    let disposition = format!("attachment; filename=\"{}.txt\"", req.slide_id);
    Ok((
        [(header::CONTENT_TYPE, "text/plain; charset=utf-8".to_string()), (header::CONTENT_DISPOSITION, disposition)],
        format_annotation_file(&anns),
    )
        .into_response())
}
