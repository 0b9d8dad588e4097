use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use tilscope_core::helm::{helm_detect, Detection};
use tilscope_core::pyramid::{PyramidError, RegionSource};
use tokio::sync::Semaphore;

use crate::config::MAX_REGION_PIXELS;
use crate::overlay::{contours_to_overlay, encode_png};
use crate::registry::{ModelBackend, ModelRegistry};
use crate::remote::{remote_infer, RemoteError};
use crate::store::{SlidePath, SlideStore};

pub const TILE_CACHE_CONTROL: &str = "public, max-age=31536000, immutable";

#[derive(Debug)]
pub struct AppState {
    pub store: SlideStore,
    pub registry: ModelRegistry,
    pub client: reqwest::Client,
    /// Bounds concurrent CPU-bound jobs.
    pub workers: Semaphore,
}

impl AppState {
    pub fn new(store: SlideStore, registry: ModelRegistry, workers: usize) -> Self {
        Self {
            store,
            registry,
            client: reqwest::Client::new(),
            workers: Semaphore::new(workers.max(1)),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

impl From<RemoteError> for ApiError {
    fn from(e: RemoteError) -> Self {
        Self::new(StatusCode::BAD_GATEWAY, e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    /// DeepZoom level to read at; defaults to full resolution.
    #[serde(default)]
    pub level: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateRequest {
    pub slide_id: String,
    pub region: Region,
    pub model: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionEcho {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub level: u32,
}

/// Detections and counts for one annotate call. All coordinates are
/// full-resolution slide pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationResult {
    pub slide_id: String,
    pub model: String,
    pub region: RegionEcho,
    pub detections: Vec<Detection>,
    pub counts: BTreeMap<String, u64>,
    pub elapsed_ms: f64,
    /// Base64 RGBA PNG at the read level, present with `?overlay=1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlay_png: Option<String>,
}

pub fn count_classes(detections: &[Detection]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for d in detections {
        *counts.entry(d.class_label.clone()).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Default, Deserialize)]
pub struct AnnotateQuery {
    #[serde(default)]
    pub overlay: Option<String>,
}

impl AnnotateQuery {
    fn wants_overlay(&self) -> bool {
        matches!(self.overlay.as_deref(), Some("1" | "true" | "yes"))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/slides", get(list_slides))
        .route("/slides/{*path}", get(slide_file))
        .route("/models", get(list_models))
        .route("/annotate", post(annotate))
        .with_state(state)
}

async fn list_slides(State(s): State<Arc<AppState>>) -> impl IntoResponse {
    Json(s.store.summaries())
}

async fn list_models(State(s): State<Arc<AppState>>) -> impl IntoResponse {
    Json(s.registry.summaries())
}

fn immutable(bytes: Vec<u8>, mime: &'static str) -> Response {
    (
        [
            (header::CONTENT_TYPE, HeaderValue::from_static(mime)),
            (header::CACHE_CONTROL, HeaderValue::from_static(TILE_CACHE_CONTROL)),
        ],
        bytes,
    )
        .into_response()
}

async fn slide_file(State(s): State<Arc<AppState>>, Path(path): Path<String>) -> Result<Response, ApiError> {
    let parsed = SlidePath::parse(&path).ok_or_else(|| ApiError::not_found(format!("no such resource {path:?}")))?;
    let (slide, file) = match &parsed {
        SlidePath::Descriptor(id) => {
            let p = s.store.get(id).ok_or_else(|| ApiError::not_found(format!("unknown slide {id:?}")))?;
            (p, p.dzi_path().to_path_buf())
        }
        SlidePath::Tile {
            slide,
            level,
            col,
            row,
            ext,
        } => {
            let p = s.store.get(slide).ok_or_else(|| ApiError::not_found(format!("unknown slide {slide:?}")))?;
            if ext != p.descriptor().format.extension() {
                return Err(ApiError::not_found(format!("slide {slide:?} has no .{ext} tiles")));
            }
            let file = p
                .tile_path(*level, *col, *row)
                .ok_or_else(|| ApiError::not_found(format!("no tile {level}/{col}_{row}")))?;
            (p, file)
        }
    };
    let bytes = tokio::fs::read(&file).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ApiError::not_found(format!("{} missing", file.display())),
        _ => ApiError::internal(format!("reading {}: {e}", file.display())),
    })?;
    let mime = match parsed {
        SlidePath::Descriptor(_) => "application/xml",
        SlidePath::Tile { .. } => slide.descriptor().format.mime(),
    };
    Ok(immutable(bytes, mime))
}

fn pyramid_error(e: PyramidError) -> ApiError {
    match e {
        PyramidError::OutOfBounds { .. } => ApiError::new(StatusCode::BAD_REQUEST, e.to_string()),
        PyramidError::NoSuchLevel { .. } | PyramidError::NoSuchTile { .. } => ApiError::not_found(e.to_string()),
        _ => ApiError::internal(e.to_string()),
    }
}

async fn annotate(
    State(s): State<Arc<AppState>>,
    Query(q): Query<AnnotateQuery>,
    Json(req): Json<AnnotateRequest>,
) -> Result<Json<AnnotationResult>, ApiError> {
    let started = Instant::now();
    let pyramid = s
        .store
        .get(&req.slide_id)
        .ok_or_else(|| ApiError::not_found(format!("unknown slide {:?}", req.slide_id)))?
        .clone();
    let model = s
        .registry
        .get(&req.model)
        .ok_or_else(|| ApiError::not_found(format!("unknown model {:?}", req.model)))?
        .clone();
    let d = *pyramid.descriptor();
    let level = req.region.level.unwrap_or(d.max_level());
    if level > d.max_level() {
        return Err(ApiError::not_found(format!("level {level} above max level {}", d.max_level())));
    }
    let Region { x, y, w, h, .. } = req.region;
    let inside = w > 0
        && h > 0
        && x.checked_add(w).is_some_and(|e| e <= d.width)
        && y.checked_add(h).is_some_and(|e| e <= d.height);
    if !inside {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("region {x},{y} {w}x{h} is empty or outside the {}x{} slide", d.width, d.height),
        ));
    }
    let (lx, ly, lw, lh) = d
        .full_res_to_level(level, (x, y, w, h))
        .expect("level checked above");
    if lw as u64 * lh as u64 > MAX_REGION_PIXELS {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("region is {lw}x{lh} at level {level}; the limit is 4096x4096 pixels"),
        ));
    }
    let scale = d.scale(level) as u32;

    let patch = {
        let _permit = s.workers.acquire().await.map_err(|e| ApiError::internal(e.to_string()))?;
        let reader = pyramid.clone();
        tokio::task::spawn_blocking(move || reader.read_region(lx, ly, lw, lh, level))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))?
            .map_err(pyramid_error)?
    };

    let local = match &model.backend {
        ModelBackend::Helm(params) => {
            let _permit = s.workers.acquire().await.map_err(|e| ApiError::internal(e.to_string()))?;
            let params = params.clone();
            tokio::task::spawn_blocking(move || helm_detect(&patch, &params))
                .await
                .map_err(|e| ApiError::internal(e.to_string()))?
                // a region narrower than the kernels holds no nuclei
                .unwrap_or_default()
        }
        // network bound, so no worker permit
        ModelBackend::Remote(cfg) => remote_infer(&s.client, cfg, &patch).await?,
    };
    let origin = [lx * scale, ly * scale];
    let detections: Vec<Detection> = local
        .iter()
        .map(|det| det.transformed(scale as i32, [origin[0] as i32, origin[1] as i32]))
        .collect();

    let overlay_png = if q.wants_overlay() {
        let img = contours_to_overlay(&detections, origin, scale, lw, lh);
        let png = encode_png(&img).map_err(|e| ApiError::internal(e.to_string()))?;
        Some(base64::engine::general_purpose::STANDARD.encode(png))
    } else {
        None
    };

    Ok(Json(AnnotationResult {
        slide_id: req.slide_id,
        model: model.name.clone(),
        region: RegionEcho { x, y, w, h, level },
        counts: count_classes(&detections),
        detections,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        overlay_png,
    }))
}
