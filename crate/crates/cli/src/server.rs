//! Data API for the browser annotation tool.
//!
//! - `GET  /api/frames[?unannotated=true]` lists frames in manifest order.
//! - `GET  /api/frames/{index}/image` returns the image bytes.
//! - `GET  /api/frames/{index}/annotation` returns the stored document, or 404.
//! - `PUT  /api/frames/{index}/annotation` validates `{k, cutoff_y, annotator_id?}`
//!   and writes the document atomically; the response body is the stored bytes.
//!
//! Everything else is served from the static UI directory when one is configured.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use traverse_core::dataset::{annotation_path, timestamp_now, write_annotation, AnnotationDoc, Manifest};

use crate::error::{CliError, CliResult};
use crate::settings::{require, write_run_manifest, AnnotateServeSettings};

pub struct AppState {
    pub manifest: Manifest,
    pub annotations: PathBuf,
    pub default_annotator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameInfo {
    pub index: usize,
    pub image_path: String,
    pub domain: String,
    pub annotated: bool,
}

#[derive(Debug, Deserialize)]
pub struct ListQuery {
    #[serde(default)]
    pub unannotated: bool,
}

/// Body of a save request.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationPayload {
    pub k: usize,
    pub cutoff_y: Vec<f64>,
    #[serde(default)]
    pub annotator_id: Option<String>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: msg.into() })).into_response()
}

fn json_bytes(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

impl AppState {
    fn record(&self, index: usize) -> Result<&traverse_core::dataset::FrameRecord, Response> {
        self.manifest
            .records
            .get(index)
            .ok_or_else(|| error(StatusCode::NOT_FOUND, format!("no frame {index}")))
    }
}

async fn list_frames(State(state): State<Arc<AppState>>, Query(q): Query<ListQuery>) -> Json<Vec<FrameInfo>> {
    let frames = state
        .manifest
        .records
        .iter()
        .enumerate()
        .map(|(index, r)| FrameInfo {
            index,
            image_path: r.image_path.clone(),
            domain: r.domain.to_string(),
            annotated: annotation_path(&state.annotations, &r.image_path).exists(),
        })
        .filter(|f| !(q.unannotated && f.annotated))
        .collect();
    Json(frames)
}

async fn get_image(State(state): State<Arc<AppState>>, Path(index): Path<usize>) -> Response {
    let record = match state.record(index) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let path = state.manifest.resolve(record);
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "image/png",
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, mime)], bytes).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("cannot read {}: {e}", path.display())),
    }
}

async fn get_annotation(State(state): State<Arc<AppState>>, Path(index): Path<usize>) -> Response {
    let record = match state.record(index) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let path = annotation_path(&state.annotations, &record.image_path);
    match tokio::fs::read(&path).await {
        Ok(bytes) => json_bytes(bytes),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => error(StatusCode::NOT_FOUND, "not annotated"),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn put_annotation(
    State(state): State<Arc<AppState>>,
    Path(index): Path<usize>,
    payload: Result<Json<AnnotationPayload>, JsonRejection>,
) -> Response {
    let record = match state.record(index) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let Json(payload) = match payload {
        Ok(p) => p,
        Err(rejection) => return error(StatusCode::UNPROCESSABLE_ENTITY, rejection.body_text()),
    };
    let doc = AnnotationDoc {
        image_path: record.image_path.clone(),
        k: payload.k,
        cutoff_y: payload.cutoff_y,
        annotator_id: payload.annotator_id.unwrap_or_else(|| state.default_annotator.clone()),
        created_at: timestamp_now(),
    };
    if let Err(e) = doc.validate() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string());
    }
    let dir = state.annotations.clone();
    let written = tokio::task::spawn_blocking(move || -> traverse_core::Result<Vec<u8>> {
        write_annotation(&dir, &doc)?;
        doc.to_json_bytes()
    })
    .await;
    match written {
        Ok(Ok(bytes)) => json_bytes(bytes),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

const PLACEHOLDER: &str = "<!doctype html><title>annotate</title>\
<p>Annotation data API is running. Start the server with <code>--static &lt;dir&gt;</code> to serve the UI.</p>";

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/frames", get(list_frames))
        .route("/api/frames/{index}/image", get(get_image))
        .route("/api/frames/{index}/annotation", get(get_annotation).put(put_annotation))
        .with_state(Arc::new(state));
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(PLACEHOLDER) })),
    }
}

pub fn serve(s: &AnnotateServeSettings) -> CliResult<()> {
    let manifest = Manifest::read(require(&s.manifest, "manifest")?)?;
    let annotations = require(&s.annotations, "annotations")?.clone();
    std::fs::create_dir_all(&annotations)?;
    if let Some(dir) = &s.static_dir {
        if !dir.is_dir() {
            return Err(CliError::Config(format!("static directory {} does not exist", dir.display())));
        }
    }
    write_run_manifest(&annotations.join("annotate_serve.run.toml"), s)?;
    let app = router(
        AppState {
            manifest,
            annotations,
            default_annotator: s.annotator.clone(),
        },
        s.static_dir.clone(),
    );
    let addr = format!("{}:{}", s.host, s.port);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Runtime(format!("cannot listen on {addr}: {e}")))?;
        log::info!("serving on http://{addr}");
        axum::serve(listener, app)
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))
    })
}
