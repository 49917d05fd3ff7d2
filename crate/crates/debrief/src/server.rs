//! HTTP/JSON API over an immutable detection store.

use std::collections::BTreeSet;
use std::io::Cursor;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{Path, Query as QueryParams, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use panoact::dataset::CLIPS_DIR;
use panoact::tensor::Tensor;
use serde::Deserialize;

use crate::error::{DebriefError, Result};
use crate::llm::{llm_summarize, ExternalConfig};
use crate::query::{query, Query};
use crate::store::{DetectionStore, VideoInfo};
use crate::summarize::{Style, Summarizer};

/// Shared, read-only service state.
#[derive(Clone, Debug)]
pub struct AppState {
    pub store: Arc<DetectionStore>,
    pub summarizer: Arc<Summarizer>,
    pub external: Option<ExternalConfig>,
    /// Dataset directory holding `clips/<video>/<frame>.t`, if frames are
    /// served.
    pub frames: Option<PathBuf>,
}

impl AppState {
    pub fn new(store: DetectionStore) -> Self {
        AppState {
            store: Arc::new(store),
            summarizer: Arc::new(Summarizer::default()),
            external: None,
            frames: None,
        }
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<DebriefError> for ApiError {
    fn from(e: DebriefError) -> Self {
        let status = match e {
            DebriefError::UnknownVideo(_) => StatusCode::NOT_FOUND,
            DebriefError::InvalidQuery(_) | DebriefError::Schema(_) | DebriefError::Parse { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn bad_request(e: impl ToString) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, e.to_string())
}

/// Query-string form of [`Query`]; `action` is a comma-separated list.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionParams {
    pub from: Option<f64>,
    pub to: Option<f64>,
    pub action: Option<String>,
    pub min_conf: Option<f64>,
}

impl DetectionParams {
    pub fn to_query(&self, video: &str) -> Query {
        let all = Query::all(video);
        Query {
            from: self.from.unwrap_or(all.from),
            to: self.to.unwrap_or(all.to),
            actions: self.action.as_ref().map(|a| a.split(',').filter(|s| !s.is_empty()).map(String::from).collect()),
            min_conf: self.min_conf.unwrap_or(all.min_conf),
            video: all.video,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummarizeRequest {
    pub video: String,
    pub from: Option<f64>,
    pub to: Option<f64>,
    pub actions: Option<BTreeSet<String>>,
    pub min_conf: Option<f64>,
    #[serde(default)]
    pub style: Style,
}

impl SummarizeRequest {
    pub fn to_query(&self) -> Query {
        let all = Query::all(&self.video);
        Query {
            from: self.from.unwrap_or(all.from),
            to: self.to.unwrap_or(all.to),
            actions: self.actions.clone(),
            min_conf: self.min_conf.unwrap_or(all.min_conf),
            video: all.video,
        }
    }
}

async fn videos(State(s): State<AppState>) -> Json<Vec<VideoInfo>> {
    Json(s.store.videos().map(|v| v.info.clone()).collect())
}

async fn detections(
    State(s): State<AppState>,
    id: std::result::Result<Path<String>, PathRejection>,
    params: std::result::Result<QueryParams<DetectionParams>, QueryRejection>,
) -> std::result::Result<Response, ApiError> {
    let Path(id) = id.map_err(bad_request)?;
    let QueryParams(p) = params.map_err(|e| bad_request(e.body_text()))?;
    Ok(Json(query(&s.store, &p.to_query(&id))?).into_response())
}

async fn summarize(
    State(s): State<AppState>,
    body: std::result::Result<Json<SummarizeRequest>, JsonRejection>,
) -> std::result::Result<Response, ApiError> {
    let Json(req) = body.map_err(|e| bad_request(e.body_text()))?;
    let events = query(&s.store, &req.to_query())?;
    Ok(Json(llm_summarize(&events, req.style, &s.summarizer, s.external.as_ref()).await).into_response())
}

/// `[C,H,W]` values in [0, 1] as an 8-bit PNG (grey for one channel, RGB
/// from the first three otherwise).
pub fn frame_png(t: &Tensor) -> Result<Vec<u8>> {
    let &[c, h, w] = t.shape() else {
        return Err(DebriefError::Schema(format!("frame shape {:?} is not [C,H,W]", t.shape())));
    };
    if c != 1 && c < 3 {
        return Err(DebriefError::Schema(format!("frame has {c} channels")));
    }
    let d = t.data();
    let byte = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let plane = h * w;
    let mut buf = Cursor::new(Vec::new());
    let res = if c == 1 {
        image::GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([byte(d[y as usize * w + x as usize])]))
            .write_to(&mut buf, image::ImageFormat::Png)
    } else {
        image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let i = y as usize * w + x as usize;
            image::Rgb([byte(d[i]), byte(d[plane + i]), byte(d[2 * plane + i])])
        })
        .write_to(&mut buf, image::ImageFormat::Png)
    };
    res.map_err(|e| DebriefError::Schema(format!("png encoding: {e}")))?;
    Ok(buf.into_inner())
}

async fn frame(
    State(s): State<AppState>,
    path: std::result::Result<Path<(String, usize)>, PathRejection>,
) -> std::result::Result<Response, ApiError> {
    let Path((id, n)) = path.map_err(bad_request)?;
    // Only ids known to the store reach the filesystem.
    if s.store.get(&id).is_none() {
        return Err(DebriefError::UnknownVideo(id).into());
    }
    let not_found = || ApiError(StatusCode::NOT_FOUND, format!("no frame {n} for video {id}"));
    let root = s.frames.as_ref().ok_or_else(not_found)?;
    let file = root.join(CLIPS_DIR).join(&id).join(format!("{n:06}.t"));
    if !file.is_file() {
        return Err(not_found());
    }
    let t = Tensor::load(&file).map_err(DebriefError::from)?;
    let png = frame_png(&t)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/videos", get(videos))
        .route("/videos/{id}/detections", get(detections))
        .route("/videos/{id}/frames/{n}", get(frame))
        .route("/summarize", post(summarize))
        .with_state(state)
}

pub async fn bind(addr: SocketAddr) -> Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| DebriefError::io(std::path::Path::new(&addr.to_string()), e))
}

/// Serve `state` on `listener` until the process ends.
pub async fn serve(state: AppState, listener: tokio::net::TcpListener) -> Result<()> {
    let addr = listener.local_addr().map_err(|e| DebriefError::io(std::path::Path::new("listener"), e))?;
    log::info!("listening on {addr}");
    axum::serve(listener, router(state))
        .await
        .map_err(|e| DebriefError::io(std::path::Path::new(&addr.to_string()), e))
}
