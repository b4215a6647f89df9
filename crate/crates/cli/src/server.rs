//! Pose-editing render service.
//!
//! Mutations go through a write lock and are applied whole or not at all.
//! Renders queue on a single gate and snapshot the state only once they hold
//! it, so a render waiting behind a pose update draws the newer pose.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use tokio::sync::Mutex;

use skinsplat::{Camera, PoseUpdate, SessionState};

use crate::documents::{self, check_clip_name, ClipRequest, ClipResponse, ErrorBody, Meta, PoseResponse, Versioned};

pub const RENDER_MILLIS_HEADER: &str = "x-render-millis";

pub struct AppState {
    session: RwLock<SessionState>,
    render_gate: Mutex<()>,
    clip_root: PathBuf,
}

impl AppState {
    pub fn new(session: SessionState, clip_root: PathBuf) -> Arc<Self> {
        Arc::new(AppState { session: RwLock::new(session), render_gate: Mutex::new(()), clip_root })
    }

    fn snapshot(&self) -> SessionState {
        self.session.read().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(e: impl std::fmt::Display) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, message: format!("{e:#}") }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, message: format!("{e:#}") }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn body<T: DeserializeOwned>(bytes: &[u8], what: &str) -> ApiResult<T> {
    documents::parse(bytes, what).map_err(ApiError::bad_request)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/meta", get(meta))
        .route("/pose", get(get_pose).put(put_pose))
        .route("/camera", put(put_camera))
        .route("/frame", get(frame))
        .route("/clip", post(clip))
        .with_state(state)
}

async fn meta(State(state): State<Arc<AppState>>) -> Json<Versioned<Meta>> {
    let s = state.snapshot();
    let bundle = s.bundle();
    Json(Versioned::new(Meta {
        joints: s.joint_names(),
        width: s.camera().width,
        height: s.camera().height,
        texels: bundle.human.len(),
        background_gaussians: bundle.background.len(),
        camera: s.camera().clone(),
    }))
}

async fn get_pose(State(state): State<Arc<AppState>>) -> Json<Versioned<PoseResponse>> {
    Json(Versioned::new(state.snapshot().named_pose()))
}

async fn put_pose(State(state): State<Arc<AppState>>, bytes: Bytes) -> ApiResult<Json<Versioned<PoseResponse>>> {
    let update: PoseUpdate = body(&bytes, "pose update")?;
    let mut session = state.session.write().unwrap_or_else(|e| e.into_inner());
    session.set_pose(&update).map_err(ApiError::bad_request)?;
    Ok(Json(Versioned::new(session.named_pose())))
}

async fn put_camera(State(state): State<Arc<AppState>>, bytes: Bytes) -> ApiResult<Json<Versioned<Camera>>> {
    let camera: Camera = body(&bytes, "camera")?;
    let mut session = state.session.write().unwrap_or_else(|e| e.into_inner());
    session.set_camera(camera).map_err(ApiError::bad_request)?;
    Ok(Json(Versioned::new(session.camera().clone())))
}

async fn frame(State(state): State<Arc<AppState>>) -> ApiResult<Response> {
    let _gate = state.render_gate.lock().await;
    let snapshot = state.snapshot();
    let (png, elapsed) = tokio::task::spawn_blocking(move || snapshot.render_frame())
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::internal)?;
    let millis = format!("{:.3}", elapsed.as_secs_f64() * 1e3);
    let mut response = png.into_response();
    let headers = response.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    headers.insert(header::CACHE_CONTROL, HeaderValue::from_static("no-store"));
    headers.insert(RENDER_MILLIS_HEADER, HeaderValue::from_str(&millis).map_err(ApiError::internal)?);
    Ok(response)
}

async fn clip(State(state): State<Arc<AppState>>, bytes: Bytes) -> ApiResult<Json<Versioned<ClipResponse>>> {
    let request: ClipRequest = body(&bytes, "clip request")?;
    check_clip_name(&request.name).map_err(ApiError::bad_request)?;
    request.clip.validate().map_err(ApiError::bad_request)?;
    let dir = state.clip_root.join(&request.name);
    let _gate = state.render_gate.lock().await;
    let snapshot = state.snapshot();
    let target = dir.clone();
    let paths = tokio::task::spawn_blocking(move || snapshot.play_clip(&request.clip, &target))
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::bad_request)?;
    let frames = paths
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    Ok(Json(Versioned::new(ClipResponse { directory: dir.display().to_string(), frames })))
}
