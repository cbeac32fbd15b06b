//! HTTP front of the annotation store.
//!
//! | method | path                        | body / result                    |
//! |--------|-----------------------------|----------------------------------|
//! | POST   | `/api/annotators`           | `{"id"}`, registers an annotator |
//! | GET    | `/api/jobs/next?annotator=` | `{"job": job or null}`           |
//! | GET    | `/api/jobs/{id}`            | job                              |
//! | POST   | `/api/jobs/{id}/response`   | response payload, 201 + receipt  |
//! | GET    | `/api/results/{job_set}`    | annotation records               |
//! | GET    | `/api/media/{*path}`        | step image bytes                 |
//!
//! Errors are `{"error": message}` with 401 (unknown annotator), 404, 409
//! (already answered), 422 (payload) or 500.

use std::path::{Component, Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use stepvis::annotation::{AnnotationStore, ResponsePayload, ServiceError};

#[derive(Clone)]
struct AppState {
    store: Arc<AnnotationStore>,
    static_dir: Option<PathBuf>,
}

struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0 {
            ServiceError::Auth(_) => StatusCode::UNAUTHORIZED,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(store: Arc<AnnotationStore>, static_dir: Option<PathBuf>) -> Router {
    Router::new()
        .route("/api/annotators", post(register))
        .route("/api/jobs/next", get(next_job))
        .route("/api/jobs/{id}", get(job))
        .route("/api/jobs/{id}/response", post(respond))
        .route("/api/results/{job_set}", get(results))
        .route("/api/media/{*path}", get(media))
        .fallback(get(static_file))
        .with_state(AppState { store, static_dir })
}

#[derive(Deserialize)]
struct Registration {
    id: String,
}

async fn register(State(s): State<AppState>, Json(r): Json<Registration>) -> ApiResult<impl IntoResponse> {
    s.store.register_annotator(&r.id)?;
    Ok((StatusCode::CREATED, Json(json!({ "id": r.id }))))
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: String,
}

async fn next_job(State(s): State<AppState>, Query(q): Query<NextQuery>) -> ApiResult<impl IntoResponse> {
    Ok(Json(json!({ "job": s.store.next_job(&q.annotator)? })))
}

async fn job(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.store.job(&id)?))
}

async fn respond(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(payload): Json<ResponsePayload>,
) -> ApiResult<impl IntoResponse> {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let store = s.store.clone();
    let receipt = tokio::task::spawn_blocking(move || store.submit_response(&id, &payload, now))
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e.to_string())))??;
    Ok((StatusCode::CREATED, Json(receipt)))
}

async fn results(State(s): State<AppState>, UrlPath(set): UrlPath<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.store.export_records(&set)?))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

async fn send_file(path: &Path) -> Response {
    match tokio::fs::read(path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(path))], bytes).into_response(),
        Err(_) => ApiError(ServiceError::NotFound(path.display().to_string())).into_response(),
    }
}

async fn media(State(s): State<AppState>, UrlPath(path): UrlPath<String>) -> Response {
    match s.store.media_path(&path) {
        Ok(p) => send_file(&p).await,
        Err(e) => ApiError(e).into_response(),
    }
}

async fn static_file(State(s): State<AppState>, uri: Uri) -> Response {
    let not_found = || ApiError(ServiceError::NotFound(uri.path().to_string())).into_response();
    let Some(root) = &s.static_dir else { return not_found() };
    let rel = Path::new(uri.path().trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return not_found();
    }
    let path = if rel.as_os_str().is_empty() { root.join("index.html") } else { root.join(rel) };
    send_file(&path).await
}
