//! Admin HTTP API.

use std::path::PathBuf;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use scm_forge_core::job::JobRequest;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::service::{NewDevice, Service, ServiceError};

pub const ADMIN_TOKEN_ENV: &str = "SCM_ADMIN_TOKEN";

#[derive(Debug, Clone, Default)]
pub struct ApiConfig {
    /// Bearer token required on `/api`, if any.
    pub admin_token: Option<String>,
    /// Directory served at `/console`.
    pub console_dir: Option<PathBuf>,
}

impl ApiConfig {
    pub fn from_env() -> Self {
        ApiConfig {
            admin_token: std::env::var(ADMIN_TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            console_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobCreated {
    pub job_id: String,
}

#[derive(Debug, Deserialize)]
struct SessionFilter {
    device: Option<String>,
}

struct ApiError(StatusCode, String);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let code = match &e {
            ServiceError::UnknownDevice(_) | ServiceError::UnknownJob(_) | ServiceError::UnknownSession(_) => {
                StatusCode::NOT_FOUND
            }
            ServiceError::DuplicateDevice(_) | ServiceError::RemoteTree(_) => StatusCode::CONFLICT,
            ServiceError::NoTargets | ServiceError::InvalidJob(_) => StatusCode::BAD_REQUEST,
            ServiceError::Persist(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn list_devices(State(s): State<Service>) -> impl IntoResponse {
    Json(s.devices())
}

async fn register(State(s): State<Service>, Json(req): Json<NewDevice>) -> ApiResult<impl IntoResponse> {
    Ok((StatusCode::CREATED, Json(s.register(req).await?)))
}

async fn device(State(s): State<Service>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.device(&id)?))
}

async fn tree(State(s): State<Service>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.tree(&id)?))
}

async fn inventory(State(s): State<Service>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.inventory(&id)?))
}

async fn submit(State(s): State<Service>, Json(req): Json<JobRequest>) -> ApiResult<impl IntoResponse> {
    let job_id = s.submit(req).await?;
    Ok((StatusCode::ACCEPTED, Json(JobCreated { job_id })))
}

async fn list_jobs(State(s): State<Service>) -> impl IntoResponse {
    Json(s.jobs())
}

async fn job(State(s): State<Service>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.job(&id)?))
}

async fn sessions(State(s): State<Service>, Query(f): Query<SessionFilter>) -> impl IntoResponse {
    Json(s.sessions(f.device.as_deref()))
}

async fn transcript(State(s): State<Service>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let t = s.transcript(&id)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], t.to_jsonl()))
}

async fn require_token(State(token): State<Option<String>>, headers: HeaderMap, req: Request, next: Next) -> Response {
    if let Some(token) = token {
        let given = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_str()) {
            return ApiError(StatusCode::UNAUTHORIZED, "missing or wrong admin token".into()).into_response();
        }
    }
    next.run(req).await
}

async fn not_found() -> ApiError {
    ApiError(StatusCode::NOT_FOUND, "no such route".into())
}

pub fn router(service: Service, config: ApiConfig) -> Router {
    let api = Router::new()
        .route("/devices", get(list_devices).post(register))
        .route("/devices/{id}", get(device))
        .route("/devices/{id}/tree", get(tree))
        .route("/devices/{id}/inventory", get(inventory))
        .route("/jobs", get(list_jobs).post(submit))
        .route("/jobs/{id}", get(job))
        .route("/sessions", get(sessions))
        .route("/sessions/{id}/transcript", get(transcript))
        .fallback(not_found)
        .layer(middleware::from_fn_with_state(
            config.admin_token.clone(),
            require_token,
        ))
        .with_state(service);
    let mut app = Router::new().nest("/api", api);
    if let Some(dir) = config.console_dir {
        app = app.nest_service("/console", ServeDir::new(dir));
    }
    app
}
