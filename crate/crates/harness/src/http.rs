//! HTTP + JSON front end of [`StudyService`].

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use drt_core::session::ParticipantProfile;
use serde::{Deserialize, Serialize};

use crate::report::{files_csv, study_text};
use crate::service::{ClientEvent, ResponseSubmission, ServiceError, StudyService};
use crate::study::{StudyDefinition, StudyStatus};

/// Body of every error response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
}

pub enum ApiError {
    Service(ServiceError),
    Internal(String),
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError::Service(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::Service(ServiceError::Invalid(e.body_text()))
    }
}

fn status_of(e: &ServiceError) -> StatusCode {
    match e {
        ServiceError::NotFound { .. } => StatusCode::NOT_FOUND,
        ServiceError::Conflict(_) | ServiceError::Protocol(_) | ServiceError::SessionClosed(_) => StatusCode::CONFLICT,
        ServiceError::Invalid(_) => StatusCode::BAD_REQUEST,
        ServiceError::Ineligible(_) | ServiceError::StudyNotOpen(_) => StatusCode::FORBIDDEN,
        ServiceError::InsufficientData(_) => StatusCode::UNPROCESSABLE_ENTITY,
        ServiceError::Storage(_) => StatusCode::SERVICE_UNAVAILABLE,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let e = match self {
            ApiError::Service(e) => e,
            ApiError::Internal(message) => {
                tracing::error!(%message, "internal error");
                let body = ErrorBody { code: "internal".into(), message, reasons: Vec::new() };
                return (StatusCode::INTERNAL_SERVER_ERROR, Json(body)).into_response();
            }
        };
        let status = status_of(&e);
        if status.is_server_error() {
            tracing::error!(error = %e, "request failed");
        }
        let reasons = match &e {
            ServiceError::Ineligible(r) => r.iter().map(ToString::to_string).collect(),
            _ => Vec::new(),
        };
        let body = ErrorBody { code: e.code().into(), message: e.to_string(), reasons };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Svc = State<Arc<StudyService>>;

/// Runs blocking service work (it may fsync) off the async workers.
async fn blocking<T: Send + 'static>(
    svc: Arc<StudyService>,
    f: impl FnOnce(&StudyService) -> Result<T, ServiceError> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
        .map_err(ApiError::Service)
}

async fn create_study(State(svc): Svc, body: Result<Json<StudyDefinition>, JsonRejection>) -> ApiResult<Response> {
    let Json(def) = body?;
    let summary = blocking(svc, move |s| s.create_study(def)).await?;
    Ok((StatusCode::CREATED, Json(summary)).into_response())
}

async fn get_study(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blocking(svc, move |s| s.summary(&id)).await?).into_response())
}

#[derive(Deserialize)]
struct StatusChange {
    status: StudyStatus,
}

async fn set_status(
    State(svc): Svc,
    Path(id): Path<String>,
    body: Result<Json<StatusChange>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(change) = body?;
    Ok(Json(blocking(svc, move |s| s.set_status(&id, change.status)).await?).into_response())
}

async fn create_session(
    State(svc): Svc,
    Path(id): Path<String>,
    body: Result<Json<ParticipantProfile>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(profile) = body?;
    let created = blocking(svc, move |s| s.create_session(&id, profile)).await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn next_item(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blocking(svc, move |s| s.next_item(&id)).await?).into_response())
}

async fn submit_response(
    State(svc): Svc,
    Path(id): Path<String>,
    body: Result<Json<ResponseSubmission>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(sub) = body?;
    Ok(Json(blocking(svc, move |s| s.submit_response(&id, sub)).await?).into_response())
}

async fn post_event(
    State(svc): Svc,
    Path(id): Path<String>,
    body: Result<Json<ClientEvent>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(event) = body?;
    Ok(Json(blocking(svc, move |s| s.post_event(&id, event)).await?).into_response())
}

#[derive(Deserialize)]
struct ReportQuery {
    #[serde(default)]
    format: Option<String>,
}

async fn report(State(svc): Svc, Path(id): Path<String>, Query(q): Query<ReportQuery>) -> ApiResult<Response> {
    let format = q.format.unwrap_or_else(|| "json".into());
    if !matches!(format.as_str(), "json" | "text" | "csv") {
        return Err(ServiceError::Invalid(format!("unknown report format {format:?}")).into());
    }
    let r = blocking(svc, move |s| s.report(&id)).await?;
    Ok(match format.as_str() {
        "text" => ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], study_text(&r)).into_response(),
        "csv" => ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], files_csv(&r.report)).into_response(),
        _ => Json(r).into_response(),
    })
}

async fn export(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Response> {
    let name = format!("attachment; filename=\"{id}-export.json\"");
    let e = blocking(svc, move |s| s.export(&id)).await?;
    let mut resp = Json(e).into_response();
    if let Ok(v) = HeaderValue::from_str(&name) {
        resp.headers_mut().insert(header::CONTENT_DISPOSITION, v);
    }
    Ok(resp)
}

async fn audio(State(svc): Svc, Path(hash): Path<String>) -> ApiResult<Response> {
    let not_found = || ApiError::Service(ServiceError::NotFound { what: "audio", id: hash.clone() });
    let path = svc.audio_path(&hash).ok_or_else(not_found)?;
    let bytes = tokio::fs::read(&path).await.map_err(|e| {
        tracing::warn!(path = %path.display(), error = %e, "audio file unreadable");
        not_found()
    })?;
    Ok((
        [
            (header::CONTENT_TYPE, "audio/wav"),
            // paths are content-addressed per study and never change
            (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
        ],
        bytes,
    )
        .into_response())
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok"}))
}

/// The API routes, optionally with a static client bundle at `/`.
pub fn router(svc: Arc<StudyService>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/studies", post(create_study))
        .route("/studies/{id}", get(get_study))
        .route("/studies/{id}/status", post(set_status))
        .route("/studies/{id}/sessions", post(create_session))
        .route("/studies/{id}/report", get(report))
        .route("/studies/{id}/export", get(export))
        .route("/sessions/{id}/next", get(next_item))
        .route("/sessions/{id}/responses", post(submit_response))
        .route("/sessions/{id}/events", post(post_event))
        .route("/audio/{hash}", get(audio))
        .with_state(svc);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}
