//! HTTP API over the session store.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;

use archdisc_core::engine::EngineConfig;
use archdisc_core::interaction::FeedbackBundle;
use archdisc_core::model::{minilib, parse_model};
use archdisc_core::session::EventRecord;

use crate::sessions::{SessionError, SessionManager};

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Conflict(String),
    Unprocessable(String),
    TooMany(String),
    Internal(String),
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let msg = e.to_string();
        match e {
            SessionError::NotFound(_) => ApiError::NotFound(msg),
            SessionError::NotAwaiting => ApiError::Conflict(msg),
            SessionError::Protocol(_) => ApiError::Unprocessable(msg),
            SessionError::TooMany(_) => ApiError::TooMany(msg),
            SessionError::Engine(archdisc_core::Error::Io { .. }) | SessionError::Io { .. } | SessionError::WorkerGone => {
                ApiError::Internal(msg)
            }
            SessionError::Engine(_) => ApiError::Unprocessable(msg),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, msg) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            ApiError::TooMany(m) => (StatusCode::TOO_MANY_REQUESTS, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(json!({ "error": msg }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed body: {e}")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    /// A model document, or the name of a bundled model.
    model: Value,
    #[serde(default)]
    config: EngineConfig,
}

#[derive(Serialize)]
struct Created {
    id: String,
}

async fn create(State(m): State<Arc<SessionManager>>, body: Bytes) -> ApiResult<(StatusCode, Json<Created>)> {
    let req: CreateRequest = parse_body(&body)?;
    let model = match &req.model {
        Value::String(name) if name == "minilib" => minilib(),
        Value::String(name) => return Err(ApiError::Unprocessable(format!("no bundled model named `{name}`"))),
        Value::Object(_) => {
            let bytes = serde_json::to_vec(&req.model).map_err(|e| ApiError::Internal(e.to_string()))?;
            parse_model(&bytes).map_err(|e| ApiError::Unprocessable(e.to_string()))?
        }
        _ => return Err(ApiError::BadRequest("`model` must be a model document or a bundled model name".into())),
    };
    let session = m.create(model, req.config)?;
    Ok((StatusCode::CREATED, Json(Created { id: session.id().to_string() })))
}

async fn list(State(m): State<Arc<SessionManager>>) -> Response {
    Json(m.list()).into_response()
}

async fn status(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(m.get(&id)?.status()).into_response())
}

async fn candidates(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = m.get(&id)?;
    let set = session.candidates().ok_or_else(|| ApiError::Conflict("session is not awaiting feedback".into()))?;
    Ok(Json(set).into_response())
}

async fn feedback(State(m): State<Arc<SessionManager>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let session = m.get(&id)?;
    // either the bundle itself or {"bundle": ...}
    let mut value: Value = parse_body(&body)?;
    if let Some(inner) = value.as_object_mut().and_then(|o| o.remove("bundle")) {
        value = inner;
    }
    let bundle: FeedbackBundle =
        serde_json::from_value(value).map_err(|e| ApiError::BadRequest(format!("malformed body: {e}")))?;
    let outcome = session.feedback(bundle).await?;
    Ok(Json(outcome).into_response())
}

async fn stop(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = m.get(&id)?;
    Ok(Json(session.stop().await?).into_response())
}

async fn archive(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = m.get(&id)?;
    Ok(Json(session.archive().await?).into_response())
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    since: u64,
    limit: Option<usize>,
}

#[derive(Serialize)]
struct EventPage {
    events: Vec<EventRecord>,
    /// Value of `since` for the next poll.
    next: u64,
}

async fn events(
    State(m): State<Arc<SessionManager>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> ApiResult<Response> {
    let session = m.get(&id)?;
    let limit = q.limit.unwrap_or(1000);
    let events = tokio::task::spawn_blocking(move || session.events(q.since, limit))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    let next = events.last().map_or(q.since, |r| r.seq + 1);
    Ok(Json(EventPage { events, next }).into_response())
}

/// Builds the application. `ui_dir`, when given, is served for every path
/// outside `/api`. `origin` restricts CORS to one origin; any origin is
/// allowed otherwise.
pub fn router(manager: Arc<SessionManager>, ui_dir: Option<PathBuf>, origin: Option<HeaderValue>) -> Router {
    let cors = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    let cors = match origin {
        Some(o) => cors.allow_origin(o),
        None => cors.allow_origin(Any),
    };
    let api = Router::new()
        .route("/api/sessions", post(create).get(list))
        .route("/api/sessions/{id}", get(status))
        .route("/api/sessions/{id}/candidates", get(candidates))
        .route("/api/sessions/{id}/feedback", post(feedback))
        .route("/api/sessions/{id}/stop", post(stop))
        .route("/api/sessions/{id}/archive", get(archive))
        .route("/api/sessions/{id}/events", get(events))
        .with_state(manager);
    let app = match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(cors)
}
