use super::{ServiceError, SessionManager};
use crate::llm::LlmError;
use crate::rag::{SessionConfig, Stage, StageError};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::sync::Arc;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ErrorBody {
    pub code: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    pub message: String,
}

struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code, stage) = match &self.0 {
            ServiceError::SessionNotFound(_) => (StatusCode::NOT_FOUND, "session_not_found", None),
            ServiceError::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation_error", None),
            ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request", None),
            ServiceError::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage_error", None),
            ServiceError::Pipeline(p) => {
                let status = match (&p.stage, &p.source) {
                    (Stage::Complete, StageError::Llm(LlmError::Remote { .. })) => StatusCode::BAD_GATEWAY,
                    (Stage::Embed, _) => StatusCode::BAD_GATEWAY,
                    _ => StatusCode::INTERNAL_SERVER_ERROR,
                };
                (status, "pipeline_error", Some(p.stage.to_string()))
            }
        };
        let body = ErrorBody {
            code: code.to_string(),
            stage,
            message: self.0.to_string(),
        };
        (status, Json(json!({ "error": body }))).into_response()
    }
}

type Shared = Arc<SessionManager>;

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(ServiceError::BadRequest(format!("worker failed: {e}"))))?
        .map_err(ApiError)
}

#[derive(Deserialize, Default)]
struct CreateBody {
    #[serde(default)]
    config: Option<SessionConfig>,
}

async fn create_session(State(m): State<Shared>, body: Option<Json<CreateBody>>) -> Result<impl IntoResponse, ApiError> {
    let config = body.and_then(|Json(b)| b.config);
    let id = blocking(move || m.create_session(config)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))))
}

#[derive(Deserialize)]
struct MessageBody {
    text: String,
}

async fn post_message(
    State(m): State<Shared>,
    Path(id): Path<String>,
    Json(body): Json<MessageBody>,
) -> Result<impl IntoResponse, ApiError> {
    let r = blocking(move || m.post_message(&id, &body.text)).await?;
    Ok(Json(r))
}

async fn get_entities(State(m): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || m.get_entities(&id)).await?))
}

#[derive(Deserialize)]
struct HistoryQuery {
    limit: Option<usize>,
}

async fn get_history(
    State(m): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<HistoryQuery>,
) -> Result<impl IntoResponse, ApiError> {
    let limit = q.limit.unwrap_or(usize::MAX);
    Ok(Json(blocking(move || m.get_history(&id, limit)).await?))
}

async fn delete_session(State(m): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    blocking(move || m.delete_session(&id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn healthz() -> impl IntoResponse {
    Json(json!({ "status": "ok" }))
}

async fn config(State(m): State<Shared>) -> impl IntoResponse {
    let engine = m.engine();
    Json(json!({
        "defaults": m.defaults(),
        "model": engine.llm.model(),
        "embedding": engine.embedder.config(),
        "knowledge_base": engine.kb.as_ref().map(|kb| kb.report()),
        "persistent": m.store().is_some(),
    }))
}

async fn ui() -> impl IntoResponse {
    axum::response::Html(include_str!("../../resources/ui/index.html"))
}

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/ui", get(ui))
        .route("/ui/", get(ui))
        .route("/healthz", get(healthz))
        .route("/config", get(config))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(delete_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/entities", get(get_entities))
        .route("/sessions/{id}/history", get(get_history))
        .with_state(manager)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(manager: Arc<SessionManager>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(manager)).await
}
