//! HTTP front end for [`adaptcha_core::service::Service`].
//!
//! Every error body is `{"code": ..., "message": ...}`. Service calls take
//! short per-session locks and may write the journal, so they run on the
//! blocking pool.

use std::future::Future;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use adaptcha_core::analysis::Verdict;
use adaptcha_core::nonce::{ChallengeId, SessionId};
use adaptcha_core::service::{
    ChallengePayload, Modality, Service, ServiceError, SessionState, SubmitRequest, PGM_MEDIA_TYPE,
    WAV_MEDIA_TYPE,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
            },
        }
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "unprocessable", message)
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match e {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Gone(_) => StatusCode::GONE,
            ServiceError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Config(_) | ServiceError::Internal(_) => {
                log::error!("request failed: {e}");
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::unprocessable(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::unprocessable(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Serialize)]
struct SubmitBody {
    verdict: Verdict,
    state: SessionState,
    #[serde(skip_serializing_if = "Option::is_none")]
    next_challenge: Option<ChallengePayload>,
}

#[derive(Debug, Deserialize)]
struct ChallengeQuery {
    #[serde(default)]
    modality: Option<String>,
}

/// Unparseable ids cannot name an existing resource.
fn session_id(raw: &str) -> ApiResult<SessionId> {
    raw.parse().map_err(|_| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("session {raw} not found"),
        )
    })
}

fn challenge_id(raw: &str) -> ApiResult<ChallengeId> {
    raw.parse().map_err(|_| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("challenge {raw} not found"),
        )
    })
}

async fn blocking<T, F>(service: Arc<Service>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&service))
        .await
        .map_err(|e| ApiError::from(ServiceError::Internal(e.to_string())))?
        .map_err(ApiError::from)
}

async fn healthz(State(service): State<Arc<Service>>) -> impl IntoResponse {
    Json(service.health())
}

async fn create_session(State(service): State<Arc<Service>>) -> ApiResult<impl IntoResponse> {
    let view = blocking(service, |s| s.create_session()).await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn issue_challenge(
    State(service): State<Arc<Service>>,
    Path(id): Path<String>,
    query: Result<Query<ChallengeQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let sid = session_id(&id)?;
    let modality = match query?.0.modality {
        None => Modality::Grid,
        Some(m) => m.parse::<Modality>().map_err(ApiError::unprocessable)?,
    };
    let payload = blocking(service, move |s| s.issue_challenge(sid, modality)).await?;
    Ok(Json(payload))
}

async fn submit_response(
    State(service): State<Arc<Service>>,
    Path(id): Path<String>,
    body: Result<Json<SubmitRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let sid = session_id(&id)?;
    let Json(req) = body?;
    let outcome = blocking(service, move |s| s.submit_response(sid, req)).await?;
    Ok(Json(SubmitBody {
        verdict: outcome.verdict,
        state: outcome.state,
        next_challenge: outcome.next_challenge,
    }))
}

async fn get_verdict(
    State(service): State<Arc<Service>>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    let sid = session_id(&id)?;
    Ok(Json(service.get_verdict(sid)?))
}

async fn tile(
    State(service): State<Arc<Service>>,
    Path((id, cid, index)): Path<(String, String, String)>,
) -> ApiResult<impl IntoResponse> {
    let (sid, cid) = (session_id(&id)?, challenge_id(&cid)?);
    let index: usize = index.parse().map_err(|_| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("tile {index} not found"),
        )
    })?;
    let bytes = blocking(service, move |s| s.tile_pgm(sid, cid, index)).await?;
    Ok(([(header::CONTENT_TYPE, PGM_MEDIA_TYPE)], bytes))
}

async fn audio(
    State(service): State<Arc<Service>>,
    Path((id, cid)): Path<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    let (sid, cid) = (session_id(&id)?, challenge_id(&cid)?);
    let bytes = blocking(service, move |s| s.audio_wav(sid, cid)).await?;
    Ok(([(header::CONTENT_TYPE, WAV_MEDIA_TYPE)], bytes))
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/v1/healthz", get(healthz))
        .route("/v1/session", post(create_session))
        .route("/v1/session/{id}/challenge", post(issue_challenge))
        .route("/v1/session/{id}/response", post(submit_response))
        .route("/v1/session/{id}/verdict", get(get_verdict))
        .route("/v1/session/{id}/challenge/{cid}/tile/{index}", get(tile))
        .route("/v1/session/{id}/challenge/{cid}/audio", get(audio))
        .fallback(fallback)
        .with_state(service)
}

/// Serves until `shutdown` resolves, then flushes the journal and writes
/// the Q-table snapshot.
pub async fn serve(
    service: Arc<Service>,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    if let Ok(addr) = listener.local_addr() {
        log::info!("listening on {addr}");
    }
    axum::serve(listener, router(service.clone()))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(ServeError::Io)?;
    service.shutdown()?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("server I/O: {0}")]
    Io(std::io::Error),
    #[error(transparent)]
    Service(#[from] ServiceError),
}
