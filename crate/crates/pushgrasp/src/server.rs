//! HTTP and WebSocket front end for [`Service`].

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pushgrasp_core::geometry::Point2;
use pushgrasp_core::session::{Direction, SessionError};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast::error::RecvError;

use crate::service::{CreateRequest, Service, ServiceError};

type Shared = Arc<Service>;

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::InvalidScene(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Persist(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ServiceError::Session(e) => match e {
                SessionError::InvalidState { .. } => StatusCode::CONFLICT,
                SessionError::UnknownCandidate(_) => StatusCode::NOT_FOUND,
                SessionError::NoPolicy => StatusCode::SERVICE_UNAVAILABLE,
                SessionError::Perception(_) => StatusCode::UNPROCESSABLE_ENTITY,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
        };
        (status, Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

/// Runs a blocking service call off the async workers.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f).await.expect("service call panicked")
}

#[derive(Deserialize)]
struct Click {
    x: f64,
    y: f64,
}

#[derive(Deserialize)]
struct CandidateRequest {
    #[serde(default = "default_k")]
    k: usize,
}

fn default_k() -> usize {
    4
}

#[derive(Deserialize)]
struct ExecuteRequest {
    candidate_id: u32,
}

#[derive(Deserialize)]
struct ManualRequest {
    direction: Direction,
}

async fn health(State(svc): State<Shared>) -> impl IntoResponse {
    Json(serde_json::json!({ "status": "ok", "policy_loaded": svc.has_policy() }))
}

async fn create(State(svc): State<Shared>, body: Option<Json<CreateRequest>>) -> Result<impl IntoResponse, ServiceError> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    let view = blocking(move || svc.create(req)).await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn view(State(svc): State<Shared>, Path(id): Path<u64>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(blocking(move || svc.view(id)).await?))
}

async fn target(State(svc): State<Shared>, Path(id): Path<u64>, Json(c): Json<Click>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(blocking(move || svc.set_target(id, Point2::new(c.x, c.y))).await?))
}

async fn candidates(
    State(svc): State<Shared>,
    Path(id): Path<u64>,
    body: Option<Json<CandidateRequest>>,
) -> Result<impl IntoResponse, ServiceError> {
    let k = body.map_or(default_k(), |Json(r)| r.k);
    Ok(Json(blocking(move || svc.candidates(id, k)).await?))
}

async fn execute(
    State(svc): State<Shared>,
    Path(id): Path<u64>,
    Json(r): Json<ExecuteRequest>,
) -> Result<impl IntoResponse, ServiceError> {
    let (episode, session) = blocking(move || svc.execute(id, r.candidate_id)).await?;
    Ok(Json(serde_json::json!({ "episode": episode, "session": session })))
}

async fn manual(State(svc): State<Shared>, Path(id): Path<u64>, Json(r): Json<ManualRequest>) -> Result<impl IntoResponse, ServiceError> {
    let (episode, session) = blocking(move || svc.manual(id, r.direction)).await?;
    Ok(Json(serde_json::json!({ "episode": episode, "session": session })))
}

async fn grasp(State(svc): State<Shared>, Path(id): Path<u64>) -> Result<impl IntoResponse, ServiceError> {
    let (episode, session) = blocking(move || svc.grasp(id)).await?;
    Ok(Json(serde_json::json!({ "episode": episode, "session": session })))
}

async fn depth(State(svc): State<Shared>, Path(id): Path<u64>) -> Result<impl IntoResponse, ServiceError> {
    let pgm = blocking(move || svc.depth_pgm(id)).await?;
    Ok(([(header::CONTENT_TYPE, "image/x-portable-graymap")], pgm))
}

async fn clusters(State(svc): State<Shared>, Path(id): Path<u64>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(blocking(move || svc.clusters(id)).await?))
}

async fn stream(State(svc): State<Shared>, Path(id): Path<u64>, ws: WebSocketUpgrade) -> Result<Response, ServiceError> {
    let rx = svc.subscribe(id)?;
    Ok(ws.on_upgrade(move |socket| forward(socket, rx)))
}

async fn forward(mut socket: WebSocket, mut rx: tokio::sync::broadcast::Receiver<pushgrasp_core::session::StreamEvent>) {
    loop {
        match rx.recv().await {
            Ok(ev) => {
                let text = serde_json::to_string(&ev).expect("events serialize");
                if socket.send(Message::Text(text.into())).await.is_err() {
                    return;
                }
            }
            Err(RecvError::Lagged(_)) => continue,
            Err(RecvError::Closed) => return,
        }
    }
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(view))
        .route("/sessions/{id}/target", post(target))
        .route("/sessions/{id}/candidates", post(candidates))
        .route("/sessions/{id}/execute", post(execute))
        .route("/sessions/{id}/manual", post(manual))
        .route("/sessions/{id}/grasp", post(grasp))
        .route("/sessions/{id}/depth", get(depth))
        .route("/sessions/{id}/clusters", get(clusters))
        .route("/sessions/{id}/stream", get(stream))
        .with_state(service)
}

/// Binds `addr` and serves until the future is dropped. Returns the bound
/// address through `bound` before serving (useful with port 0).
pub async fn serve(service: Shared, addr: SocketAddr, bound: impl FnOnce(SocketAddr)) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| anyhow::anyhow!("binding {addr}: {e}"))?;
    bound(listener.local_addr()?);
    axum::serve(listener, router(service)).await?;
    Ok(())
}
