use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::future::ready;
use futures::stream::{self, BoxStream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio_stream::wrappers::BroadcastStream;

use super::session::{CreateSession, Mode, SessionEvent, SessionManager, SessionSnapshot, SessionSummary};
use crate::error::Error;

/// Error payload: `{"error": <code>, "message": <text>}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::SessionNotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::Exhausted(_) => (StatusCode::CONFLICT, "exhausted"),
            Error::EmptyPool => (StatusCode::BAD_REQUEST, "empty_pool"),
            Error::UnknownTicker(_) => (StatusCode::BAD_REQUEST, "unknown_ticker"),
            Error::Io { .. } | Error::VersionMismatch { .. } => (StatusCode::BAD_REQUEST, "bad_checkpoint"),
            Error::NonFinite { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            _ => (StatusCode::BAD_REQUEST, "bad_request"),
        };
        ApiError {
            status,
            code,
            message: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "bad_request",
            message: e.body_text(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;
type Shared = Arc<SessionManager>;

/// Body of `POST /sessions/{id}/step`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRequest {
    #[serde(default = "one")]
    pub count: usize,
}

fn one() -> usize {
    1
}

/// Body of `POST /sessions/{id}/pool`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolUpdate {
    #[serde(default)]
    pub add: Vec<String>,
    #[serde(default)]
    pub remove: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct ModeRequest {
    mode: Mode,
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    from: Option<u64>,
    follow: Option<bool>,
}

/// Runs blocking session work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, Error> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        code: "internal",
        message: e.to_string(),
    })?
    .map_err(ApiError::from)
}

async fn universe(State(m): State<Shared>) -> Json<serde_json::Value> {
    let ds = m.dataset();
    Json(json!({
        "tickers": ds.tickers(),
        "splits": ds.manifest.splits.keys().collect::<Vec<_>>(),
    }))
}

async fn create_session(
    State(m): State<Shared>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionSnapshot>), ApiError> {
    let Json(req) = body?;
    let snapshot = blocking(move || {
        let id = m.create(&req)?;
        m.snapshot(&id)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(snapshot)))
}

async fn list_sessions(State(m): State<Shared>) -> Json<Vec<SessionSummary>> {
    Json(m.list())
}

async fn get_session(State(m): State<Shared>, Path(id): Path<String>) -> ApiResult<SessionSnapshot> {
    Ok(Json(m.snapshot(&id)?))
}

async fn close_session(State(m): State<Shared>, Path(id): Path<String>) -> ApiResult<SessionSnapshot> {
    Ok(Json(blocking(move || m.close(&id)).await?))
}

async fn step_session(
    State(m): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<StepRequest>, JsonRejection>,
) -> ApiResult<SessionSnapshot> {
    let Json(req) = body?;
    Ok(Json(blocking(move || m.step(&id, req.count)).await?))
}

async fn update_pool(
    State(m): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<PoolUpdate>, JsonRejection>,
) -> ApiResult<serde_json::Value> {
    let Json(req) = body?;
    let tickers = m.dataset().tickers().to_vec();
    let mask = m.update_pool(&id, &req.add, &req.remove)?;
    let pool: Vec<&String> = mask.selected_slots().into_iter().map(|i| &tickers[i]).collect();
    Ok(Json(json!({"mask": mask.selected(), "pool": pool})))
}

async fn set_mode(
    State(m): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<ModeRequest>, JsonRejection>,
) -> ApiResult<SessionSnapshot> {
    let Json(req) = body?;
    Ok(Json(m.set_mode(&id, req.mode)?))
}

fn to_sse(e: &SessionEvent) -> Result<Event, Infallible> {
    Ok(Event::default()
        .event(e.name())
        .id(e.seq.to_string())
        .data(serde_json::to_string(e).expect("event serializes")))
}

/// Replays events from `?from=` (or after `Last-Event-ID`), then follows live ones
/// unless `?follow=false`. A subscriber that falls too far behind is disconnected
/// rather than shown a gap; it can reconnect with `from`.
async fn events(
    State(m): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<impl IntoResponse, ApiError> {
    let after_last = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(|v| v + 1);
    let from = q.from.or(after_last).unwrap_or(0);
    let (history, rx) = m.with_session(&id, |s| Ok(s.subscribe(from)))?;
    let next = history.last().map_or(from, |e| e.seq + 1);
    let replay = stream::iter(history.iter().map(to_sse).collect::<Vec<_>>());
    let stream: BoxStream<'static, _> = if q.follow.unwrap_or(true) {
        let live = BroadcastStream::new(rx)
            .take_while(|r| ready(r.is_ok()))
            .filter_map(move |r| ready(r.ok().filter(|e| e.seq >= next).map(|e| to_sse(&e))));
        replay.chain(live).boxed()
    } else {
        replay.boxed()
    };
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/universe", get(universe))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session).delete(close_session))
        .route("/sessions/{id}/step", post(step_session))
        .route("/sessions/{id}/pool", post(update_pool))
        .route("/sessions/{id}/mode", post(set_mode))
        .route("/sessions/{id}/events", get(events))
        .with_state(manager)
}

/// Serves the API until the process is stopped.
pub async fn serve(manager: Arc<SessionManager>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("steering service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(manager)).await
}
