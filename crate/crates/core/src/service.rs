//! HTTP API over a running engine. Every handler reads snapshots through an
//! [`EngineHandle`]; nothing here blocks the pipeline.
//!
//! | route | |
//! |---|---|
//! | `POST /queries` | register a query from DSL text, 201 |
//! | `GET /queries` | all registered queries |
//! | `GET /alerts?since=<n>` | alerts from position `n` |
//! | `GET /kg?window=<dur>` | live graph, optionally a trailing window |
//! | `GET /metrics` | counters, fps series, simulated memory |
//! | `POST /interactive` | answer an interactive query |
//! | `POST /interactive/{id}/refine` | narrow an answered query |
//! | `GET /events?since=<n>` | server-sent client events |

use std::convert::Infallible;
use std::net::SocketAddr;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use tokio_stream::wrappers::BroadcastStream;

use crate::engine::{ControlEvent, EngineHandle};
use crate::query::{Alert, InteractiveAnswer, QueryError, UserQuery};
use crate::textfmt::parse_duration_ms;

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

pub struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn bad_request(kind: &str, message: impl Into<String>) -> Self {
        ApiError(
            StatusCode::BAD_REQUEST,
            ErrorBody {
                error: kind.into(),
                message: message.into(),
            },
        )
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        let (status, kind) = match &e {
            QueryError::UnknownParent(_) => (StatusCode::NOT_FOUND, "not_found"),
            QueryError::Parse(_) => (StatusCode::BAD_REQUEST, "parse_error"),
            QueryError::UnknownPredicate(_) | QueryError::UnknownType(_) => (StatusCode::BAD_REQUEST, "schema_error"),
            QueryError::NotAnswered(_) | QueryError::NotInteractive(_) => (StatusCode::BAD_REQUEST, "invalid_state"),
        };
        ApiError(
            status,
            ErrorBody {
                error: kind.into(),
                message: e.to_string(),
            },
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

/// Body of the query-submitting routes.
#[derive(Debug, Serialize, Deserialize)]
pub struct QueryText {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AlertPage {
    pub since: usize,
    /// Cursor for the next request.
    pub next: usize,
    pub alerts: Vec<Alert>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InteractiveReply {
    pub query: UserQuery,
    pub answer: InteractiveAnswer,
}

#[derive(Debug, Deserialize)]
struct SinceParam {
    since: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct WindowParam {
    window: Option<String>,
}

async fn post_query(State(h): State<EngineHandle>, Json(body): Json<QueryText>) -> Result<(StatusCode, Json<UserQuery>), ApiError> {
    let q = h.register_query(&body.text)?;
    Ok((StatusCode::CREATED, Json(q)))
}

async fn list_queries(State(h): State<EngineHandle>) -> Json<Vec<UserQuery>> {
    Json(h.queries())
}

async fn alerts(State(h): State<EngineHandle>, Query(p): Query<SinceParam>) -> Json<AlertPage> {
    let since = p.since.unwrap_or(0) as usize;
    let alerts = h.alerts_since(since);
    Json(AlertPage {
        since,
        next: since + alerts.len(),
        alerts,
    })
}

async fn kg(State(h): State<EngineHandle>, Query(p): Query<WindowParam>) -> Result<Response, ApiError> {
    let window = match p.window.as_deref() {
        None | Some("") => None,
        Some(w) => Some(parse_duration_ms(w).ok_or_else(|| ApiError::bad_request("parse_error", format!("bad window `{w}`")))?),
    };
    Ok(Json(h.kg(window)).into_response())
}

async fn metrics(State(h): State<EngineHandle>) -> Response {
    Json(h.metrics()).into_response()
}

async fn interactive(State(h): State<EngineHandle>, Json(body): Json<QueryText>) -> Result<(StatusCode, Json<InteractiveReply>), ApiError> {
    let (query, answer) = h.interactive(&body.text)?;
    Ok((StatusCode::CREATED, Json(InteractiveReply { query, answer })))
}

async fn refine(
    State(h): State<EngineHandle>,
    Path(id): Path<String>,
    Json(body): Json<QueryText>,
) -> Result<(StatusCode, Json<InteractiveReply>), ApiError> {
    if h.query(&id).is_none() {
        return Err(QueryError::UnknownParent(id).into());
    }
    let (query, answer) = h.refine(&id, &body.text)?;
    Ok((StatusCode::CREATED, Json(InteractiveReply { query, answer })))
}

fn to_sse(ev: &ControlEvent) -> Event {
    Event::default()
        .event(ev.kind.name())
        .id(ev.n.to_string())
        .json_data(ev)
        .expect("events serialize")
}

/// Client events with `n >= since`, then live ones as they are emitted.
pub fn event_stream(h: &EngineHandle, since: u64) -> impl Stream<Item = ControlEvent> + Send + 'static {
    let (from, rx) = h.events().subscribe();
    let replay: Vec<ControlEvent> = h
        .events()
        .since(since)
        .into_iter()
        .filter(|e| e.n < from && e.kind.is_client_facing())
        .collect();
    let live = BroadcastStream::new(rx).filter_map(move |r| async move { r.ok().filter(|e| e.n >= since) });
    stream::iter(replay).chain(live)
}

async fn events(State(h): State<EngineHandle>, Query(p): Query<SinceParam>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let s = event_stream(&h, p.since.unwrap_or(0)).map(|e| Ok(to_sse(&e)));
    Sse::new(s).keep_alive(KeepAlive::default())
}

pub fn router(handle: EngineHandle) -> Router {
    Router::new()
        .route("/queries", post(post_query).get(list_queries))
        .route("/alerts", get(alerts))
        .route("/kg", get(kg))
        .route("/metrics", get(metrics))
        .route("/interactive", post(interactive))
        .route("/interactive/{id}/refine", post(refine))
        .route("/events", get(events))
        .with_state(handle)
}

/// Serves the API until `shutdown` resolves.
pub async fn serve(
    handle: EngineHandle,
    addr: SocketAddr,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "serving");
    axum::serve(listener, router(handle)).with_graceful_shutdown(shutdown).await
}
