//! HTTP surface for the operator console.
//!
//! | route           | body                                                        |
//! |-----------------|-------------------------------------------------------------|
//! | `GET /status`   | engine snapshot, `application/json`                         |
//! | `GET /events`   | `text/event-stream`; one JSON event per message, `id` = seq |
//! | `POST /command` | JSON command, e.g. `{"type":"AckCue","id":3}`               |
//!
//! `/events` takes `?from_seq=N` (or a `Last-Event-ID` header when a client
//! reconnects) and first replays retained events from there.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::future::Future;
use std::net::SocketAddr;

use axum::extract::{Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::Deserialize;
use serde_json::json;

use crate::engine::{Command, CommandError, EngineHandle};
use crate::events::ApiEvent;

pub fn router(handle: EngineHandle) -> Router {
    Router::new()
        .route("/status", get(status))
        .route("/events", get(events))
        .route("/command", post(command))
        .with_state(handle)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    handle: EngineHandle,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(handle))
        .with_graceful_shutdown(shutdown)
        .await
}

pub async fn bind(addr: SocketAddr) -> std::io::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr).await
}

fn error_response(err: &CommandError) -> Response {
    let code = match err {
        CommandError::UnknownCue { .. } => StatusCode::NOT_FOUND,
        CommandError::InvalidPhase { .. } => StatusCode::CONFLICT,
        CommandError::SeedTrace { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        CommandError::EngineUnavailable => StatusCode::SERVICE_UNAVAILABLE,
    };
    let mut body = serde_json::to_value(err).unwrap_or_else(|_| json!({}));
    body["message"] = json!(err.to_string());
    (code, Json(body)).into_response()
}

async fn status(State(handle): State<EngineHandle>) -> Response {
    if !handle.is_running() {
        return error_response(&CommandError::EngineUnavailable);
    }
    Json(handle.snapshot()).into_response()
}

async fn command(State(handle): State<EngineHandle>, Json(cmd): Json<Command>) -> Response {
    match handle.command(cmd).await {
        Ok(result) => Json(json!({ "accepted": true, "result": result })).into_response(),
        Err(e) => error_response(&e),
    }
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    from_seq: Option<u64>,
}

async fn events(
    State(handle): State<EngineHandle>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok())
        .map(|seq| seq + 1);
    let bus = handle.bus().clone();
    // Without a starting point, only new events are sent.
    let from = q.from_seq.or(resume).unwrap_or_else(|| bus.last_seq() + 1);
    let watch = bus.watch();
    let state = (from, watch, VecDeque::<ApiEvent>::new());
    let stream = futures::stream::unfold(state, move |(mut next, mut watch, mut buf)| {
        let bus = bus.clone();
        async move {
            loop {
                if let Some(ev) = buf.pop_front() {
                    next = next.max(ev.seq + 1);
                    let event = Event::default()
                        .id(ev.seq.to_string())
                        .event(format!("{:?}", ev.kind))
                        .json_data(&ev)
                        .unwrap_or_else(|_| Event::default().comment("unserializable event"));
                    return Some((Ok(event), (next, watch, buf)));
                }
                watch.mark_unchanged();
                buf.extend(bus.since(next));
                if buf.is_empty() && watch.changed().await.is_err() {
                    return None;
                }
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}
