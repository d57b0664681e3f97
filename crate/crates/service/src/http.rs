use std::convert::Infallible;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use ergoreach_core::Intervention;
use futures_util::stream::{self, Stream};
use serde::de::DeserializeOwned;
use tokio::net::TcpListener;
use tokio::sync::broadcast::error::RecvError;

use crate::error::ServiceError;
use crate::session::{AdvanceRequest, CreateRequest, SessionManager, StreamMessage};

type Shared = Arc<SessionManager>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("invalid request body: {e}")))
}

/// Runs planner work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::State(format!("request aborted: {e}")))?
}

async fn create(State(mgr): State<Shared>, body: Bytes) -> Result<impl IntoResponse, ServiceError> {
    let request: CreateRequest = parse(&body)?;
    let summary = blocking(move || mgr.create(request)).await?;
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn advance(
    State(mgr): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<impl IntoResponse, ServiceError> {
    let request: AdvanceRequest = parse(&body)?;
    Ok(Json(blocking(move || mgr.advance(&id, request)).await?))
}

async fn intervene(
    State(mgr): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<impl IntoResponse, ServiceError> {
    let intervention: Intervention = parse(&body)?;
    Ok(Json(blocking(move || mgr.intervene(&id, intervention)).await?))
}

async fn state(State(mgr): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(mgr.state(&id)?))
}

async fn trace(State(mgr): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(mgr.trace(&id)?))
}

async fn delete(State(mgr): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ServiceError> {
    mgr.delete(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn fixtures(State(mgr): State<Shared>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(mgr.fixture_names()?))
}

fn sse_event(message: &StreamMessage) -> Event {
    let name = match message {
        StreamMessage::Summary { .. } => "summary",
        StreamMessage::Event { .. } => "event",
    };
    Event::default()
        .event(name)
        .data(serde_json::to_string(message).expect("stream messages serialize"))
}

async fn events(
    State(mgr): State<Shared>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ServiceError> {
    let (summary, rx) = mgr.subscribe(&id)?;
    let first = StreamMessage::Summary { state: summary };
    let done = first.is_final();
    let head = stream::once(async move { Ok(sse_event(&first)) });
    // The tail ends after a final message, when the session is dropped, or
    // when this subscriber falls behind the buffer.
    let tail = stream::unfold((rx, done), |(mut rx, done)| async move {
        if done {
            return None;
        }
        match rx.recv().await {
            Ok(message) => {
                let done = message.is_final();
                Some((Ok(sse_event(&message)), (rx, done)))
            }
            Err(RecvError::Lagged(_)) | Err(RecvError::Closed) => None,
        }
    });
    use futures_util::StreamExt;
    Ok(Sse::new(head.chain(tail)).keep_alive(KeepAlive::default()))
}

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/v1/sessions", post(create))
        .route("/v1/sessions/{id}", get(state).delete(delete))
        .route("/v1/sessions/{id}/advance", post(advance))
        .route("/v1/sessions/{id}/intervene", post(intervene))
        .route("/v1/sessions/{id}/events", get(events))
        .route("/v1/sessions/{id}/trace", get(trace))
        .route("/v1/fixtures", get(fixtures))
        .with_state(manager)
}

/// Periodically drops idle sessions.
pub fn spawn_reaper(manager: Arc<SessionManager>, every: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        loop {
            tick.tick().await;
            manager.reap(Instant::now());
        }
    })
}

/// Binds `addr` and serves until the process stops.
pub async fn serve(addr: SocketAddr, manager: Arc<SessionManager>) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    serve_on(listener, manager).await
}

pub async fn serve_on(listener: TcpListener, manager: Arc<SessionManager>) -> std::io::Result<()> {
    serve_until(listener, manager, std::future::pending()).await
}

/// Serves on `listener` until `shutdown` resolves, then lets in-flight
/// requests finish.
pub async fn serve_until<F>(listener: TcpListener, manager: Arc<SessionManager>, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    let reaper = spawn_reaper(manager.clone(), Duration::from_secs(60));
    let result = axum::serve(listener, router(manager))
        .with_graceful_shutdown(shutdown)
        .await;
    reaper.abort();
    result
}
