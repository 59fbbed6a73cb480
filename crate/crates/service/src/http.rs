//! JSON-over-HTTP front end for a [`Registry`].

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::StreamExt;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tracing::info;

use crate::error::{decode_json, ServiceError};
use crate::registry::{CreateRequest, Registry, StoreHandle};

#[derive(Clone)]
pub struct AppState {
    pub registry: Arc<Registry>,
    /// Static bearer token; `None` disables the check.
    pub token: Option<String>,
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/stores", post(create_store).get(list_stores))
        .route("/stores/{id}/ingest", post(ingest))
        .route("/stores/{id}/query", post(query))
        .route("/stores/{id}/nodes/{node}", get(node))
        .route("/stores/{id}/graph/stats", get(stats))
        .route("/stores/{id}/persons", get(persons))
        .route("/stores/{id}/media/{*path}", get(media))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new().route("/healthz", get(healthz)).merge(api).with_state(state)
}

/// Serves until `shutdown` resolves; in-flight requests finish first.
pub async fn serve(
    state: AppState,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    info!(addr = %listener.local_addr()?, data = %state.registry.root().display(), "serving");
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServiceError> {
    TcpListener::bind(addr).await.map_err(|e| ServiceError::Io(format!("bind {addr}: {e}")))
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ServiceError::Unauthorized.into_response();
        }
    }
    next.run(request).await
}

/// Runs blocking store work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
}

async fn open(state: &AppState, id: String) -> Result<Arc<StoreHandle>, ServiceError> {
    let registry = state.registry.clone();
    blocking(move || registry.open(&id)).await
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn list_stores(State(state): State<AppState>) -> Result<Json<serde_json::Value>, ServiceError> {
    Ok(Json(json!({ "stores": state.registry.list()? })))
}

async fn create_store(State(state): State<AppState>, body: Bytes) -> Result<Response, ServiceError> {
    let request: CreateRequest = if body.iter().all(u8::is_ascii_whitespace) {
        CreateRequest::default()
    } else {
        decode_json("store request", &body)?
    };
    let registry = state.registry.clone();
    let handle = blocking(move || registry.create(request)).await?;
    Ok((StatusCode::CREATED, Json(handle.info())).into_response())
}

/// Streams an NDJSON body into the store line by line; the response
/// carries the last committed window even when the upload fails midway.
async fn ingest(State(state): State<AppState>, Path(id): Path<String>, body: Body) -> Result<Response, ServiceError> {
    let handle = open(&state, id).await?;
    let guard = handle.begin_ingest()?;
    let (tx, mut rx) = mpsc::channel::<Result<String, ServiceError>>(64);
    let worker = tokio::task::spawn_blocking(move || guard.run(std::iter::from_fn(move || rx.blocking_recv())));

    let mut chunks = body.into_data_stream();
    let mut buf: Vec<u8> = Vec::new();
    let mut line_no = 0;
    let send_line = |raw: Vec<u8>, line_no: usize| {
        String::from_utf8(raw).map_err(|_| ServiceError::invalid("stream", format!("line {line_no}"), "not valid UTF-8"))
    };
    'read: while let Some(chunk) = chunks.next().await {
        match chunk {
            Ok(bytes) => {
                buf.extend_from_slice(&bytes);
                while let Some(pos) = buf.iter().position(|b| *b == b'\n') {
                    let raw: Vec<u8> = buf.drain(..=pos).collect();
                    line_no += 1;
                    if tx.send(send_line(raw, line_no)).await.is_err() {
                        // the worker stopped on an earlier error
                        break 'read;
                    }
                }
            }
            Err(e) => {
                let _ = tx.send(Err(ServiceError::Io(format!("request body interrupted: {e}")))).await;
                buf.clear();
                break;
            }
        }
    }
    if !buf.is_empty() {
        line_no += 1;
        let _ = tx.send(send_line(std::mem::take(&mut buf), line_no)).await;
    }
    drop(tx);
    let outcome = worker.await.map_err(|e| ServiceError::Internal(format!("ingest worker failed: {e}")))?;
    Ok(match outcome.error {
        None => Json(outcome.summary).into_response(),
        Some(e) => {
            let mut body = e.body();
            body["summary"] = json!(outcome.summary);
            (e.status(), Json(body)).into_response()
        }
    })
}

async fn query(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response, ServiceError> {
    let query: pyramem_core::Query = decode_json("query", &body)?;
    let handle = open(&state, id).await?;
    let result = blocking(move || handle.query(&query)).await?;
    Ok(Json(result).into_response())
}

async fn node(State(state): State<AppState>, Path((id, node)): Path<(String, String)>) -> Result<Response, ServiceError> {
    let handle = open(&state, id).await?;
    Ok(Json(handle.node(&node)?).into_response())
}

async fn stats(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let handle = open(&state, id).await?;
    Ok(Json(handle.stats()).into_response())
}

async fn persons(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let handle = open(&state, id).await?;
    Ok(Json(json!({ "persons": handle.persons() })).into_response())
}

fn content_type(path: &std::path::Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("mp4") => "video/mp4",
        Some("json") => "application/json",
        Some("txt") => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

async fn media(State(state): State<AppState>, Path((id, path)): Path<(String, String)>) -> Result<Response, ServiceError> {
    let handle = open(&state, id).await?;
    let file = handle.media_file(&path)?;
    let bytes = blocking(move || std::fs::read(&file).map(|b| (b, file)).map_err(|e| ServiceError::Io(e.to_string()))).await?;
    Ok(([(header::CONTENT_TYPE, content_type(&bytes.1))], bytes.0).into_response())
}
