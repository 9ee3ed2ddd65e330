//! Scripted chat-completion backend for hermetic tests.
//!
//! Speaks just enough of the wire format the remote client sends: replies
//! with the scripted texts in request order, then repeats the last one. An
//! optional per-request delay simulates a slow model. Every request body is
//! recorded and can be fetched from `GET /requests`.

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::sync::Mutex;

use crate::server::{RunningServer, ServerError};

#[derive(Debug, Clone)]
pub struct StubConfig {
    /// Assistant texts replied in order; the last one repeats forever.
    /// An empty script replies with empty strings.
    pub script: Vec<String>,
    pub delay_ms: u64,
}

impl StubConfig {
    pub fn new<S: Into<String>>(script: Vec<S>, delay_ms: u64) -> Self {
        Self {
            script: script.into_iter().map(Into::into).collect(),
            delay_ms,
        }
    }
}

/// Shared handle into a running stub: scripted position and the transcript
/// of received request bodies.
#[derive(Debug)]
pub struct StubHandle {
    config: StubConfig,
    cursor: Mutex<usize>,
    transcript: Mutex<Vec<serde_json::Value>>,
}

impl StubHandle {
    /// Request bodies received so far, in arrival order.
    pub fn transcript(&self) -> Vec<serde_json::Value> {
        self.transcript.blocking_lock().clone()
    }

    pub fn requests_served(&self) -> usize {
        *self.cursor.blocking_lock()
    }
}

async fn completions(
    State(stub): State<Arc<StubHandle>>,
    body: axum::body::Bytes,
) -> impl IntoResponse {
    let value: serde_json::Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => {
            return (
                StatusCode::BAD_REQUEST,
                Json(serde_json::json!({ "error": format!("invalid json: {e}") })),
            );
        }
    };
    let text = {
        let mut cursor = stub.cursor.lock().await;
        stub.transcript.lock().await.push(value);
        let index = *cursor;
        *cursor += 1;
        match stub.config.script.get(index) {
            Some(t) => t.clone(),
            None => stub.config.script.last().cloned().unwrap_or_default(),
        }
    };
    if stub.config.delay_ms > 0 {
        tokio::time::sleep(std::time::Duration::from_millis(stub.config.delay_ms)).await;
    }
    (
        StatusCode::OK,
        Json(serde_json::json!({
            "object": "chat.completion",
            "choices": [
                { "index": 0, "message": { "role": "assistant", "content": text } }
            ]
        })),
    )
}

async fn health() -> impl IntoResponse {
    Json(serde_json::json!({ "ok": true }))
}

async fn requests(State(stub): State<Arc<StubHandle>>) -> impl IntoResponse {
    let transcript = stub.transcript.lock().await.clone();
    Json(serde_json::Value::Array(transcript))
}

pub fn router(handle: Arc<StubHandle>) -> Router {
    Router::new()
        .route("/v1/chat/completions", post(completions))
        .route("/health", get(health))
        .route("/requests", get(requests))
        .with_state(handle)
}

/// Start the stub on `bind_addr` (use port 0 for an ephemeral port).
pub fn serve_stub(
    config: StubConfig,
    bind_addr: &str,
) -> Result<(RunningServer, Arc<StubHandle>), ServerError> {
    let handle = Arc::new(StubHandle {
        config,
        cursor: Mutex::new(0),
        transcript: Mutex::new(Vec::new()),
    });
    let server = RunningServer::spawn(bind_addr, router(handle.clone()))?;
    Ok((server, handle))
}
