//! The action-streaming service: one HTTP call per control timestep.
//!
//! `POST /act` takes an observation (images and/or a state vector), calls
//! the backend model with the fixed system prompt, parses the returned
//! text, pushes the decoded chunk into the session's ensemble buffer, and
//! answers with the ensembled action for the request's timestep. Text that
//! fails to parse never fails the request: the previous action for that
//! session is returned with `parse_ok: false`.
//!
//! Per-session state is serialized by a per-session lock, so requests for
//! one session are processed in timestep order; a request whose timestep
//! does not advance the session is rejected with 409. Sessions are fully
//! independent — nothing is shared between them but the backend client.

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use acttext::codec::{dequantize, parse_text, CodecConfig};
use acttext::ensemble::{EnsembleBuffer, EnsembleConfig};
use acttext::policy::{
    chat_request_body_from_parts, check_backend_reachable, PolicyError, RemoteClient,
    RemoteEndpointConfig,
};
use acttext::prompt::build_system_prompt;

use crate::server::{RunningServer, ServerError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub codec: CodecConfig,
    pub ensemble_n: usize,
    pub backend: RemoteEndpointConfig,
}

/// One control-step request.
///
/// At least one image or a state vector must be present. Images are base64
/// PNGs and are forwarded to the backend unresized as data URLs; a state
/// vector is appended to the user text as a `state: ...` line.
#[derive(Debug, Clone, Deserialize)]
pub struct ActRequest {
    pub session_id: String,
    pub instruction: String,
    #[serde(default)]
    pub images: Vec<String>,
    #[serde(default)]
    pub state: Option<Vec<f64>>,
    pub timestep: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ActResponse {
    pub action: Vec<f64>,
    pub raw_text: String,
    pub parse_ok: bool,
    pub clamped: bool,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ResetRequest {
    pub session_id: String,
}

struct SessionState {
    buffer: EnsembleBuffer,
    last_timestep: Option<u64>,
    last_action: Vec<f64>,
}

struct GatewayState {
    config: GatewayConfig,
    system_prompt: String,
    client: RemoteClient,
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionState>>>>,
}

type ErrorReply = (StatusCode, Json<serde_json::Value>);

fn error_reply(status: StatusCode, message: impl std::fmt::Display) -> ErrorReply {
    (status, Json(serde_json::json!({ "error": message.to_string() })))
}

async fn act(
    State(state): State<Arc<GatewayState>>,
    body: axum::body::Bytes,
) -> Result<Json<ActResponse>, ErrorReply> {
    let req: ActRequest = serde_json::from_slice(&body)
        .map_err(|e| error_reply(StatusCode::BAD_REQUEST, format!("malformed request: {e}")))?;
    if req.session_id.is_empty() {
        return Err(error_reply(StatusCode::BAD_REQUEST, "session_id must not be empty"));
    }
    let instruction = req.instruction.trim();
    if instruction.is_empty() {
        return Err(error_reply(StatusCode::BAD_REQUEST, "instruction must not be empty"));
    }
    if req.images.is_empty() && req.state.is_none() {
        return Err(error_reply(
            StatusCode::BAD_REQUEST,
            "request needs at least one image or a state vector",
        ));
    }

    let session = {
        let mut sessions = state.sessions.lock().await;
        sessions
            .entry(req.session_id.clone())
            .or_insert_with(|| {
                Arc::new(Mutex::new(SessionState {
                    buffer: EnsembleBuffer::new(
                        state.config.ensemble_n,
                        state.config.codec.horizon,
                        state.config.codec.dims,
                    )
                    .expect("config validated at startup"),
                    last_timestep: None,
                    last_action: vec![0.0; state.config.codec.dims],
                }))
            })
            .clone()
    };

    // serializes all requests for this session
    let mut session = session.lock().await;
    if let Some(last) = session.last_timestep {
        if req.timestep <= last {
            return Err(error_reply(
                StatusCode::CONFLICT,
                format!("timestep {} does not advance the session (last {})", req.timestep, last),
            ));
        }
    }

    let mut user_text = instruction.to_string();
    if let Some(state_vec) = &req.state {
        let rendered: Vec<String> = state_vec.iter().map(|v| v.to_string()).collect();
        user_text.push_str("\nstate: ");
        user_text.push_str(&rendered.join(" "));
    }
    let request_body = chat_request_body_from_parts(
        &state.client.endpoint().model,
        &state.system_prompt,
        &user_text,
        &req.images,
        state.client.endpoint().max_tokens,
        state.client.endpoint().temperature,
    );

    let client = state.client.clone();
    let output = tokio::task::spawn_blocking(move || client.complete(&request_body))
        .await
        .map_err(|e| error_reply(StatusCode::INTERNAL_SERVER_ERROR, e))?
        .map_err(|e| match e {
            PolicyError::Timeout
            | PolicyError::BackendUnavailable(_)
            | PolicyError::Transport(_)
            | PolicyError::MalformedResponse(_)
            | PolicyError::HttpStatus(_) => {
                error_reply(StatusCode::SERVICE_UNAVAILABLE, format!("backend: {e}"))
            }
            other => error_reply(StatusCode::INTERNAL_SERVER_ERROR, other),
        })?;

    session.last_timestep = Some(req.timestep);
    let response = match parse_text(&output.raw_text, &state.config.codec) {
        Ok(q) => {
            let clamped = q.clamped();
            let chunk = dequantize(&q, &state.config.codec)
                .expect("parsed chunk always matches the codec shape");
            session
                .buffer
                .push(chunk, req.timestep)
                .expect("timestep monotonicity enforced above");
            let action = session
                .buffer
                .current_action(req.timestep)
                .expect("the chunk just pushed covers its own timestep");
            session.last_action = action.clone();
            ActResponse {
                action,
                raw_text: output.raw_text,
                parse_ok: true,
                clamped,
                latency_ms: output.latency_ms,
            }
        }
        Err(_) => ActResponse {
            action: session.last_action.clone(),
            raw_text: output.raw_text,
            parse_ok: false,
            clamped: false,
            latency_ms: output.latency_ms,
        },
    };
    Ok(Json(response))
}

async fn reset(
    State(state): State<Arc<GatewayState>>,
    body: axum::body::Bytes,
) -> Result<Json<serde_json::Value>, ErrorReply> {
    let req: ResetRequest = serde_json::from_slice(&body)
        .map_err(|e| error_reply(StatusCode::BAD_REQUEST, format!("malformed request: {e}")))?;
    let existed = state.sessions.lock().await.remove(&req.session_id).is_some();
    Ok(Json(serde_json::json!({ "ok": true, "existed": existed })))
}

async fn health() -> impl IntoResponse {
    Json(serde_json::json!({ "ok": true }))
}

pub fn router(config: GatewayConfig) -> Result<Router, ServerError> {
    config
        .codec
        .validate()
        .map_err(|e| ServerError::InvalidConfig(e.to_string()))?;
    EnsembleConfig::new(config.ensemble_n, config.codec.horizon)
        .map_err(|e| ServerError::InvalidConfig(e.to_string()))?;
    let client = RemoteClient::new(config.backend.clone())
        .map_err(|e| ServerError::InvalidConfig(e.to_string()))?;
    let system_prompt = build_system_prompt(
        config.codec.horizon,
        config.codec.dims,
        config.codec.resolution,
    );
    let state = Arc::new(GatewayState {
        config,
        system_prompt,
        client,
        sessions: Mutex::new(HashMap::new()),
    });
    Ok(Router::new()
        .route("/act", post(act))
        .route("/reset", post(reset))
        .route("/health", get(health))
        .with_state(state))
}

/// Health-check the backend, then serve on `bind_addr`.
pub fn serve_gateway(config: GatewayConfig, bind_addr: &str) -> Result<RunningServer, ServerError> {
    check_backend_reachable(&config.backend)
        .map_err(|e| ServerError::BackendUnreachable(e.to_string()))?;
    let app = router(config)?;
    RunningServer::spawn(bind_addr, app)
}
