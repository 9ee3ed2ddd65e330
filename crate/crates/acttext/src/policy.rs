//! Text-emitting policies behind one contract: observation and instruction
//! in, raw action text out.
//!
//! Three implementations share the contract so the evaluation harness runs
//! unchanged across them:
//!
//! - [`OraclePolicy`] simulates the scripted controller forward and encodes
//!   the plan through the codec — the well-formed upper bound.
//! - [`NearestNeighborPolicy`] memorizes demonstration windows and answers
//!   with the stored text of the closest state, optionally pushed through a
//!   corruption model that exercises every parser fallback path.
//! - [`RemotePolicy`] calls a hosted model over the chat-completion wire
//!   format and returns the assistant text verbatim.

use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use image::RgbImage;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{encode_text, quantize, ActionChunk, ActionText, CodecConfig, CodecError};
use crate::prompt::{build_prompt, ImageLayout, PromptBundle, PromptError};
use crate::sim::{Episode, EnvKind, SimEnv};

/// Environment variable consulted for the backend API key when the endpoint
/// config does not carry one explicitly.
pub const API_KEY_ENV: &str = "ACTTEXT_API_KEY";

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("request timed out")]
    Timeout,
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed response envelope: {0}")]
    MalformedResponse(String),
    #[error("backend returned HTTP {0}")]
    HttpStatus(u16),
    #[error("bad observation: {0}")]
    BadObservation(String),
    #[error("no demonstrations to fit")]
    EmptyDemos,
    #[error("episode {index} has {got}-dim states, fitted on {expected}")]
    StateDimMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("no demonstration is long enough for a horizon-{horizon} window")]
    NoWindows { horizon: usize },
    #[error("probability {name} must be in [0, 1], got {value}")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// What a policy sees each step.
#[derive(Debug, Clone)]
pub struct Observation {
    pub state: Vec<f64>,
    pub images: Option<Vec<RgbImage>>,
    pub timestep: u64,
}

impl Observation {
    pub fn new(state: Vec<f64>, timestep: u64) -> Self {
        Self {
            state,
            images: None,
            timestep,
        }
    }

    pub fn with_images(mut self, images: Vec<RgbImage>) -> Self {
        self.images = Some(images);
        self
    }
}

/// Raw model text plus how long producing it took.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub raw_text: String,
    pub latency_ms: f64,
}

/// The uniform policy contract the harness drives.
///
/// The returned text is *intended* to parse as `H * D` integers; nothing
/// guarantees it does — the downstream parser is the safety net.
pub trait Policy: Send {
    fn act(&mut self, obs: &Observation, instruction: &str) -> Result<PolicyOutput, PolicyError>;
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1000.0
}

// ---------------------------------------------------------------------------
// Oracle
// ---------------------------------------------------------------------------

/// Simulates the scripted controller `H` steps ahead from the observation
/// and emits the quantized plan as text.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    kind: EnvKind,
    codec: CodecConfig,
}

impl OraclePolicy {
    pub fn new(kind: EnvKind, codec: CodecConfig) -> Self {
        Self { kind, codec }
    }
}

impl Policy for OraclePolicy {
    fn act(&mut self, obs: &Observation, _instruction: &str) -> Result<PolicyOutput, PolicyError> {
        let start = Instant::now();
        if obs.state.len() != self.kind.state_dims() {
            return Err(PolicyError::BadObservation(format!(
                "expected {}-dim state for {}, got {}",
                self.kind.state_dims(),
                self.kind.name(),
                obs.state.len()
            )));
        }
        let plan = SimEnv::plan_from_observation(self.kind, &obs.state, self.codec.horizon);
        let chunk = ActionChunk::from_rows(&plan)?;
        let text = encode_text(&quantize(&chunk, &self.codec)?);
        Ok(PolicyOutput {
            raw_text: text.into_string(),
            latency_ms: elapsed_ms(start),
        })
    }
}

// ---------------------------------------------------------------------------
// Nearest neighbor
// ---------------------------------------------------------------------------

/// Immutable lookup table built by [`nn_fit`]: demonstration states paired
/// with the encoded text of the following `H` actions, plus the resolution
/// the text was encoded at.
#[derive(Debug, Clone)]
pub struct FittedNeighbors {
    entries: Vec<(Vec<f64>, ActionText)>,
    state_dims: usize,
    resolution: u32,
}

impl FittedNeighbors {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Nearest stored entry by Euclidean distance on the state vector.
    /// Exact ties go to the lowest stored index.
    pub fn lookup(&self, state: &[f64]) -> Result<&ActionText, PolicyError> {
        if state.len() != self.state_dims {
            return Err(PolicyError::StateDimMismatch {
                index: 0,
                expected: self.state_dims,
                got: state.len(),
            });
        }
        if state.iter().any(|x| !x.is_finite()) {
            return Err(PolicyError::BadObservation(
                "state contains a non-finite value".to_string(),
            ));
        }
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for (i, (key, _)) in self.entries.iter().enumerate() {
            let dist: f64 = key
                .iter()
                .zip(state)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if dist < best_dist {
                best_dist = dist;
                best = i;
            }
        }
        Ok(&self.entries[best].1)
    }
}

/// Memorize every horizon-length window of every demonstration.
///
/// Episodes shorter than the horizon contribute nothing; fitting fails only
/// if no window exists at all.
pub fn nn_fit(demos: &[Episode], cfg: &CodecConfig) -> Result<FittedNeighbors, PolicyError> {
    if demos.is_empty() {
        return Err(PolicyError::EmptyDemos);
    }
    let state_dims = demos[0]
        .steps
        .first()
        .map(|s| s.state.len())
        .ok_or(PolicyError::EmptyDemos)?;
    let mut entries = Vec::new();
    for (index, episode) in demos.iter().enumerate() {
        for step in &episode.steps {
            if step.state.len() != state_dims {
                return Err(PolicyError::StateDimMismatch {
                    index,
                    expected: state_dims,
                    got: step.state.len(),
                });
            }
        }
        if episode.steps.len() < cfg.horizon {
            continue;
        }
        for start in 0..=episode.steps.len() - cfg.horizon {
            let rows: Vec<Vec<f64>> = episode.steps[start..start + cfg.horizon]
                .iter()
                .map(|s| s.action.clone())
                .collect();
            let chunk = ActionChunk::from_rows(&rows)?;
            let text = encode_text(&quantize(&chunk, cfg)?);
            entries.push((episode.steps[start].state.clone(), text));
        }
    }
    if entries.is_empty() {
        return Err(PolicyError::NoWindows {
            horizon: cfg.horizon,
        });
    }
    Ok(FittedNeighbors {
        entries,
        state_dims,
        resolution: cfg.resolution,
    })
}

/// Output corruption knobs for exercising the parser fallback paths.
///
/// With all probabilities zero the policy output is byte-identical to the
/// uncorrupted lookup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub drop_token_prob: f64,
    pub perturb_digit_prob: f64,
    pub garbage_prob: f64,
    pub seed: u64,
}

impl CorruptionConfig {
    pub fn none(seed: u64) -> Self {
        Self {
            drop_token_prob: 0.0,
            perturb_digit_prob: 0.0,
            garbage_prob: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        for (name, value) in [
            ("drop_token_prob", self.drop_token_prob),
            ("perturb_digit_prob", self.perturb_digit_prob),
            ("garbage_prob", self.garbage_prob),
        ] {
            if !(0.0..=1.0).contains(&value) || !value.is_finite() {
                return Err(PolicyError::InvalidProbability { name, value });
            }
        }
        Ok(())
    }
}

/// Replies every garbage entry is guaranteed to fail the parser: either no
/// tokens at all or at least one non-numeric token.
const GARBAGE_REPLIES: &[&str] = &[
    "I cannot determine the next actions from this image.",
    "",
    "error: no action available",
    "[[[",
    "NaN NaN NaN",
];

fn corrupt(text: &str, cfg: &CorruptionConfig, resolution: u32, rng: &mut ChaCha8Rng) -> String {
    if rng.random::<f64>() < cfg.garbage_prob {
        return GARBAGE_REPLIES[rng.random_range(0..GARBAGE_REPLIES.len())].to_string();
    }
    let limit = u64::from(resolution);
    let mut kept: Vec<String> = Vec::new();
    for token in text.split_whitespace() {
        if rng.random::<f64>() < cfg.drop_token_prob {
            continue;
        }
        // Each digit is independently replaced by a uniformly random one.
        // A replacement that would push the token past the resolution is
        // discarded: the noise stays in-range instead of collapsing into
        // one-sided clamping at the top of the integer grid.
        let mut digits: Vec<u8> = token.bytes().collect();
        if digits.iter().all(|b| b.is_ascii_digit()) {
            for i in 0..digits.len() {
                if rng.random::<f64>() < cfg.perturb_digit_prob {
                    let candidate = b'0' + rng.random_range(0..10u8);
                    let previous = digits[i];
                    digits[i] = candidate;
                    if token_value(&digits) > limit {
                        digits[i] = previous;
                    }
                }
            }
        }
        kept.push(String::from_utf8(digits).expect("ascii digits"));
    }
    kept.join(" ")
}

fn token_value(digits: &[u8]) -> u64 {
    let mut value: u64 = 0;
    for &b in digits {
        value = value.saturating_mul(10).saturating_add(u64::from(b - b'0'));
    }
    value
}

/// Nearest-neighbor imitation with an optional corruption model: the
/// desk-scale stand-in for a fine-tuned text model.
pub struct NearestNeighborPolicy {
    fitted: Arc<FittedNeighbors>,
    corruption: CorruptionConfig,
    rng: ChaCha8Rng,
}

impl NearestNeighborPolicy {
    pub fn new(fitted: Arc<FittedNeighbors>, corruption: CorruptionConfig) -> Result<Self, PolicyError> {
        corruption.validate()?;
        Ok(Self {
            fitted,
            corruption,
            rng: ChaCha8Rng::seed_from_u64(corruption.seed),
        })
    }
}

impl Policy for NearestNeighborPolicy {
    fn act(&mut self, obs: &Observation, _instruction: &str) -> Result<PolicyOutput, PolicyError> {
        let start = Instant::now();
        let text = self.fitted.lookup(&obs.state)?.as_str().to_string();
        let raw_text = corrupt(&text, &self.corruption, self.fitted.resolution, &mut self.rng);
        Ok(PolicyOutput {
            raw_text,
            latency_ms: elapsed_ms(start),
        })
    }
}

// ---------------------------------------------------------------------------
// Remote chat-completion client
// ---------------------------------------------------------------------------

/// Where and how to reach the hosted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteEndpointConfig {
    pub base_url: String,
    pub model: String,
    pub timeout_ms: u64,
    /// Cap on generated tokens; omitted from the request when `None`.
    pub max_tokens: Option<u32>,
    /// Sampling temperature. The default is greedy decoding (0.0).
    pub temperature: f64,
    /// Explicit key; falls back to [`API_KEY_ENV`] when `None`.
    pub api_key: Option<String>,
}

impl RemoteEndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, timeout_ms: u64) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            timeout_ms,
            max_tokens: None,
            temperature: 0.0,
            api_key: None,
        }
    }

    /// Full chat-completions URL: the base is used verbatim when it already
    /// names the endpoint, otherwise `/v1/chat/completions` is appended.
    pub fn completions_url(&self) -> String {
        let trimmed = self.base_url.trim_end_matches('/');
        if trimmed.ends_with("/chat/completions") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/v1/chat/completions")
        }
    }

    fn resolve_api_key(&self) -> Option<String> {
        self.api_key
            .clone()
            .or_else(|| std::env::var(API_KEY_ENV).ok())
            .filter(|k| !k.is_empty())
    }
}

/// Encode an image as a base64 PNG payload (no data-URL prefix).
pub fn image_to_png_base64(img: &RgbImage) -> String {
    let mut bytes: Vec<u8> = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .expect("in-memory png encode cannot fail");
    BASE64.encode(&bytes)
}

/// Build the chat-completion request body: system prompt in the system
/// role; instruction plus images (as base64 data URLs) in the user role.
pub fn chat_request_body(
    model: &str,
    bundle: &PromptBundle,
    max_tokens: Option<u32>,
    temperature: f64,
) -> serde_json::Value {
    chat_request_body_from_parts(
        model,
        &bundle.system_prompt,
        &bundle.instruction,
        &bundle
            .images
            .iter()
            .map(image_to_png_base64)
            .collect::<Vec<_>>(),
        max_tokens,
        temperature,
    )
}

/// Same as [`chat_request_body`] for callers that already hold base64 PNGs.
pub fn chat_request_body_from_parts(
    model: &str,
    system_prompt: &str,
    instruction: &str,
    images_base64: &[String],
    max_tokens: Option<u32>,
    temperature: f64,
) -> serde_json::Value {
    let mut content = vec![serde_json::json!({ "type": "text", "text": instruction })];
    for b64 in images_base64 {
        content.push(serde_json::json!({
            "type": "image_url",
            "image_url": { "url": format!("data:image/png;base64,{b64}") }
        }));
    }
    let mut body = serde_json::json!({
        "model": model,
        "messages": [
            { "role": "system", "content": system_prompt },
            { "role": "user", "content": content },
        ],
        "temperature": temperature,
    });
    if let Some(cap) = max_tokens {
        body["max_tokens"] = serde_json::json!(cap);
    }
    body
}

/// Pull the assistant text out of a chat-completion response envelope.
pub fn extract_response_text(value: &serde_json::Value) -> Result<String, PolicyError> {
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| {
            PolicyError::MalformedResponse("missing choices[0].message.content".to_string())
        })
}

/// Blocking chat-completion client with per-request latency measurement.
///
/// Multiple requests may be in flight from different threads; each is
/// independently timed.
#[derive(Debug, Clone)]
pub struct RemoteClient {
    http: reqwest::blocking::Client,
    endpoint: RemoteEndpointConfig,
}

impl RemoteClient {
    pub fn new(endpoint: RemoteEndpointConfig) -> Result<Self, PolicyError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .build()
            .map_err(|e| PolicyError::Transport(e.to_string()))?;
        Ok(Self { http, endpoint })
    }

    pub fn endpoint(&self) -> &RemoteEndpointConfig {
        &self.endpoint
    }

    /// Send one chat-completion request and return the assistant text
    /// verbatim with the measured round-trip latency.
    pub fn complete(&self, body: &serde_json::Value) -> Result<PolicyOutput, PolicyError> {
        let start = Instant::now();
        let mut request = self.http.post(self.endpoint.completions_url()).json(body);
        if let Some(key) = self.endpoint.resolve_api_key() {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(classify_reqwest_error)?;
        let status = response.status();
        if !status.is_success() {
            return Err(PolicyError::HttpStatus(status.as_u16()));
        }
        let value: serde_json::Value = response.json().map_err(|e| {
            if e.is_timeout() {
                PolicyError::Timeout
            } else {
                PolicyError::MalformedResponse(e.to_string())
            }
        })?;
        let raw_text = extract_response_text(&value)?;
        Ok(PolicyOutput {
            raw_text,
            latency_ms: elapsed_ms(start),
        })
    }
}

/// Cheap startup probe: TCP connect to the endpoint's host and port.
pub fn check_backend_reachable(endpoint: &RemoteEndpointConfig) -> Result<(), PolicyError> {
    use std::net::ToSocketAddrs;

    let url = reqwest::Url::parse(&endpoint.base_url)
        .map_err(|e| PolicyError::Transport(format!("bad backend url: {e}")))?;
    let host = url
        .host_str()
        .ok_or_else(|| PolicyError::Transport("backend url has no host".to_string()))?;
    let port = url
        .port_or_known_default()
        .ok_or_else(|| PolicyError::Transport("backend url has no port".to_string()))?;
    let timeout = Duration::from_millis(endpoint.timeout_ms.clamp(100, 2_000));
    let addrs = (host, port)
        .to_socket_addrs()
        .map_err(|e| PolicyError::BackendUnavailable(e.to_string()))?;
    let mut last_error = None;
    for addr in addrs {
        match std::net::TcpStream::connect_timeout(&addr, timeout) {
            Ok(_) => return Ok(()),
            Err(e) => last_error = Some(e),
        }
    }
    Err(PolicyError::BackendUnavailable(
        last_error
            .map(|e| e.to_string())
            .unwrap_or_else(|| "backend url resolved to no addresses".to_string()),
    ))
}

fn classify_reqwest_error(e: reqwest::Error) -> PolicyError {
    if e.is_timeout() {
        PolicyError::Timeout
    } else if e.is_connect() {
        PolicyError::BackendUnavailable(e.to_string())
    } else {
        PolicyError::Transport(e.to_string())
    }
}

/// Remote policy: builds the prompt bundle from the observation's images
/// and forwards through [`RemoteClient`].
pub struct RemotePolicy {
    client: RemoteClient,
    codec: CodecConfig,
    layout: ImageLayout,
}

impl RemotePolicy {
    pub fn new(endpoint: RemoteEndpointConfig, codec: CodecConfig, layout: ImageLayout) -> Result<Self, PolicyError> {
        Ok(Self {
            client: RemoteClient::new(endpoint)?,
            codec,
            layout,
        })
    }
}

impl Policy for RemotePolicy {
    fn act(&mut self, obs: &Observation, instruction: &str) -> Result<PolicyOutput, PolicyError> {
        let images = obs
            .images
            .clone()
            .filter(|imgs| !imgs.is_empty())
            .ok_or_else(|| {
                PolicyError::BadObservation("remote policy requires at least one image".to_string())
            })?;
        let bundle = build_prompt(&self.codec, instruction, images, self.layout)?;
        let body = chat_request_body(
            &self.client.endpoint.model,
            &bundle,
            self.client.endpoint.max_tokens,
            self.client.endpoint.temperature,
        );
        self.client.complete(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{dequantize, parse_text};
    use crate::sim::{generate_demos, DemoStep};

    fn pointmass_codec(horizon: usize, resolution: u32) -> CodecConfig {
        CodecConfig::new(horizon, 2, resolution, EnvKind::PointMass.default_bounds()).unwrap()
    }

    #[test]
    fn oracle_output_always_parses_unclamped() {
        let codec = pointmass_codec(8, 1000);
        let mut policy = OraclePolicy::new(EnvKind::PointMass, codec.clone());
        for seed in 0..20 {
            let env = SimEnv::new(EnvKind::PointMass, seed);
            let obs = Observation::new(env.observe(), 0);
            let out = policy.act(&obs, "move to the goal marker").unwrap();
            let q = parse_text(&out.raw_text, &codec).unwrap();
            assert!(!q.clamped(), "seed {seed}");
            assert!(out.latency_ms >= 0.0);
        }
    }

    #[test]
    fn oracle_rejects_wrong_state_dims() {
        let mut policy = OraclePolicy::new(EnvKind::PointMass, pointmass_codec(4, 1000));
        let err = policy.act(&Observation::new(vec![0.0], 0), "x").unwrap_err();
        assert!(matches!(err, PolicyError::BadObservation(_)));
    }

    #[test]
    fn nn_returns_stored_text_for_stored_state() {
        let codec = pointmass_codec(4, 1000);
        let demos = generate_demos(EnvKind::PointMass, 3, 5).unwrap();
        let fitted = Arc::new(nn_fit(&demos, &codec).unwrap());
        let mut policy =
            NearestNeighborPolicy::new(fitted.clone(), CorruptionConfig::none(0)).unwrap();

        let query = demos[0].steps[0].state.clone();
        let out = policy.act(&Observation::new(query.clone(), 0), "x").unwrap();
        assert_eq!(out.raw_text, fitted.lookup(&query).unwrap().as_str());
    }

    #[test]
    fn nn_tie_break_prefers_lowest_index() {
        let mk_episode = |action: f64| Episode {
            env: "pointmass".to_string(),
            dims: 2,
            seed: 0,
            instruction: "x".to_string(),
            steps: vec![
                DemoStep {
                    state: vec![0.5, 0.5, 0.5, 0.5],
                    action: vec![action, action],
                };
                2
            ],
        };
        let codec = pointmass_codec(2, 1000);
        // two entries with identical states but different stored texts
        let fitted = nn_fit(&[mk_episode(0.01), mk_episode(-0.02)], &codec).unwrap();
        let first = fitted.lookup(&[0.5, 0.5, 0.5, 0.5]).unwrap();
        let expected = {
            let chunk = ActionChunk::from_rows(&vec![vec![0.01, 0.01]; 2]).unwrap();
            encode_text(&quantize(&chunk, &codec).unwrap())
        };
        assert_eq!(first.as_str(), expected.as_str());
    }

    #[test]
    fn nn_near_query_recovers_demo_actions_within_codec_tolerance() {
        let codec = pointmass_codec(4, 1000);
        let demos = generate_demos(EnvKind::PointMass, 1, 8).unwrap();
        let fitted = Arc::new(nn_fit(&demos, &codec).unwrap());
        let mut policy = NearestNeighborPolicy::new(fitted, CorruptionConfig::none(0)).unwrap();

        let mut query = demos[0].steps[0].state.clone();
        query[0] += 1e-9;
        let out = policy.act(&Observation::new(query, 0), "x").unwrap();
        let q = parse_text(&out.raw_text, &codec).unwrap();
        let decoded = dequantize(&q, &codec).unwrap();
        // codec tolerance: half a grid step of the 0.1-wide bounds
        let tol = 0.1 / (2.0 * 1000.0);
        for (t, step) in demos[0].steps[..4].iter().enumerate() {
            for d in 0..2 {
                assert!((decoded.row(t)[d] - step.action[d]).abs() <= tol);
            }
        }
    }

    #[test]
    fn nn_fit_errors() {
        let codec = pointmass_codec(4, 1000);
        assert!(matches!(nn_fit(&[], &codec), Err(PolicyError::EmptyDemos)));

        let short = Episode {
            env: "pointmass".to_string(),
            dims: 2,
            seed: 0,
            instruction: "x".to_string(),
            steps: vec![
                DemoStep {
                    state: vec![0.0; 4],
                    action: vec![0.0; 2],
                };
                2
            ],
        };
        assert!(matches!(
            nn_fit(&[short], &codec),
            Err(PolicyError::NoWindows { horizon: 4 })
        ));
    }

    #[test]
    fn zero_corruption_is_byte_identical() {
        let codec = pointmass_codec(4, 1000);
        let demos = generate_demos(EnvKind::PointMass, 2, 3).unwrap();
        let fitted = Arc::new(nn_fit(&demos, &codec).unwrap());
        let query = demos[1].steps[0].state.clone();

        let mut clean =
            NearestNeighborPolicy::new(fitted.clone(), CorruptionConfig::none(9)).unwrap();
        let expected = fitted.lookup(&query).unwrap().as_str().to_string();
        for t in 0..5 {
            let out = clean.act(&Observation::new(query.clone(), t), "x").unwrap();
            assert_eq!(out.raw_text, expected);
        }
    }

    #[test]
    fn garbage_corruption_always_fails_the_parser() {
        let codec = pointmass_codec(4, 1000);
        let demos = generate_demos(EnvKind::PointMass, 2, 3).unwrap();
        let fitted = Arc::new(nn_fit(&demos, &codec).unwrap());
        let corruption = CorruptionConfig {
            garbage_prob: 1.0,
            ..CorruptionConfig::none(4)
        };
        let mut policy = NearestNeighborPolicy::new(fitted, corruption).unwrap();
        let query = demos[0].steps[0].state.clone();
        for t in 0..20 {
            let out = policy.act(&Observation::new(query.clone(), t), "x").unwrap();
            assert!(parse_text(&out.raw_text, &codec).is_err(), "step {t}: {:?}", out.raw_text);
        }
    }

    #[test]
    fn dropped_tokens_break_the_count() {
        let codec = pointmass_codec(4, 1000);
        let demos = generate_demos(EnvKind::PointMass, 2, 3).unwrap();
        let fitted = Arc::new(nn_fit(&demos, &codec).unwrap());
        let corruption = CorruptionConfig {
            drop_token_prob: 1.0,
            ..CorruptionConfig::none(4)
        };
        let mut policy = NearestNeighborPolicy::new(fitted, corruption).unwrap();
        let out = policy
            .act(&Observation::new(demos[0].steps[0].state.clone(), 0), "x")
            .unwrap();
        assert!(matches!(
            parse_text(&out.raw_text, &codec),
            Err(crate::codec::ParseError::EmptyOutput)
        ));
    }

    #[test]
    fn corruption_sequences_are_reproducible() {
        let codec = pointmass_codec(4, 1000);
        let demos = generate_demos(EnvKind::PointMass, 2, 3).unwrap();
        let fitted = Arc::new(nn_fit(&demos, &codec).unwrap());
        let corruption = CorruptionConfig {
            drop_token_prob: 0.2,
            perturb_digit_prob: 0.2,
            garbage_prob: 0.1,
            seed: 31,
        };
        let run = |fitted: Arc<FittedNeighbors>| {
            let mut policy = NearestNeighborPolicy::new(fitted, corruption).unwrap();
            (0..10)
                .map(|t| {
                    policy
                        .act(&Observation::new(demos[0].steps[0].state.clone(), t), "x")
                        .unwrap()
                        .raw_text
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(fitted.clone()), run(fitted));
    }

    #[test]
    fn perturbed_digits_still_parse() {
        let codec = pointmass_codec(4, 1000);
        let demos = generate_demos(EnvKind::PointMass, 2, 3).unwrap();
        let fitted = Arc::new(nn_fit(&demos, &codec).unwrap());
        let corruption = CorruptionConfig {
            perturb_digit_prob: 0.5,
            ..CorruptionConfig::none(12)
        };
        let mut policy = NearestNeighborPolicy::new(fitted, corruption).unwrap();
        for t in 0..20 {
            let out = policy
                .act(&Observation::new(demos[0].steps[0].state.clone(), t), "x")
                .unwrap();
            parse_text(&out.raw_text, &codec).unwrap();
        }
    }

    #[test]
    fn request_body_carries_roles_and_data_urls() {
        let codec = pointmass_codec(2, 500);
        let img = RgbImage::from_pixel(4, 4, image::Rgb([1, 2, 3]));
        let bundle = build_prompt(&codec, "push the block", vec![img], ImageLayout::Separate).unwrap();
        let body = chat_request_body("test-model", &bundle, Some(64), 0.0);

        assert_eq!(body["model"], "test-model");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][0]["content"], bundle.system_prompt.as_str());
        assert_eq!(body["messages"][1]["role"], "user");
        assert_eq!(body["messages"][1]["content"][0]["type"], "text");
        assert_eq!(body["messages"][1]["content"][0]["text"], "push the block");
        let url = body["messages"][1]["content"][1]["image_url"]["url"]
            .as_str()
            .unwrap();
        assert!(url.starts_with("data:image/png;base64,"));
        assert_eq!(body["max_tokens"], 64);
        assert_eq!(body["temperature"], 0.0);
    }

    #[test]
    fn response_text_extraction() {
        let ok = serde_json::json!({
            "choices": [{ "message": { "role": "assistant", "content": "0 0 0" } }]
        });
        assert_eq!(extract_response_text(&ok).unwrap(), "0 0 0");

        for bad in [
            serde_json::json!({}),
            serde_json::json!({ "choices": [] }),
            serde_json::json!({ "choices": [{ "message": { "content": 7 } }] }),
        ] {
            assert!(matches!(
                extract_response_text(&bad),
                Err(PolicyError::MalformedResponse(_))
            ));
        }
    }

    #[test]
    fn completions_url_handling() {
        let mut cfg = RemoteEndpointConfig::new("http://localhost:9000", "m", 100);
        assert_eq!(cfg.completions_url(), "http://localhost:9000/v1/chat/completions");
        cfg.base_url = "http://localhost:9000/v1/chat/completions".to_string();
        assert_eq!(cfg.completions_url(), "http://localhost:9000/v1/chat/completions");
        cfg.base_url = "http://localhost:9000/".to_string();
        assert_eq!(cfg.completions_url(), "http://localhost:9000/v1/chat/completions");
    }

    // Minimal scripted HTTP responder for exercising the blocking client
    // without the full stub server.
    fn spawn_http_responder(
        body: &'static str,
        delay: Duration,
        raw_override: Option<&'static str>,
    ) -> std::net::SocketAddr {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = std::io::BufReader::new(stream.try_clone().unwrap());
                let mut content_length = 0usize;
                loop {
                    let mut line = String::new();
                    use std::io::BufRead;
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        content_length = v.trim().parse().unwrap_or(0);
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut req_body = vec![0u8; content_length];
                use std::io::Read;
                let _ = reader.read_exact(&mut req_body);
                std::thread::sleep(delay);
                use std::io::Write;
                let response = raw_override.map(str::to_string).unwrap_or_else(|| {
                    format!(
                        "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{}",
                        body.len(),
                        body
                    )
                });
                let _ = stream.write_all(response.as_bytes());
            }
        });
        addr
    }

    fn policy_for(addr: std::net::SocketAddr, timeout_ms: u64) -> RemotePolicy {
        let endpoint = RemoteEndpointConfig::new(format!("http://{addr}"), "m", timeout_ms);
        RemotePolicy::new(endpoint, pointmass_codec(1, 10), ImageLayout::Separate).unwrap()
    }

    fn image_obs() -> Observation {
        Observation::new(vec![0.0; 4], 0)
            .with_images(vec![RgbImage::from_pixel(2, 2, image::Rgb([0, 0, 0]))])
    }

    #[test]
    fn remote_echoes_backend_text() {
        let addr = spawn_http_responder(
            r#"{"choices":[{"message":{"role":"assistant","content":"0 0 0"}}]}"#,
            Duration::from_millis(20),
            None,
        );
        let mut policy = policy_for(addr, 2_000);
        let out = policy.act(&image_obs(), "go").unwrap();
        assert_eq!(out.raw_text, "0 0 0");
        assert!(out.latency_ms >= 20.0, "latency {} < injected delay", out.latency_ms);
    }

    #[test]
    fn remote_times_out() {
        let addr = spawn_http_responder("{}", Duration::from_millis(500), None);
        let mut policy = policy_for(addr, 50);
        assert!(matches!(policy.act(&image_obs(), "go"), Err(PolicyError::Timeout)));
    }

    #[test]
    fn remote_rejects_non_json() {
        let addr = spawn_http_responder(
            "",
            Duration::ZERO,
            Some("HTTP/1.1 200 OK\r\ncontent-length: 8\r\n\r\nnot json"),
        );
        let mut policy = policy_for(addr, 2_000);
        assert!(matches!(
            policy.act(&image_obs(), "go"),
            Err(PolicyError::MalformedResponse(_))
        ));
    }

    #[test]
    fn remote_reports_http_status() {
        let addr = spawn_http_responder(
            "",
            Duration::ZERO,
            Some("HTTP/1.1 500 Internal Server Error\r\ncontent-length: 0\r\n\r\n"),
        );
        let mut policy = policy_for(addr, 2_000);
        assert!(matches!(
            policy.act(&image_obs(), "go"),
            Err(PolicyError::HttpStatus(500))
        ));
    }

    #[test]
    fn remote_reports_unreachable_backend() {
        // bind and immediately drop to get a port nothing listens on
        let addr = {
            let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
            listener.local_addr().unwrap()
        };
        let mut policy = policy_for(addr, 500);
        assert!(matches!(
            policy.act(&image_obs(), "go"),
            Err(PolicyError::BackendUnavailable(_))
        ));
    }

    #[test]
    fn remote_requires_images() {
        let addr = spawn_http_responder("{}", Duration::ZERO, None);
        let mut policy = policy_for(addr, 500);
        let err = policy.act(&Observation::new(vec![0.0; 4], 0), "go").unwrap_err();
        assert!(matches!(err, PolicyError::BadObservation(_)));
    }
}
