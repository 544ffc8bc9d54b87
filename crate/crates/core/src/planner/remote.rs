//! HTTP back-ends. One multipart POST per call carrying `model`, `prompt`
//! and an `image` PNG; planners answer with text, editors with image bytes.
//! The [`Transport`] seam lets recorded fixtures stand in for the network.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::level::SemanticLevel;
use crate::raster::RasterImage;

use super::parse::{parse_planner_response, parse_selection, ParseError};
use super::prompts::{EditVariation, PromptSet};
use super::{ElementCandidate, PlannerError, PlannerResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Plan,
    Edit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteRequest {
    pub kind: RequestKind,
    pub model: String,
    pub prompt: String,
    pub image_png: Vec<u8>,
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("request failed: {0}")]
    Request(String),
    #[error("fixture exhausted after {0} exchanges")]
    FixtureExhausted(usize),
    #[error("fixture expected a {expected:?} request, got {got:?}")]
    FixtureMismatch { expected: RequestKind, got: RequestKind },
    #[error("fixture prompt mismatch at exchange {0}")]
    FixturePrompt(usize),
    #[error("reading fixture: {0}")]
    FixtureLoad(String),
}

/// Sends one request and returns the raw response body.
pub trait Transport: Send + Sync {
    fn send(&self, request: &RemoteRequest) -> Result<Vec<u8>, TransportError>;
}

/// Where and how to reach the remote services. Model names are opaque.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub plan_path: String,
    pub edit_path: String,
    /// Name of the environment variable holding a bearer token.
    pub auth_token_env: Option<String>,
    pub planner_model: String,
    pub editor_model: String,
    pub timeout_secs: u64,
    /// Extra attempts after an unparseable reply.
    pub parse_retries: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8600".into(),
            plan_path: "/v1/plan".into(),
            edit_path: "/v1/edit".into(),
            auth_token_env: None,
            planner_model: "planner".into(),
            editor_model: "editor".into(),
            timeout_secs: 120,
            parse_retries: 2,
        }
    }
}

pub const ENV_BASE_URL: &str = "SUBTRACT_ENDPOINT_URL";
pub const ENV_TOKEN_VAR: &str = "SUBTRACT_AUTH_TOKEN_ENV";
pub const ENV_PLANNER_MODEL: &str = "SUBTRACT_PLANNER_MODEL";
pub const ENV_EDITOR_MODEL: &str = "SUBTRACT_EDITOR_MODEL";
pub const ENV_TIMEOUT: &str = "SUBTRACT_TIMEOUT_SECS";

impl EndpointConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PlannerError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| PlannerError::Config(format!("{}: {e}", path.as_ref().display())))?;
        serde_json::from_str(&text).map_err(|e| PlannerError::Config(e.to_string()))
    }

    /// Applies overrides from the `SUBTRACT_*` environment variables.
    pub fn with_env_overrides(self) -> Result<Self, PlannerError> {
        self.with_overrides(|k| std::env::var(k).ok())
    }

    pub fn with_overrides(mut self, get: impl Fn(&str) -> Option<String>) -> Result<Self, PlannerError> {
        if let Some(v) = get(ENV_BASE_URL) {
            self.base_url = v;
        }
        if let Some(v) = get(ENV_TOKEN_VAR) {
            self.auth_token_env = Some(v);
        }
        if let Some(v) = get(ENV_PLANNER_MODEL) {
            self.planner_model = v;
        }
        if let Some(v) = get(ENV_EDITOR_MODEL) {
            self.editor_model = v;
        }
        if let Some(v) = get(ENV_TIMEOUT) {
            self.timeout_secs =
                v.parse().map_err(|_| PlannerError::Config(format!("{ENV_TIMEOUT} must be an integer, got {v:?}")))?;
        }
        Ok(self)
    }

    pub fn url(&self, kind: RequestKind) -> String {
        let path = match kind {
            RequestKind::Plan => &self.plan_path,
            RequestKind::Edit => &self.edit_path,
        };
        format!("{}{}", self.base_url.trim_end_matches('/'), path)
    }
}

/// Blocking HTTP transport. The client is built per request on the calling
/// thread: a blocking client owns a runtime and must never be dropped from
/// async code, which a long-lived one inside a server eventually would be.
pub struct HttpTransport {
    config: EndpointConfig,
}

impl HttpTransport {
    pub fn new(config: EndpointConfig) -> Result<Self, TransportError> {
        if !(config.base_url.starts_with("http://") || config.base_url.starts_with("https://")) {
            return Err(TransportError::Request(format!("base_url must be http(s), got {:?}", config.base_url)));
        }
        Ok(Self { config })
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &RemoteRequest) -> Result<Vec<u8>, TransportError> {
        let image = reqwest::blocking::multipart::Part::bytes(request.image_png.clone())
            .file_name("image.png")
            .mime_str("image/png")
            .map_err(|e| TransportError::Request(e.to_string()))?;
        let form = reqwest::blocking::multipart::Form::new()
            .text("model", request.model.clone())
            .text("prompt", request.prompt.clone())
            .part("image", image);
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(self.config.timeout_secs))
            .build()
            .map_err(|e| TransportError::Request(e.to_string()))?;
        let mut builder = client.post(self.config.url(request.kind)).multipart(form);
        if let Some(token) = self.config.auth_token_env.as_deref().and_then(|k| std::env::var(k).ok()) {
            builder = builder.bearer_auth(token);
        }
        let response = builder.send().map_err(|e| TransportError::Request(e.to_string()))?;
        let status = response.status();
        let body = response.bytes().map_err(|e| TransportError::Request(e.to_string()))?;
        if !status.is_success() {
            let snippet: String = String::from_utf8_lossy(&body).chars().take(200).collect();
            return Err(TransportError::Status { status: status.as_u16(), body: snippet });
        }
        Ok(body.to_vec())
    }
}

/// One recorded exchange. Text bodies go in `body`, binary ones in
/// `body_base64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureExchange {
    pub kind: RequestKind,
    /// When present, the replayed request's prompt must equal it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default = "ok_status")]
    pub status: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_base64: Option<String>,
}

fn ok_status() -> u16 {
    200
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Fixture {
    pub exchanges: Vec<FixtureExchange>,
}

/// Replays recorded exchanges in order and keeps every request it saw.
pub struct FixtureTransport {
    queue: Mutex<VecDeque<FixtureExchange>>,
    served: Mutex<Vec<RemoteRequest>>,
}

impl FixtureTransport {
    pub fn new(fixture: Fixture) -> Self {
        Self { queue: Mutex::new(fixture.exchanges.into()), served: Mutex::new(Vec::new()) }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TransportError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| TransportError::FixtureLoad(format!("{}: {e}", path.as_ref().display())))?;
        let fixture: Fixture = serde_json::from_str(&text).map_err(|e| TransportError::FixtureLoad(e.to_string()))?;
        Ok(Self::new(fixture))
    }

    pub fn requests(&self) -> Vec<RemoteRequest> {
        self.served.lock().expect("fixture lock").clone()
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("fixture lock").len()
    }
}

impl Transport for FixtureTransport {
    fn send(&self, request: &RemoteRequest) -> Result<Vec<u8>, TransportError> {
        let mut served = self.served.lock().expect("fixture lock");
        let index = served.len();
        served.push(request.clone());
        let ex = self.queue.lock().expect("fixture lock").pop_front().ok_or(TransportError::FixtureExhausted(index))?;
        if ex.kind != request.kind {
            return Err(TransportError::FixtureMismatch { expected: ex.kind, got: request.kind });
        }
        if ex.prompt.as_ref().is_some_and(|p| p != &request.prompt) {
            return Err(TransportError::FixturePrompt(index));
        }
        let body = match (&ex.body, &ex.body_base64) {
            (_, Some(b64)) => base64::engine::general_purpose::STANDARD
                .decode(b64)
                .map_err(|e| TransportError::FixtureLoad(e.to_string()))?,
            (Some(text), None) => text.clone().into_bytes(),
            (None, None) => Vec::new(),
        };
        if !(200..300).contains(&ex.status) {
            let snippet = String::from_utf8_lossy(&body).chars().take(200).collect();
            return Err(TransportError::Status { status: ex.status, body: snippet });
        }
        Ok(body)
    }
}

/// Sends a planner request until `parse` accepts the reply, allowing
/// `cfg.parse_retries` extra attempts. Transport errors are not retried.
fn ask<T>(
    transport: &dyn Transport,
    cfg: &EndpointConfig,
    request: &RemoteRequest,
    parse: impl Fn(&str) -> Result<T, ParseError>,
) -> Result<T, PlannerError> {
    let attempts = cfg.parse_retries + 1;
    let mut last = None;
    for attempt in 0..attempts {
        let body = transport.send(request)?;
        let text = String::from_utf8_lossy(&body);
        match parse(&text) {
            Ok(v) => return Ok(v),
            Err(e) => {
                tracing::warn!(attempt, error = %e, "unparseable planner reply");
                last = Some(e);
            }
        }
    }
    Err(PlannerError::MalformedReplies { attempts, last: last.expect("at least one attempt") })
}

/// Enumerates candidates at `level`, indexed in reply order.
pub fn remote_plan(
    transport: &dyn Transport,
    cfg: &EndpointConfig,
    prompts: &PromptSet,
    image: &RasterImage,
    level: SemanticLevel,
) -> Result<(PlannerResponse, Vec<ElementCandidate>), PlannerError> {
    let request = RemoteRequest {
        kind: RequestKind::Plan,
        model: cfg.planner_model.clone(),
        prompt: prompts.enumerate(level)?,
        image_png: image.encode_png(),
    };
    let response = ask(transport, cfg, &request, parse_planner_response)?;
    let candidates = response.candidates();
    Ok((response, candidates))
}

/// Asks the planner to pick one of `candidates`. A reply naming an index
/// that was not offered counts as unparseable.
pub fn remote_select(
    transport: &dyn Transport,
    cfg: &EndpointConfig,
    prompts: &PromptSet,
    image: &RasterImage,
    level: SemanticLevel,
    candidates: &[ElementCandidate],
) -> Result<ElementCandidate, PlannerError> {
    let request = RemoteRequest {
        kind: RequestKind::Plan,
        model: cfg.planner_model.clone(),
        prompt: prompts.select(level, candidates)?,
        image_png: image.encode_png(),
    };
    ask(transport, cfg, &request, |text| {
        let picked = parse_selection(text)?;
        candidates.iter().find(|c| c.index == picked.index).cloned().ok_or(ParseError::UnknownIndex(picked.index))
    })
}

/// Requests one inpainted candidate. Replies at another resolution are
/// resampled to the input's dimensions.
pub fn remote_edit(
    transport: &dyn Transport,
    cfg: &EndpointConfig,
    prompts: &PromptSet,
    image: &RasterImage,
    object: &str,
    variation: EditVariation,
) -> Result<RasterImage, PlannerError> {
    let request = RemoteRequest {
        kind: RequestKind::Edit,
        model: cfg.editor_model.clone(),
        prompt: prompts.inpaint(variation, object)?,
        image_png: image.encode_png(),
    };
    let body = transport.send(&request)?;
    let decoded = RasterImage::decode(&body).map_err(PlannerError::Decode)?;
    if decoded.dims() == image.dims() {
        return Ok(decoded);
    }
    tracing::debug!(from = ?decoded.dims(), to = ?image.dims(), "resampling edited image");
    Ok(decoded.resized(image.width(), image.height()).map_err(PlannerError::Decode)?.quantized())
}
