//! JSON-over-HTTP access to augmentation, reward scoring, batch assembly and
//! episode runs. Every response is an envelope carrying the request id and
//! either a `result` or a structured `error`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use augchain::agent::{
    extract_answer, run_episode, EpisodeConfig, EpisodeErrorKind, EpisodeQuery, EpisodeTrace,
    ModelBackend, ScriptedBackend,
};
use augchain::grpo::{assemble_batch, GrpoConfig, RolloutGroup, TrainingRecord};
use augchain::parser::{extract_call_with, ParserConfig};
use augchain::rewards::{score_trace, Judge, RewardBreakdown, RewardConfig, RewardError};
use augchain::{apply_op, AugmentationOp, ExecLimits, ImageBuffer, Vocabulary};
use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{CliConfig, ConfigError};
use crate::exit::BindError;
use crate::refs::{backend_from_ref, judge_from_ref};

pub const API_VERSION: u32 = 1;
pub const SECRET_HEADER: &str = "x-augchain-secret";
pub const REQUEST_ID_HEADER: &str = "x-request-id";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub request_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

/// A PNG image, base64-encoded, as it crosses the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireImage {
    pub png_base64: String,
}

impl WireImage {
    pub fn encode(image: &ImageBuffer) -> Self {
        Self {
            png_base64: base64::engine::general_purpose::STANDARD.encode(image.encode_png()),
        }
    }

    pub fn decode(&self) -> Result<ImageBuffer, Failure> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&self.png_base64)
            .map_err(|e| Failure::bad("image_undecodable", format!("base64: {e}")))?;
        ImageBuffer::decode(&bytes).map_err(|e| Failure::bad("image_undecodable", e.to_string()))
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct AugmentRequest {
    pub image: WireImage,
    /// Typed op; give this or `call`.
    #[serde(default)]
    pub op: Option<AugmentationOp>,
    /// Call text such as `rotate(image_path, degrees=90)`.
    #[serde(default)]
    pub call: Option<String>,
    /// Full-resolution original for resize-up recall; defaults to `image`.
    #[serde(default)]
    pub original: Option<WireImage>,
    #[serde(default)]
    pub limits: Option<ExecLimits>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentResult {
    pub image: WireImage,
    pub width: u32,
    pub height: u32,
    pub sha256: String,
    pub op: AugmentationOp,
}

#[derive(Debug, Clone, Deserialize)]
pub struct RewardsRequest {
    pub trace: EpisodeTrace,
    pub ground_truth: String,
    #[serde(default)]
    pub config: Option<RewardConfig>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct GrpoRequest {
    pub groups: Vec<RolloutGroup>,
    #[serde(default)]
    pub config: Option<GrpoConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoResult {
    pub records: Vec<TrainingRecord>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EpisodeBackend {
    /// The backend the service was started with.
    #[default]
    Default,
    Scripted { spans: Vec<String> },
}

#[derive(Debug, Clone, Deserialize)]
pub struct EpisodeRequest {
    pub image: WireImage,
    pub question: String,
    #[serde(default)]
    pub original: Option<WireImage>,
    #[serde(default)]
    pub backend: EpisodeBackend,
    #[serde(default)]
    pub config: Option<EpisodeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub answer: String,
    pub trace: EpisodeTrace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub api_version: u32,
}

/// A request that could not be served.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub status: StatusCode,
    pub error: ApiError,
}

impl Failure {
    fn new(status: StatusCode, code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            status,
            error: ApiError {
                code: code.into(),
                message: message.into(),
                detail: None,
            },
        }
    }

    fn bad(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn unprocessable(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }
}

pub struct ServiceState {
    pub config: CliConfig,
    judge: Arc<dyn Judge>,
    backend: Arc<dyn ModelBackend>,
    counter: AtomicU64,
    epoch: u64,
}

impl ServiceState {
    pub fn new(config: CliConfig) -> Result<Self, ConfigError> {
        let judge = judge_from_ref(&config.service.judge, &config.judge)?;
        let backend = backend_from_ref(&config.service.backend, &config.backend)?;
        Ok(Self::with_parts(config, judge, backend))
    }

    pub fn with_parts(config: CliConfig, judge: Arc<dyn Judge>, backend: Arc<dyn ModelBackend>) -> Self {
        let epoch = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Self {
            config,
            judge,
            backend,
            counter: AtomicU64::new(0),
            epoch,
        }
    }

    fn next_request_id(&self) -> String {
        format!("req-{:x}-{}", self.epoch, self.counter.fetch_add(1, Ordering::Relaxed))
    }

    fn authorized(&self, headers: &HeaderMap) -> bool {
        match &self.config.service.secret {
            None => true,
            Some(secret) => headers
                .get(SECRET_HEADER)
                .is_some_and(|v| constant_time_eq(v.as_bytes(), secret.as_bytes())),
        }
    }

    pub fn augment(&self, req: AugmentRequest) -> Result<AugmentResult, Failure> {
        let limits = req.limits.unwrap_or(self.config.episode.limits);
        let op = match (req.op, req.call) {
            (Some(op), None) => op,
            (None, Some(call)) => {
                let parser = ParserConfig {
                    vocabulary: Vocabulary::all(),
                    limits,
                };
                extract_call_with(&call, &parser)
                    .map_err(|e| Failure::unprocessable(e.code.as_str(), e.message))?
                    .op
            }
            _ => return Err(Failure::bad("bad_request", "give exactly one of `op` and `call`")),
        };
        let image = req.image.decode()?;
        let original = match &req.original {
            Some(o) => o.decode()?,
            None => image.clone(),
        };
        let out = apply_op(&image, &op, &original, &limits);
        match out.image() {
            Some(img) => Ok(AugmentResult {
                image: WireImage::encode(img),
                width: img.width(),
                height: img.height(),
                sha256: img.digest(),
                op,
            }),
            None => {
                let e = out.error().expect("outcome holds an image or an error");
                Err(Failure::unprocessable(e.code(), e.to_string()))
            }
        }
    }

    pub fn rewards(&self, req: RewardsRequest) -> Result<RewardBreakdown, Failure> {
        let config = req.config.unwrap_or(self.config.rewards);
        score_trace(&req.trace, &req.ground_truth, self.judge.as_ref(), &config).map_err(|e| match &e {
            RewardError::Judge(_) => Failure::new(StatusCode::SERVICE_UNAVAILABLE, e.code(), e.to_string()),
            RewardError::ConfigInvalid(_) => Failure::bad(e.code(), e.to_string()),
        })
    }

    pub fn grpo(&self, req: GrpoRequest) -> Result<GrpoResult, Failure> {
        let config = req.config.unwrap_or(self.config.grpo);
        assemble_batch(&req.groups, &config)
            .map(|records| GrpoResult { records })
            .map_err(|e| Failure::unprocessable(e.code(), e.to_string()))
    }

    pub fn episode(&self, req: EpisodeRequest) -> Result<EpisodeResult, Failure> {
        let config = req.config.unwrap_or_else(|| self.config.episode.clone());
        let mut query = EpisodeQuery::new(req.image.decode()?, req.question);
        if let Some(o) = &req.original {
            query = query.with_original(o.decode()?);
        }
        let scripted;
        let backend: &dyn ModelBackend = match req.backend {
            EpisodeBackend::Default => self.backend.as_ref(),
            EpisodeBackend::Scripted { spans } => {
                scripted = ScriptedBackend::new(spans);
                &scripted
            }
        };
        match run_episode(backend, &query, &config) {
            Ok(trace) => Ok(EpisodeResult {
                answer: extract_answer(&trace.final_answer),
                trace,
            }),
            Err(e) => {
                let (status, code) = match e.kind {
                    EpisodeErrorKind::BackendUnavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "backend_unavailable"),
                    EpisodeErrorKind::ImageUndecodable(_) => (StatusCode::BAD_REQUEST, "image_undecodable"),
                    EpisodeErrorKind::ConfigInvalid(_) => (StatusCode::BAD_REQUEST, "config_invalid"),
                };
                let mut f = Failure::new(status, code, e.kind.to_string());
                f.error.detail = e
                    .partial
                    .and_then(|p| serde_json::to_value(&*p).ok())
                    .map(|t| serde_json::json!({ "partial_trace": t }));
                Err(f)
            }
        }
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn respond<T: Serialize>(request_id: String, outcome: Result<T, Failure>) -> Response {
    match outcome {
        Ok(result) => (
            StatusCode::OK,
            Json(Envelope {
                request_id,
                result: Some(result),
                error: None,
            }),
        )
            .into_response(),
        Err(f) => (
            f.status,
            Json(Envelope::<()> {
                request_id,
                result: None,
                error: Some(f.error),
            }),
        )
            .into_response(),
    }
}

/// Shared front half of every POST handler: auth, body limit, JSON parsing
/// and request-id selection, then `work` on a blocking thread.
async fn dispatch<Req, Res>(
    state: Arc<ServiceState>,
    headers: HeaderMap,
    body: Result<Bytes, BytesRejection>,
    work: fn(&ServiceState, Req) -> Result<Res, Failure>,
) -> Response
where
    Req: DeserializeOwned + Send + 'static,
    Res: Serialize + Send + 'static,
{
    let header_id = headers
        .get(REQUEST_ID_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    if !state.authorized(&headers) {
        let id = header_id.unwrap_or_else(|| state.next_request_id());
        return respond::<()>(
            id,
            Err(Failure::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong shared secret")),
        );
    }
    let body = match body {
        Ok(b) => b,
        Err(rej) => {
            let id = header_id.unwrap_or_else(|| state.next_request_id());
            let code = if rej.status() == StatusCode::PAYLOAD_TOO_LARGE { "payload_too_large" } else { "bad_request" };
            return respond::<()>(id, Err(Failure::new(rej.status(), code, rej.body_text())));
        }
    };
    let value: serde_json::Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => {
            let id = header_id.unwrap_or_else(|| state.next_request_id());
            return respond::<()>(id, Err(Failure::bad("bad_request", format!("invalid JSON: {e}"))));
        }
    };
    let id = header_id
        .or_else(|| value.get("request_id").and_then(|v| v.as_str()).map(str::to_string))
        .unwrap_or_else(|| state.next_request_id());
    let req: Req = match serde_json::from_value(value) {
        Ok(r) => r,
        Err(e) => return respond::<()>(id, Err(Failure::bad("bad_request", e.to_string()))),
    };
    let outcome = tokio::task::spawn_blocking(move || work(&state, req))
        .await
        .unwrap_or_else(|e| Err(Failure::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())));
    respond(id, outcome)
}

async fn health(State(state): State<Arc<ServiceState>>, headers: HeaderMap) -> Response {
    let id = headers
        .get(REQUEST_ID_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
        .unwrap_or_else(|| state.next_request_id());
    respond(
        id,
        Ok(Health {
            status: "ok".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            api_version: API_VERSION,
        }),
    )
}

async fn augment(State(s): State<Arc<ServiceState>>, h: HeaderMap, body: Result<Bytes, BytesRejection>) -> Response {
    dispatch(s, h, body, ServiceState::augment).await
}

async fn rewards(State(s): State<Arc<ServiceState>>, h: HeaderMap, body: Result<Bytes, BytesRejection>) -> Response {
    dispatch(s, h, body, ServiceState::rewards).await
}

async fn grpo_batch(State(s): State<Arc<ServiceState>>, h: HeaderMap, body: Result<Bytes, BytesRejection>) -> Response {
    dispatch(s, h, body, ServiceState::grpo).await
}

async fn episode(State(s): State<Arc<ServiceState>>, h: HeaderMap, body: Result<Bytes, BytesRejection>) -> Response {
    dispatch(s, h, body, ServiceState::episode).await
}

pub fn router(state: Arc<ServiceState>) -> Router {
    let limit = state.config.service.max_body_bytes;
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/augment", post(augment))
        .route("/v1/rewards", post(rewards))
        .route("/v1/grpo/batch", post(grpo_batch))
        .route("/v1/episode", post(episode))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Binds the configured address and serves until the process is stopped.
pub async fn serve(state: Arc<ServiceState>) -> anyhow::Result<()> {
    let addr = state.config.service.bind.clone();
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|source| BindError { addr: addr.clone(), source })?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn secret_comparison() {
        assert!(constant_time_eq(b"abc", b"abc"));
        assert!(!constant_time_eq(b"abc", b"abd"));
        assert!(!constant_time_eq(b"abc", b"ab"));
    }
}
