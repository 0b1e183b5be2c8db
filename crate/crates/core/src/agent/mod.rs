//! The inference-time augmentation loop and the backends it drives.

mod backend;
mod episode;
mod history;
mod http;
mod record;

pub use backend::{
    truncate_at_stop, BackendError, FinishReason, GenerateRequest, GeneratedSpan, ModelBackend,
    SamplingParams, ScriptedBackend, SCRIPT_SEPARATOR,
};
pub use episode::{
    extract_answer, run_episode, run_episode_with, CallRecord, DefaultEstimator, EpisodeConfig,
    EpisodeError, EpisodeErrorKind, EpisodeQuery, EpisodeTrace, ExecRecord, Termination,
    TokenEstimator, FORCED_ANSWER_MESSAGE,
};
pub use history::{
    render_history, Attachment, ChatHistory, Message, Role, IMAGE_PLACEHOLDER, MESSAGE_END,
};
pub use http::{parse_response, request_body, HttpBackend, HttpBackendConfig, API_KEY_ENV};
pub use record::{record_id, TraceRecord, TRACE_SCHEMA};
