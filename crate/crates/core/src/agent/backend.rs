//! The model-backend contract and the scripted backend used as a test oracle.

use serde::{Deserialize, Serialize};

use super::history::ChatHistory;
use crate::parser::find_stop;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: Option<u32>,
    pub seed: Option<u64>,
}

impl Default for SamplingParams {
    /// Rollout settings used during RL.
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 0.9,
            top_k: Some(50),
            seed: None,
        }
    }
}

impl SamplingParams {
    /// Low-temperature settings for single-attempt evaluation.
    pub fn pass_at_1() -> Self {
        Self {
            temperature: 0.1,
            top_p: 0.8,
            top_k: None,
            seed: None,
        }
    }

    /// Exploratory settings for multi-attempt evaluation.
    pub fn pass_at_k() -> Self {
        Self {
            temperature: 0.7,
            top_p: 0.95,
            top_k: None,
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    /// Ended on a stop string, which is the final suffix of the text.
    Stop,
    /// Hit the token limit.
    Length,
    /// Ended naturally without a stop string.
    EndOfText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSpan {
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct GenerateRequest<'a> {
    pub history: &'a ChatHistory,
    pub stops: &'a [String],
    pub sampling: &'a SamplingParams,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
}

/// Anything that continues a chat history. Implementations must stop at the
/// first stop string and keep it as the final suffix of the returned text, and
/// must tolerate concurrent calls.
pub trait ModelBackend: Send + Sync {
    fn generate(&self, request: &GenerateRequest<'_>) -> Result<GeneratedSpan, BackendError>;
}

impl<B: ModelBackend + ?Sized> ModelBackend for &B {
    fn generate(&self, request: &GenerateRequest<'_>) -> Result<GeneratedSpan, BackendError> {
        (**self).generate(request)
    }
}

impl<B: ModelBackend + ?Sized> ModelBackend for std::sync::Arc<B> {
    fn generate(&self, request: &GenerateRequest<'_>) -> Result<GeneratedSpan, BackendError> {
        (**self).generate(request)
    }
}

/// Cuts `text` just after the earliest stop string.
pub fn truncate_at_stop(text: &str, stops: &[String]) -> (String, FinishReason) {
    match find_stop(text, stops) {
        Some(m) => (text[..m.end(stops)].to_string(), FinishReason::Stop),
        None => (text.to_string(), FinishReason::EndOfText),
    }
}

/// Plays a fixed list of spans. The span served is chosen by how many
/// assistant turns the history already holds, so one instance can drive any
/// number of concurrent episodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedBackend {
    spans: Vec<String>,
}

/// Line separating spans in a script file.
pub const SCRIPT_SEPARATOR: &str = "---";

impl ScriptedBackend {
    pub fn new(spans: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            spans: spans.into_iter().map(Into::into).collect(),
        }
    }

    /// Spans separated by lines consisting of exactly `---`.
    pub fn from_script(text: &str) -> Self {
        let mut spans = Vec::new();
        let mut cur: Vec<&str> = Vec::new();
        for line in text.lines() {
            if line == SCRIPT_SEPARATOR {
                spans.push(cur.join("\n"));
                cur.clear();
            } else {
                cur.push(line);
            }
        }
        if !cur.is_empty() {
            spans.push(cur.join("\n"));
        }
        Self { spans }
    }

    pub fn spans(&self) -> &[String] {
        &self.spans
    }
}

impl ModelBackend for ScriptedBackend {
    fn generate(&self, request: &GenerateRequest<'_>) -> Result<GeneratedSpan, BackendError> {
        let turn = request.history.assistant_turns();
        let span = self.spans.get(turn).ok_or_else(|| {
            BackendError::Unavailable(format!(
                "script exhausted: turn {turn} requested, {} span(s) available",
                self.spans.len()
            ))
        })?;
        let (text, finish_reason) = truncate_at_stop(span, request.stops);
        Ok(GeneratedSpan {
            text,
            finish_reason,
            logprobs: None,
        })
    }
}
