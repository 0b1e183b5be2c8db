//! The closed generate → parse → execute → re-inject loop.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::backend::{BackendError, FinishReason, GenerateRequest, ModelBackend, SamplingParams};
use super::history::{render_history, ChatHistory, Message, Role};
use crate::augment::{
    apply_op_in, AugmentationOp, ExecContext, ExecLimits, ImageBuffer, Vocabulary,
};
use crate::error::{ErrorMessage, ImageError};
use crate::parser::{
    code_body_before, extract_call_with, find_stop, scan_tags, ParseError, ParsedCall,
    ParserConfig, StopKind, ANSWER_CLOSE, CODE_CLOSE, CODE_OPEN,
};

/// Injected as a user turn when the call or context budget runs out.
pub const FORCED_ANSWER_MESSAGE: &str = "OK, I have to give the final answer directly";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    /// K: code calls allowed before the answer is forced.
    pub max_calls: u32,
    pub max_completion_tokens: u32,
    pub max_context_tokens: u32,
    pub sampling: SamplingParams,
    pub system_prompt: Option<String>,
    pub vocabulary: Vocabulary,
    pub limits: ExecLimits,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_calls: 8,
            max_completion_tokens: 3196,
            max_context_tokens: 10240,
            sampling: SamplingParams::default(),
            system_prompt: None,
            vocabulary: Vocabulary::all(),
            limits: ExecLimits::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_calls < 1 {
            return Err("max_calls must be at least 1".into());
        }
        if self.max_completion_tokens == 0 || self.max_context_tokens == 0 {
            return Err("token limits must be positive".into());
        }
        Ok(())
    }

    pub fn parser_config(&self) -> ParserConfig {
        ParserConfig {
            vocabulary: self.vocabulary,
            limits: self.limits,
        }
    }

    pub fn stops(&self) -> Vec<String> {
        vec![CODE_CLOSE.to_string(), ANSWER_CLOSE.to_string()]
    }
}

/// Rough token accounting for context budgeting; the real tokenizer lives
/// in the backend.
pub trait TokenEstimator: Send + Sync {
    fn text_tokens(&self, text: &str) -> u64;
    fn image_tokens(&self, image: &ImageBuffer) -> u64;

    fn message_tokens(&self, message: &Message) -> u64 {
        let text = format!("{}{}", message.role.header(), message.body());
        self.text_tokens(&text)
            + message
                .attachments
                .iter()
                .map(|a| self.image_tokens(&a.image))
                .sum::<u64>()
    }

    fn history_tokens(&self, history: &ChatHistory) -> u64 {
        history
            .messages()
            .iter()
            .map(|m| self.message_tokens(m))
            .sum()
    }
}

/// Four characters per token; one token per 28x28 image patch.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultEstimator;

impl TokenEstimator for DefaultEstimator {
    fn text_tokens(&self, text: &str) -> u64 {
        (text.chars().count() as u64).div_ceil(4)
    }

    fn image_tokens(&self, image: &ImageBuffer) -> u64 {
        (image.width() as u64).div_ceil(28) * (image.height() as u64).div_ceil(28)
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeQuery {
    /// Image the model sees first (generation 0).
    pub image: Arc<ImageBuffer>,
    pub question: String,
    /// Full-resolution source when `image` is a downsampled copy of it.
    pub original: Option<Arc<ImageBuffer>>,
}

impl EpisodeQuery {
    pub fn new(image: ImageBuffer, question: impl Into<String>) -> Self {
        Self {
            image: Arc::new(image),
            question: question.into(),
            original: None,
        }
    }

    pub fn decode(bytes: &[u8], question: impl Into<String>) -> Result<Self, EpisodeError> {
        let image = ImageBuffer::decode(bytes).map_err(|e| EpisodeError::image(&e))?;
        Ok(Self::new(image, question))
    }

    pub fn with_original(mut self, original: ImageBuffer) -> Self {
        self.original = Some(Arc::new(original));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answer,
    Forced,
    ContextExhausted,
}

/// What executing a parsed call produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecRecord {
    pub source_generation: u32,
    /// Generation of the produced image; `None` when execution failed.
    pub output_generation: Option<u32>,
    pub error: Option<ErrorMessage>,
}

/// One `</code>` stop: the parse result and, when executed, its outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    /// Index of the assistant message holding the call.
    pub message_index: usize,
    pub raw_text: String,
    pub parsed: Option<ParsedCall>,
    pub parse_error: Option<ParseError>,
    /// `None` when the call was not executed (parse failure or budget).
    pub exec: Option<ExecRecord>,
}

impl CallRecord {
    pub fn op(&self) -> Option<&AugmentationOp> {
        self.parsed.as_ref().map(|p| &p.op)
    }

    pub fn parse_result(&self) -> Result<&ParsedCall, &ParseError> {
        match (&self.parsed, &self.parse_error) {
            (Some(p), _) => Ok(p),
            (None, Some(e)) => Err(e),
            (None, None) => unreachable!("call record holds a parse result or error"),
        }
    }

    pub fn succeeded(&self) -> bool {
        matches!(&self.exec, Some(e) if e.error.is_none())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub history: ChatHistory,
    pub calls: Vec<CallRecord>,
    pub final_answer: String,
    /// k: number of `</code>` stops in the episode.
    pub call_count: u32,
    pub terminated_by: Termination,
}

impl EpisodeTrace {
    pub fn rendered(&self) -> String {
        render_history(&self.history)
    }

    pub fn question(&self) -> Option<&str> {
        self.history
            .messages()
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.text.as_str())
    }

    pub fn is_forced(&self) -> bool {
        self.terminated_by != Termination::Answer
    }

    pub fn has_parse_error(&self) -> bool {
        self.calls.iter().any(|c| c.parse_error.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EpisodeErrorKind {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("image undecodable: {0}")]
    ImageUndecodable(String),
    #[error("invalid episode config: {0}")]
    ConfigInvalid(String),
}

/// An aborted episode, with whatever trace existed at the time.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind}")]
pub struct EpisodeError {
    pub kind: EpisodeErrorKind,
    pub partial: Option<Box<EpisodeTrace>>,
}

impl EpisodeError {
    fn image(e: &ImageError) -> Self {
        Self {
            kind: EpisodeErrorKind::ImageUndecodable(e.to_string()),
            partial: None,
        }
    }
}

pub fn run_episode(
    backend: &dyn ModelBackend,
    query: &EpisodeQuery,
    config: &EpisodeConfig,
) -> Result<EpisodeTrace, EpisodeError> {
    run_episode_with(backend, query, config, &DefaultEstimator)
}

pub fn run_episode_with(
    backend: &dyn ModelBackend,
    query: &EpisodeQuery,
    config: &EpisodeConfig,
    estimator: &dyn TokenEstimator,
) -> Result<EpisodeTrace, EpisodeError> {
    config.validate().map_err(|e| EpisodeError {
        kind: EpisodeErrorKind::ConfigInvalid(e),
        partial: None,
    })?;
    Episode::new(backend, query, config, estimator).run()
}

struct Episode<'a> {
    backend: &'a dyn ModelBackend,
    config: &'a EpisodeConfig,
    estimator: &'a dyn TokenEstimator,
    parser: ParserConfig,
    stops: Vec<String>,
    original: Arc<ImageBuffer>,
    current: Arc<ImageBuffer>,
    current_generation: u32,
    next_generation: u32,
    full_frame: bool,
    history: ChatHistory,
    calls: Vec<CallRecord>,
    completion_used: u64,
}

impl<'a> Episode<'a> {
    fn new(
        backend: &'a dyn ModelBackend,
        query: &EpisodeQuery,
        config: &'a EpisodeConfig,
        estimator: &'a dyn TokenEstimator,
    ) -> Self {
        let mut history = ChatHistory::new();
        if let Some(sys) = &config.system_prompt {
            history.push(Message::new(Role::System, sys.clone()));
        }
        history.push(
            Message::new(Role::User, query.question.clone()).with_image(0, query.image.clone()),
        );
        Self {
            backend,
            config,
            estimator,
            parser: config.parser_config(),
            stops: config.stops(),
            original: query
                .original
                .clone()
                .unwrap_or_else(|| query.image.clone()),
            current: query.image.clone(),
            current_generation: 0,
            next_generation: 1,
            full_frame: true,
            history,
            calls: Vec::new(),
            completion_used: 0,
        }
    }

    fn forced_tokens(&self) -> u64 {
        self.estimator
            .message_tokens(&Message::new(Role::User, FORCED_ANSWER_MESSAGE))
    }

    fn context_used(&self) -> u64 {
        self.estimator.history_tokens(&self.history)
    }

    fn run(mut self) -> Result<EpisodeTrace, EpisodeError> {
        let max_context = self.config.max_context_tokens as u64;
        let max_completion = self.config.max_completion_tokens as u64;
        loop {
            let used = self.context_used();
            let reserve = self.forced_tokens();
            if self.completion_used >= max_completion || used + reserve >= max_context {
                return self.exhaust(Termination::ContextExhausted);
            }
            let max_tokens =
                (max_completion - self.completion_used).min(max_context - used - reserve);
            let stops = self.stops.clone();
            let span = self.generate(&stops, max_tokens)?;
            self.completion_used += self.estimator.text_tokens(&span.text);
            let text = span.text;
            let stop = find_stop(&text, &self.stops);
            self.history
                .push(Message::new(Role::Assistant, text.clone()));

            match stop.map(|m| (m.kind, m.offset)) {
                Some((StopKind::CodeClose, offset)) => {
                    let k = self.calls.len() as u32 + 1;
                    let body = code_body_before(&text, offset);
                    let parsed = match body {
                        Some(b) => extract_call_with(b, &self.parser),
                        None => Err(missing_open_tag()),
                    };
                    let record = CallRecord {
                        message_index: self.history.len() - 1,
                        raw_text: body.unwrap_or(&text[..offset]).to_string(),
                        parsed: parsed.as_ref().ok().cloned(),
                        parse_error: parsed.as_ref().err().cloned(),
                        exec: None,
                    };
                    self.calls.push(record);
                    if k > self.config.max_calls {
                        return self.exhaust(Termination::Forced);
                    }
                    match parsed {
                        Ok(call) => self.execute(&call),
                        Err(e) => {
                            self.history.push(Message::new(Role::ToolOutput, e.message));
                        }
                    }
                }
                _ if span.finish_reason == FinishReason::Length => {
                    return self.exhaust(Termination::ContextExhausted);
                }
                _ => return Ok(self.finish(Termination::Answer)),
            }
        }
    }

    fn generate(
        &mut self,
        stops: &[String],
        max_tokens: u64,
    ) -> Result<super::backend::GeneratedSpan, EpisodeError> {
        let request = GenerateRequest {
            history: &self.history,
            stops,
            sampling: &self.config.sampling,
            max_tokens: max_tokens.min(u32::MAX as u64) as u32,
        };
        self.backend.generate(&request).map_err(|e| {
            let BackendError::Unavailable(msg) = e;
            EpisodeError {
                kind: EpisodeErrorKind::BackendUnavailable(msg),
                partial: Some(Box::new(self.snapshot(Termination::Answer))),
            }
        })
    }

    fn execute(&mut self, call: &ParsedCall) {
        let ctx = ExecContext {
            original: &self.original,
            full_frame: Some(self.full_frame),
            limits: &self.config.limits,
            source_generation: self.current_generation,
        };
        let outcome = apply_op_in(&self.current, &call.op, &ctx);
        let record = self
            .calls
            .last_mut()
            .expect("call recorded before execution");
        match outcome.result {
            Ok(image) => {
                let generation = self.next_generation;
                self.next_generation += 1;
                record.exec = Some(ExecRecord {
                    source_generation: outcome.source_generation,
                    output_generation: Some(generation),
                    error: None,
                });
                self.full_frame = self.full_frame
                    && matches!(
                        call.op,
                        AugmentationOp::ResizeUp { .. } | AugmentationOp::ResizeDown { .. }
                    );
                self.current = Arc::new(image);
                self.current_generation = generation;
                self.history.push(
                    Message::new(Role::ToolOutput, "").with_image(generation, self.current.clone()),
                );
            }
            Err(err) => {
                let message = err.to_message();
                record.exec = Some(ExecRecord {
                    source_generation: outcome.source_generation,
                    output_generation: None,
                    error: Some(message.clone()),
                });
                self.history
                    .push(Message::new(Role::ToolOutput, message.human_text));
            }
        }
    }

    /// Forces a final answer if the context still has room for one.
    fn exhaust(mut self, reason: Termination) -> Result<EpisodeTrace, EpisodeError> {
        let max_context = self.config.max_context_tokens as u64;
        let used = self.context_used() + self.forced_tokens();
        if used >= max_context {
            return Ok(self.finish_without_answer());
        }
        self.history
            .push(Message::new(Role::User, FORCED_ANSWER_MESSAGE));
        let stops = vec![ANSWER_CLOSE.to_string()];
        let span = self.generate(&stops, max_context - used)?;
        self.completion_used += self.estimator.text_tokens(&span.text);
        self.history.push(Message::new(Role::Assistant, span.text));
        Ok(self.finish(reason))
    }

    fn finish_without_answer(self) -> EpisodeTrace {
        let mut trace = self.snapshot(Termination::ContextExhausted);
        trace.final_answer.clear();
        trace
    }

    fn finish(self, reason: Termination) -> EpisodeTrace {
        self.snapshot(reason)
    }

    fn snapshot(&self, reason: Termination) -> EpisodeTrace {
        let final_answer = self
            .history
            .messages()
            .iter()
            .rev()
            .find(|m| m.role == Role::Assistant)
            .map(|m| extract_answer(&m.text))
            .unwrap_or_default();
        EpisodeTrace {
            history: self.history.clone(),
            calls: self.calls.clone(),
            final_answer,
            call_count: self.calls.len() as u32,
            terminated_by: reason,
        }
    }
}

fn missing_open_tag() -> ParseError {
    ParseError::syntax(format!("missing {CODE_OPEN} before {CODE_CLOSE}"))
}

/// Contents of the answer tag when present, otherwise the trimmed text.
pub fn extract_answer(text: &str) -> String {
    let scan = scan_tags(text);
    if scan.has_answer {
        scan.answer_text.trim().to_string()
    } else {
        text.trim().to_string()
    }
}
