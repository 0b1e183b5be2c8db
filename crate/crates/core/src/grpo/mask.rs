//! Splits a rendered trace into spans that do and do not enter the loss.

use serde::{Deserialize, Serialize};

use super::GrpoError;
use crate::agent::{EpisodeTrace, Message, Role, FORCED_ANSWER_MESSAGE, MESSAGE_END};
use crate::parser::CODE_CLOSE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    /// System prompt, question and role delimiters.
    Prompt,
    /// Text the policy generated.
    Generated,
    /// A runtime-injected instruction such as the forced-answer message.
    Injected,
    /// An `<output>…</output>` block written by the executor.
    ToolOutput,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSpan {
    pub text: String,
    pub kind: SpanKind,
    pub include: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSequence {
    pub spans: Vec<LossSpan>,
}

impl LossSequence {
    /// The full rendered trace.
    pub fn text(&self) -> String {
        self.spans.iter().map(|s| s.text.as_str()).collect()
    }

    /// Characters that enter the loss.
    pub fn included_len(&self) -> usize {
        self.spans
            .iter()
            .filter(|s| s.include)
            .map(|s| s.text.chars().count())
            .sum()
    }

    pub fn excluded(&self) -> impl Iterator<Item = &LossSpan> {
        self.spans.iter().filter(|s| !s.include)
    }

    /// `(start, end, include)` in character offsets of [`Self::text`].
    pub fn char_ranges(&self) -> Vec<(usize, usize, bool)> {
        let mut at = 0;
        self.spans
            .iter()
            .map(|s| {
                let n = s.text.chars().count();
                let r = (at, at + n, s.include);
                at += n;
                r
            })
            .collect()
    }

    fn push(&mut self, text: &str, kind: SpanKind) {
        if text.is_empty() {
            return;
        }
        let include = kind != SpanKind::ToolOutput;
        match self.spans.last_mut() {
            Some(last) if last.kind == kind && kind != SpanKind::ToolOutput => {
                last.text.push_str(text)
            }
            _ => self.spans.push(LossSpan {
                text: text.to_string(),
                kind,
                include,
            }),
        }
    }
}

fn invalid(at: usize, why: &str) -> GrpoError {
    GrpoError::StructureInvalid(format!("message {at}: {why}"))
}

/// Checks the prompt → (assistant, tool)* → answer alternation.
pub fn validate_structure(messages: &[Message]) -> Result<(), GrpoError> {
    let mut i = 0;
    if messages.first().is_some_and(|m| m.role == Role::System) {
        i = 1;
    }
    match messages.get(i) {
        Some(m) if m.role == Role::User => {}
        _ => return Err(invalid(i, "expected the user query")),
    }
    let mut prev = Role::User;
    for (j, m) in messages.iter().enumerate().skip(i + 1) {
        match m.role {
            Role::System => return Err(invalid(j, "system message after the prompt")),
            Role::Assistant if prev == Role::Assistant => {
                return Err(invalid(j, "two assistant messages in a row"))
            }
            Role::ToolOutput => {
                let call = &messages[j - 1];
                if call.role != Role::Assistant || !call.text.ends_with(CODE_CLOSE) {
                    return Err(invalid(j, "tool output not preceded by a code call"));
                }
            }
            Role::User if m.text != FORCED_ANSWER_MESSAGE || prev == Role::User => {
                return Err(invalid(j, "unexpected user message"))
            }
            _ => {}
        }
        prev = m.role;
    }
    Ok(())
}

/// Every `<output>` block becomes an excluded span; everything else is kept.
pub fn build_loss_sequence(trace: &EpisodeTrace) -> Result<LossSequence, GrpoError> {
    let messages = trace.history.messages();
    validate_structure(messages)?;
    let first_assistant = trace.history.completion_start();
    let mut seq = LossSequence::default();
    for (j, m) in messages.iter().enumerate() {
        let body_kind = match m.role {
            Role::System => SpanKind::Prompt,
            Role::User if j < first_assistant => SpanKind::Prompt,
            Role::User => SpanKind::Injected,
            Role::Assistant => SpanKind::Generated,
            Role::ToolOutput => SpanKind::ToolOutput,
        };
        let frame = if body_kind == SpanKind::Generated || body_kind == SpanKind::ToolOutput {
            SpanKind::Prompt
        } else {
            body_kind
        };
        seq.push(m.role.header(), frame);
        seq.push(&m.body(), body_kind);
        seq.push(MESSAGE_END, frame);
    }
    Ok(seq)
}
