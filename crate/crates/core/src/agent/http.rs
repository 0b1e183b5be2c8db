//! Backend for OpenAI-compatible chat-completion servers (vLLM, TGI, ...).

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::backend::{
    truncate_at_stop, BackendError, FinishReason, GenerateRequest, GeneratedSpan, ModelBackend,
};
use super::history::{ChatHistory, Message, Role};
use crate::parser::{OUTPUT_CLOSE, OUTPUT_OPEN};

/// Environment variable holding the bearer token, if the server needs one.
pub const API_KEY_ENV: &str = "AUGCHAIN_BACKEND_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    /// Base URL, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub model: String,
    pub timeout: Duration,
    pub api_key: Option<String>,
}

impl HttpBackendConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            timeout: Duration::from_secs(300),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        }
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let agent = ureq::Agent::new_with_config(
            ureq::Agent::config_builder()
                .timeout_global(Some(config.timeout))
                .http_status_as_error(false)
                .build(),
        );
        Self { config, agent }
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }
}

fn image_part(att: &super::history::Attachment) -> Value {
    let png = base64::engine::general_purpose::STANDARD.encode(att.image.encode_png());
    json!({"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{png}")}})
}

fn text_part(text: &str) -> Value {
    json!({"type": "text", "text": text})
}

fn message_json(m: &Message) -> Value {
    let role = match m.role {
        Role::System => "system",
        Role::User | Role::ToolOutput => "user",
        Role::Assistant => "assistant",
    };
    if m.attachments.is_empty() {
        return json!({"role": role, "content": m.body()});
    }
    let mut parts = Vec::new();
    if m.role == Role::ToolOutput {
        parts.push(text_part(OUTPUT_OPEN));
    }
    parts.extend(m.attachments.iter().map(image_part));
    let mut tail = m.text.clone();
    if m.role == Role::ToolOutput {
        tail.push_str(OUTPUT_CLOSE);
    }
    if !tail.is_empty() {
        parts.push(text_part(&tail));
    }
    json!({"role": role, "content": parts})
}

/// Request body for one generation call.
pub fn request_body(model: &str, request: &GenerateRequest<'_>) -> Value {
    let messages: Vec<Value> = request
        .history
        .messages()
        .iter()
        .map(message_json)
        .collect();
    let mut body = json!({
        "model": model,
        "messages": messages,
        "stop": request.stops,
        "max_tokens": request.max_tokens,
        "temperature": request.sampling.temperature,
        "top_p": request.sampling.top_p,
        "include_stop_str_in_output": true,
        "skip_special_tokens": false,
    });
    let obj = body.as_object_mut().expect("object literal");
    if let Some(k) = request.sampling.top_k {
        obj.insert("top_k".into(), json!(k));
    }
    if let Some(s) = request.sampling.seed {
        obj.insert("seed".into(), json!(s));
    }
    if ends_with_assistant(request.history) {
        obj.insert("continue_final_message".into(), json!(true));
        obj.insert("add_generation_prompt".into(), json!(false));
    }
    body
}

fn ends_with_assistant(h: &ChatHistory) -> bool {
    h.last().is_some_and(|m| m.role == Role::Assistant)
}

/// Normalises a chat-completion response so the matched stop string is the
/// final suffix. Servers that drop the stop string but report it in
/// `stop_reason` get it re-appended.
pub fn parse_response(body: &Value, stops: &[String]) -> Result<GeneratedSpan, BackendError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::Unavailable("response has no choices".into()))?;
    let mut text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .or_else(|| choice.get("text").and_then(Value::as_str))
        .unwrap_or_default()
        .to_string();
    let finish = choice
        .get("finish_reason")
        .and_then(Value::as_str)
        .unwrap_or("stop");
    if finish == "length" {
        let (t, reason) = truncate_at_stop(&text, stops);
        let reason = if reason == FinishReason::Stop {
            reason
        } else {
            FinishReason::Length
        };
        return Ok(GeneratedSpan {
            text: t,
            finish_reason: reason,
            logprobs: None,
        });
    }
    if let Some(stop) = choice.get("stop_reason").and_then(Value::as_str) {
        if stops.iter().any(|s| s == stop) && !text.ends_with(stop) {
            text.push_str(stop);
        }
    }
    let (text, finish_reason) = truncate_at_stop(&text, stops);
    Ok(GeneratedSpan {
        text,
        finish_reason,
        logprobs: None,
    })
}

impl ModelBackend for HttpBackend {
    fn generate(&self, request: &GenerateRequest<'_>) -> Result<GeneratedSpan, BackendError> {
        let body = request_body(&self.config.model, request);
        let mut req = self.agent.post(self.endpoint());
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Unavailable(format!("status {status}: {e}")))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Unavailable(format!(
                "status {status}: {value}"
            )));
        }
        parse_response(&value, request.stops)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::backend::SamplingParams;
    use crate::augment::{Channels, ImageBuffer};
    use std::sync::Arc;

    fn stops() -> Vec<String> {
        vec!["</code>".into(), "</answer>".into()]
    }

    #[test]
    fn body_carries_stops_and_images() {
        let img = Arc::new(ImageBuffer::filled(2, 2, Channels::Rgb, 7));
        let mut h = ChatHistory::new();
        h.push(Message::new(Role::User, "q").with_image(0, img.clone()));
        h.push(Message::new(Role::Assistant, "<code>edge(i)</code>"));
        h.push(Message::new(Role::ToolOutput, "").with_image(1, img));
        let s = stops();
        let sampling = SamplingParams::default().with_seed(3);
        let req = GenerateRequest {
            history: &h,
            stops: &s,
            sampling: &sampling,
            max_tokens: 64,
        };
        let body = request_body("m", &req);
        assert_eq!(body["stop"], json!(["</code>", "</answer>"]));
        assert_eq!(body["top_k"], json!(50));
        assert_eq!(body["seed"], json!(3));
        assert!(body.get("continue_final_message").is_none());
        let tool = &body["messages"][2]["content"];
        assert_eq!(tool[0]["text"], "<output>");
        assert!(tool[1]["image_url"]["url"]
            .as_str()
            .unwrap()
            .starts_with("data:image/png;base64,"));
        assert_eq!(tool[2]["text"], "</output>");
    }

    #[test]
    fn stop_reason_is_reappended() {
        let body = json!({"choices": [{"message": {"content": "<code>edge(i)"}, "finish_reason": "stop", "stop_reason": "</code>"}]});
        let span = parse_response(&body, &stops()).unwrap();
        assert_eq!(span.text, "<code>edge(i)</code>");
        assert_eq!(span.finish_reason, FinishReason::Stop);
    }

    #[test]
    fn length_and_natural_end() {
        let body = json!({"choices": [{"message": {"content": "abc"}, "finish_reason": "length"}]});
        assert_eq!(
            parse_response(&body, &stops()).unwrap().finish_reason,
            FinishReason::Length
        );
        let body = json!({"choices": [{"message": {"content": "abc"}, "finish_reason": "stop"}]});
        assert_eq!(
            parse_response(&body, &stops()).unwrap().finish_reason,
            FinishReason::EndOfText
        );
        assert!(parse_response(&json!({}), &stops()).is_err());
    }
}
