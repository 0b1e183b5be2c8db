//! Persisted episode records.

use serde::{Deserialize, Serialize};

use super::episode::EpisodeTrace;
use crate::error::ErrorMessage;
use crate::rewards::RewardBreakdown;

pub const TRACE_SCHEMA: &str = "augchain.trace.v1";

/// One episode as stored on disk and sent over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub schema: String,
    /// `{item_id}#{attempt}`; unique within a run.
    pub id: String,
    pub item_id: String,
    pub attempt: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub max_calls: u32,
    pub trace: EpisodeTrace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewards: Option<RewardBreakdown>,
    /// Set when the episode aborted; `trace` then holds the partial run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorMessage>,
}

impl TraceRecord {
    pub fn new(
        item_id: impl Into<String>,
        attempt: u32,
        max_calls: u32,
        trace: EpisodeTrace,
    ) -> Self {
        let item_id = item_id.into();
        Self {
            schema: TRACE_SCHEMA.to_string(),
            id: record_id(&item_id, attempt),
            item_id,
            attempt,
            seed: None,
            question: trace.question().unwrap_or_default().to_string(),
            ground_truth: None,
            split: None,
            max_calls,
            trace,
            rewards: None,
            error: None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.error.is_none()
    }
}

pub fn record_id(item_id: &str, attempt: u32) -> String {
    format!("{item_id}#{attempt}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{run_episode, EpisodeConfig, EpisodeQuery, ScriptedBackend};
    use crate::augment::{Channels, ImageBuffer};

    #[test]
    fn json_roundtrip() {
        let q = EpisodeQuery::new(ImageBuffer::filled(8, 8, Channels::Rgb, 1), "q?");
        let b = ScriptedBackend::new(["<code>edge(image_path)</code>", "<answer>a</answer>"]);
        let t = run_episode(&b, &q, &EpisodeConfig::default()).unwrap();
        let mut r = TraceRecord::new("item-1", 2, 8, t);
        r.seed = Some(7);
        assert_eq!(r.id, "item-1#2");
        assert_eq!(r.question, "q?");
        let line = serde_json::to_string(&r).unwrap();
        assert!(line.starts_with("{\"schema\":\"augchain.trace.v1\",\"id\":\"item-1#2\""));
        let back: TraceRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, r);
    }
}
