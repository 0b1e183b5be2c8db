//! A deterministic backend that knows each fixture item's answer but only
//! gives it once the view that reveals it is in the history.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fixture::Fixture;
use crate::agent::{
    BackendError, GenerateRequest, GeneratedSpan, ModelBackend, Role,
};
use crate::augment::AugmentationOp;
use crate::jsonl::{read_jsonl, JsonlError};

/// Reply given when the revealing view never appeared.
pub const ORACLE_WRONG_ANSWER: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleKey {
    pub answer: String,
    pub required_op: Option<AugmentationOp>,
    pub target_digest: String,
}

/// Keyed by the digest of the query image.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    keys: HashMap<String, OracleKey>,
}

impl OracleBackend {
    pub fn new(keys: HashMap<String, OracleKey>) -> Self {
        Self { keys }
    }

    pub fn from_fixture(fixture: &Fixture) -> Self {
        Self::new(
            fixture
                .items
                .iter()
                .map(|f| {
                    (
                        f.query_digest.clone(),
                        OracleKey {
                            answer: f.item.ground_truth.clone(),
                            required_op: f.required_op,
                            target_digest: f.target_digest.clone(),
                        },
                    )
                })
                .collect(),
        )
    }

    /// Loads the answer key written next to a fixture manifest.
    pub fn from_key_file(path: impl AsRef<Path>) -> Result<Self, JsonlError> {
        #[derive(Deserialize)]
        struct KeyItem {
            ground_truth: String,
        }
        #[derive(Deserialize)]
        struct KeyLine {
            item: KeyItem,
            required_op: Option<AugmentationOp>,
            query_digest: String,
            target_digest: String,
        }
        let lines: Vec<KeyLine> = read_jsonl(path)?;
        Ok(Self::new(
            lines
                .into_iter()
                .map(|l| {
                    (
                        l.query_digest,
                        OracleKey {
                            answer: l.item.ground_truth,
                            required_op: l.required_op,
                            target_digest: l.target_digest,
                        },
                    )
                })
                .collect(),
        ))
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    fn reply(&self, request: &GenerateRequest<'_>) -> Result<String, BackendError> {
        let history = request.history;
        let query = history
            .query_image()
            .ok_or_else(|| BackendError::Unavailable("history has no query image".into()))?;
        let key = self
            .keys
            .get(&query.image.digest())
            .ok_or_else(|| BackendError::Unavailable("query image not in the oracle key".into()))?;
        let latest = history.latest_image().map(|a| a.image.digest());
        if latest.as_deref() == Some(key.target_digest.as_str()) {
            return Ok(format!(
                "<think>The label is readable now.</think>\n<answer>{}</answer>",
                key.answer
            ));
        }
        let forced = history.last().is_some_and(|m| m.role == Role::User) && history.assistant_turns() > 0;
        match key.required_op {
            Some(op) if history.assistant_turns() == 0 && !forced => Ok(format!(
                "<think>The label is hard to read; I will fix the view first.</think>\n<code>\nimage_path = {}\n</code>",
                op.render_call("image_path")
            )),
            _ => Ok(format!(
                "<think>I cannot make out the label.</think>\n<answer>{ORACLE_WRONG_ANSWER}</answer>"
            )),
        }
    }
}

impl ModelBackend for OracleBackend {
    fn generate(&self, request: &GenerateRequest<'_>) -> Result<GeneratedSpan, BackendError> {
        let text = self.reply(request)?;
        let (text, finish_reason) = crate::agent::truncate_at_stop(&text, request.stops);
        Ok(GeneratedSpan {
            text,
            finish_reason,
            logprobs: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{run_episode, EpisodeConfig, EpisodeQuery, Termination};
    use crate::augment::{OpKind, Vocabulary};
    use crate::eval::{synthesize_fixture, Perturbation};

    #[test]
    fn answers_after_required_call_only() {
        let fx = synthesize_fixture(4, 11);
        let oracle = OracleBackend::from_fixture(&fx);
        let full = EpisodeConfig::default();
        let stripped = EpisodeConfig {
            vocabulary: Vocabulary::empty(),
            ..Default::default()
        };
        for f in &fx.items {
            let q = EpisodeQuery::new(f.image.clone(), f.item.question.clone());
            let t = run_episode(&oracle, &q, &full).unwrap();
            assert_eq!(t.final_answer, f.item.ground_truth, "{:?}", f.perturbation);
            assert_eq!(t.terminated_by, Termination::Answer);
            let expected_calls = usize::from(f.perturbation != Perturbation::Clean);
            assert_eq!(t.call_count as usize, expected_calls);

            let t = run_episode(&oracle, &q, &stripped).unwrap();
            if f.perturbation == Perturbation::Clean {
                assert_eq!(t.final_answer, f.item.ground_truth);
            } else {
                assert_eq!(t.final_answer, ORACLE_WRONG_ANSWER);
                assert!(t.has_parse_error());
            }
        }
        let dir = tempfile::tempdir().unwrap();
        fx.write(dir.path()).unwrap();
        let loaded = OracleBackend::from_key_file(dir.path().join("fixture.jsonl")).unwrap();
        assert_eq!(loaded.keys, oracle.keys);

        let only_flip = EpisodeConfig {
            vocabulary: Vocabulary::empty().with(OpKind::Flip),
            ..Default::default()
        };
        let f = &fx.items[2];
        let q = EpisodeQuery::new(f.image.clone(), f.item.question.clone());
        assert_eq!(run_episode(&oracle, &q, &only_flip).unwrap().final_answer, f.item.ground_truth);
    }
}
