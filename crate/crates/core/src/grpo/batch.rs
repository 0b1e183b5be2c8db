//! Training-record assembly for an external policy-gradient trainer.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::advantage::{group_normalize, kl_term, zscore, NormMode};
use super::mask::{build_loss_sequence, SpanKind};
use super::GrpoError;
use crate::agent::EpisodeTrace;

pub const GRPO_SCHEMA: &str = "augchain.grpo.v1";
pub const DEFAULT_BETA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrace {
    pub id: String,
    pub trace: EpisodeTrace,
    pub reward: f64,
    /// Policy log-probs at the in-loss positions, in trainer token units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logp_policy: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logp_ref: Option<Vec<f64>>,
    /// Per-position rewards, used only in trajectory mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_rewards: Option<Vec<f64>>,
}

impl ScoredTrace {
    pub fn new(id: impl Into<String>, trace: EpisodeTrace, reward: f64) -> Self {
        Self {
            id: id.into(),
            trace,
            reward,
            logp_policy: None,
            logp_ref: None,
            position_rewards: None,
        }
    }
}

/// All rollouts sampled for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub group_id: String,
    pub traces: Vec<ScoredTrace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub beta: f64,
    pub mode: NormMode,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            mode: NormMode::Group,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpan {
    /// Character offsets into the record's `text`.
    pub start: usize,
    pub end: usize,
    pub include: bool,
    pub kind: SpanKind,
}

/// One line of the training-record stream. Field order is part of the format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub schema: String,
    pub group_id: String,
    pub trace_id: String,
    pub reward: f64,
    /// Broadcast to every in-loss position.
    pub advantage: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_advantages: Option<Vec<f64>>,
    pub text: String,
    pub mask: Vec<MaskSpan>,
    /// In-loss characters of this trace.
    pub loss_len: usize,
    /// In-loss characters summed over the whole batch.
    pub normalizer: usize,
    /// `loss_len / normalizer`.
    pub token_weight: f64,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl: Option<Vec<f64>>,
}

fn build_group(
    group: &RolloutGroup,
    config: &GrpoConfig,
) -> Result<Vec<TrainingRecord>, GrpoError> {
    let rewards: Vec<f64> = group.traces.iter().map(|t| t.reward).collect();
    let advantages = match config.mode {
        NormMode::Group => group_normalize(&rewards)?,
        NormMode::Trajectory => vec![0.0; rewards.len()],
    };
    group
        .traces
        .iter()
        .zip(advantages)
        .map(|(st, advantage)| {
            let ctx = |e: GrpoError| e.in_trace(&st.id);
            let seq = build_loss_sequence(&st.trace).map_err(ctx)?;
            let loss_len = seq.included_len();
            let position_advantages = match config.mode {
                NormMode::Group => None,
                NormMode::Trajectory => Some(match &st.position_rewards {
                    Some(p) if p.len() != loss_len => {
                        return Err(ctx(GrpoError::LengthMismatch {
                            what: "position rewards",
                            expected: loss_len,
                            got: p.len(),
                        }))
                    }
                    Some(p) => zscore(p),
                    None => vec![0.0; loss_len],
                }),
            };
            let kl = match (&st.logp_policy, &st.logp_ref) {
                (Some(p), Some(r)) => Some(kl_term(p, r, config.beta).map_err(ctx)?.values),
                (None, None) => None,
                _ => {
                    return Err(ctx(GrpoError::LengthMismatch {
                        what: "log-prob vectors present",
                        expected: 2,
                        got: 1,
                    }))
                }
            };
            let mask = seq
                .char_ranges()
                .into_iter()
                .zip(&seq.spans)
                .map(|((start, end, include), s)| MaskSpan {
                    start,
                    end,
                    include,
                    kind: s.kind,
                })
                .collect();
            Ok(TrainingRecord {
                schema: GRPO_SCHEMA.to_string(),
                group_id: group.group_id.clone(),
                trace_id: st.id.clone(),
                reward: st.reward,
                advantage,
                position_advantages,
                text: seq.text(),
                mask,
                loss_len,
                normalizer: 0,
                token_weight: 0.0,
                beta: config.beta,
                kl,
            })
        })
        .collect()
}

/// Builds one record per trace, ordered by trace id.
pub fn assemble_batch(
    groups: &[RolloutGroup],
    config: &GrpoConfig,
) -> Result<Vec<TrainingRecord>, GrpoError> {
    if !(config.beta.is_finite() && config.beta >= 0.0) {
        return Err(GrpoError::NonFinite(format!("beta {}", config.beta)));
    }
    let mut seen = HashSet::new();
    for t in groups.iter().flat_map(|g| &g.traces) {
        if !seen.insert(t.id.as_str()) {
            return Err(GrpoError::DuplicateTraceId(t.id.clone()));
        }
    }
    let per_group: Vec<Vec<TrainingRecord>> = groups
        .par_iter()
        .map(|g| build_group(g, config))
        .collect::<Result<_, _>>()?;
    let mut records: Vec<TrainingRecord> = per_group.into_iter().flatten().collect();
    records.sort_by(|a, b| a.trace_id.cmp(&b.trace_id));
    let normalizer: usize = records.iter().map(|r| r.loss_len).sum();
    for r in &mut records {
        r.normalizer = normalizer;
        r.token_weight = if normalizer == 0 {
            0.0
        } else {
            r.loss_len as f64 / normalizer as f64
        };
    }
    Ok(records)
}

/// The record stream as JSON lines.
pub fn batch_to_jsonl(records: &[TrainingRecord]) -> String {
    records
        .iter()
        .map(|r| crate::jsonl::to_line(r) + "\n")
        .collect()
}
