//! Difficulty scoring from repeated attempts and the keep/sample/recheck
//! policy built on it.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::parser::ANSWER_OPEN;
use crate::rewards::{answer_window, clamp_score, Judge, CORRECT_THRESHOLD};

/// Share of zero-difficulty items kept by the filter.
pub const EASY_KEEP_RATE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    Keep,
    #[serde(rename = "sample_10pct")]
    Sample10Pct,
    RecheckValidity,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyRecord {
    pub item_id: String,
    /// Attempts judged.
    pub k: u32,
    pub scores: Vec<f64>,
    pub correct: Vec<bool>,
    /// Number of incorrect attempts.
    pub difficulty: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disposition: Option<Disposition>,
}

impl DifficultyRecord {
    /// Builds a record from already-judged attempt flags.
    pub fn from_flags(item_id: impl Into<String>, correct: Vec<bool>) -> Self {
        let scores = correct.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
        let difficulty = correct.iter().filter(|c| !**c).count() as u32;
        Self {
            item_id: item_id.into(),
            k: correct.len() as u32,
            scores,
            correct,
            difficulty,
            disposition: None,
        }
    }

    pub fn correct_count(&self) -> u32 {
        self.k - self.difficulty
    }
}

/// Policy table: every attempt right → sampled; every attempt wrong →
/// validity recheck; anything in between → kept.
pub fn policy_disposition(difficulty: u32, k: u32) -> Disposition {
    if difficulty == 0 {
        Disposition::Sample10Pct
    } else if difficulty >= k {
        Disposition::RecheckValidity
    } else {
        Disposition::Keep
    }
}

/// Judges each attempt independently. Bare answers are wrapped in answer
/// tags so tag-aware judges see them as final answers.
pub fn passk_difficulty(
    item_id: &str,
    question: &str,
    ground_truth: &str,
    attempts: &[String],
    judge: &dyn Judge,
) -> Result<DifficultyRecord, PipelineError> {
    if attempts.is_empty() {
        return Err(PipelineError::NoAttempts(item_id.to_string()));
    }
    let mut scores = Vec::with_capacity(attempts.len());
    for a in attempts {
        let window = if a.contains(ANSWER_OPEN) {
            a.clone()
        } else {
            answer_window(a)
        };
        let s = judge.score_vqa(question, ground_truth, &window)?;
        scores.push(clamp_score(s)?);
    }
    let correct: Vec<bool> = scores.iter().map(|s| *s >= CORRECT_THRESHOLD).collect();
    let difficulty = correct.iter().filter(|c| !**c).count() as u32;
    Ok(DifficultyRecord {
        item_id: item_id.to_string(),
        k: attempts.len() as u32,
        scores,
        correct,
        difficulty,
        disposition: None,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub kept: Vec<DifficultyRecord>,
    pub recheck: Vec<DifficultyRecord>,
    pub dropped: Vec<DifficultyRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub seed: u64,
    pub total: usize,
    /// Records per difficulty level.
    pub by_difficulty: BTreeMap<u32, usize>,
    pub kept: usize,
    pub recheck: usize,
    pub dropped: usize,
}

impl FilterOutcome {
    pub fn report(&self, seed: u64) -> FilterReport {
        let mut by_difficulty = BTreeMap::new();
        for r in self.kept.iter().chain(&self.recheck).chain(&self.dropped) {
            *by_difficulty.entry(r.difficulty).or_insert(0) += 1;
        }
        FilterReport {
            seed,
            total: self.kept.len() + self.recheck.len() + self.dropped.len(),
            by_difficulty,
            kept: self.kept.len(),
            recheck: self.recheck.len(),
            dropped: self.dropped.len(),
        }
    }
}

/// Partitions records by the policy table. One random draw is made per
/// zero-difficulty record, in input order, from a ChaCha8 stream seeded with
/// `seed`.
pub fn apply_filter_policy(records: &[DifficultyRecord], seed: u64) -> FilterOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = FilterOutcome::default();
    for r in records {
        let mut r = r.clone();
        let table = policy_disposition(r.difficulty, r.k);
        r.disposition = Some(table);
        match table {
            Disposition::Sample10Pct => {
                if rng.random_bool(EASY_KEEP_RATE) {
                    out.kept.push(r);
                } else {
                    r.disposition = Some(Disposition::Drop);
                    out.dropped.push(r);
                }
            }
            Disposition::Keep => out.kept.push(r),
            Disposition::RecheckValidity => out.recheck.push(r),
            Disposition::Drop => out.dropped.push(r),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecheckVerdict {
    Answerable,
    Unanswerable,
    /// Left for human or model review.
    Pending,
}

/// Decides whether an item nobody answered correctly is still a valid item.
pub trait RecheckVerifier: Send + Sync {
    fn verify(&self, record: &DifficultyRecord) -> RecheckVerdict;
}

/// Flags everything for review.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassThroughVerifier;

impl RecheckVerifier for PassThroughVerifier {
    fn verify(&self, _record: &DifficultyRecord) -> RecheckVerdict {
        RecheckVerdict::Pending
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecheckOutcome {
    pub restored: Vec<DifficultyRecord>,
    pub discarded: Vec<DifficultyRecord>,
    pub pending: Vec<DifficultyRecord>,
}

/// Answerable items are kept, unanswerable ones dropped, the rest stay queued.
pub fn resolve_recheck(queue: &[DifficultyRecord], verifier: &dyn RecheckVerifier) -> RecheckOutcome {
    let mut out = RecheckOutcome::default();
    for r in queue {
        let mut r = r.clone();
        match verifier.verify(&r) {
            RecheckVerdict::Answerable => {
                r.disposition = Some(Disposition::Keep);
                out.restored.push(r);
            }
            RecheckVerdict::Unanswerable => {
                r.disposition = Some(Disposition::Drop);
                out.discarded.push(r);
            }
            RecheckVerdict::Pending => out.pending.push(r),
        }
    }
    out
}
