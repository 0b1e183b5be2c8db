//! The five reward components and their weighted total.
//!
//! | component | range  | source                                               |
//! |-----------|--------|------------------------------------------------------|
//! | `r_vqa`   | [0, 1] | judge on the last 500 rendered characters            |
//! | `r_fmt`   | {0, 1} | `<think>` and `<answer>` both well-formed            |
//! | `r_cst`   | [0, 1] | judge consistency score on the completion text       |
//! | `r_api`   | {0, 1} | every code span parsed to a valid call               |
//! | `r_suc`   | [0, 1] | call-count efficiency, gated on `r_vqa >= 0.5`       |

mod http_judge;
mod judge;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::EpisodeTrace;
use crate::parser::scan_tags;

pub use http_judge::{
    HttpJudge, HttpJudgeConfig, CONSISTENCY_PROMPT, JUDGE_API_KEY_ENV, JUDGE_PROMPT, PROMPT_VERSION,
};
pub use judge::{
    clamp_score, fill_template, last_answer, normalize_answer, parse_judge_reply,
    repeated_ngram_ratio, Judge, JudgeError, MatchMode, RuleJudge,
};

/// Characters of rendered history the correctness judge sees.
pub const VQA_WINDOW_CHARS: usize = 500;
/// Score at or above which an answer counts as correct.
pub const CORRECT_THRESHOLD: f64 = 0.5;
/// Calls that keep the full efficiency reward.
pub const FREE_CALLS: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RewardError {
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error("invalid reward config: {0}")]
    ConfigInvalid(String),
}

impl RewardError {
    pub fn code(&self) -> &'static str {
        match self {
            RewardError::Judge(_) => "judge_unavailable",
            RewardError::ConfigInvalid(_) => "config_invalid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub vqa: f64,
    pub fmt: f64,
    pub cst: f64,
    pub api: f64,
    pub suc: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self::from_array([1.0, 0.25, 0.5, 0.25, 0.5])
    }
}

impl RewardWeights {
    pub fn from_array(w: [f64; 5]) -> Self {
        Self {
            vqa: w[0],
            fmt: w[1],
            cst: w[2],
            api: w[3],
            suc: w[4],
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.vqa, self.fmt, self.cst, self.api, self.suc]
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        if self.as_array().iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(RewardError::ConfigInvalid(format!(
                "weights must be finite and non-negative, got {:?}",
                self.as_array()
            )))
        }
    }
}

/// Unweighted components in `[vqa, fmt, cst, api, suc]` order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardParts {
    pub r_vqa: f64,
    pub r_fmt: f64,
    pub r_cst: f64,
    pub r_api: f64,
    pub r_suc: f64,
}

impl RewardParts {
    pub fn as_array(&self) -> [f64; 5] {
        [self.r_vqa, self.r_fmt, self.r_cst, self.r_api, self.r_suc]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_vqa: f64,
    pub r_fmt: f64,
    pub r_cst: f64,
    pub r_api: f64,
    pub r_suc: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn parts(&self) -> RewardParts {
        RewardParts {
            r_vqa: self.r_vqa,
            r_fmt: self.r_fmt,
            r_cst: self.r_cst,
            r_api: self.r_api,
            r_suc: self.r_suc,
        }
    }
}

/// Weighted sum, accumulated left to right in component order.
pub fn total_reward(parts: RewardParts, weights: &RewardWeights) -> RewardBreakdown {
    let total = parts
        .as_array()
        .iter()
        .zip(weights.as_array())
        .fold(0.0, |acc, (r, w)| acc + w * r);
    RewardBreakdown {
        r_vqa: parts.r_vqa,
        r_fmt: parts.r_fmt,
        r_cst: parts.r_cst,
        r_api: parts.r_api,
        r_suc: parts.r_suc,
        total,
    }
}

/// The last `VQA_WINDOW_CHARS` characters of `text`, or all of it.
pub fn vqa_window(text: &str) -> &str {
    let n = text.chars().count();
    if n <= VQA_WINDOW_CHARS {
        return text;
    }
    let skip = n - VQA_WINDOW_CHARS;
    let (at, _) = text.char_indices().nth(skip).expect("skip < char count");
    &text[at..]
}

/// Presents a bare final answer to a judge the way it appears in a trace.
pub fn answer_window(answer: &str) -> String {
    format!("<answer>{answer}</answer>")
}

pub fn reward_vqa(
    trace: &EpisodeTrace,
    ground_truth: &str,
    judge: &dyn Judge,
) -> Result<f64, RewardError> {
    let rendered = trace.rendered();
    let question = trace.question().unwrap_or_default();
    let score = judge.score_vqa(question, ground_truth, vqa_window(&rendered))?;
    Ok(clamp_score(score)?)
}

pub fn reward_fmt(trace: &EpisodeTrace) -> f64 {
    let scan = scan_tags(&trace.history.completion_text());
    if scan.has_think && scan.has_answer {
        1.0
    } else {
        0.0
    }
}

pub fn reward_cst(trace: &EpisodeTrace, judge: &dyn Judge) -> Result<f64, RewardError> {
    let score = judge.score_consistency(&trace.history.completion_text())?;
    Ok(clamp_score(score)?)
}

/// 1 when every call parsed; vacuously 1 without calls.
pub fn reward_api(trace: &EpisodeTrace) -> f64 {
    if trace.calls.iter().all(|c| c.parsed.is_some()) {
        1.0
    } else {
        0.0
    }
}

/// Efficiency reward for a correct answer reached with `k` calls under a
/// budget of `max_calls`.
pub fn reward_suc(r_vqa: f64, k: u32, max_calls: u32) -> Result<f64, RewardError> {
    if max_calls <= FREE_CALLS {
        return Err(RewardError::ConfigInvalid(format!(
            "max_calls must exceed {FREE_CALLS}, got {max_calls}"
        )));
    }
    Ok(if r_vqa < CORRECT_THRESHOLD || k > max_calls {
        0.0
    } else if k <= FREE_CALLS {
        1.0
    } else {
        1.0 - (k - 2) as f64 / (max_calls - 2) as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub weights: RewardWeights,
    /// Call budget K the episodes ran under.
    pub max_calls: u32,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            weights: RewardWeights::default(),
            max_calls: 8,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        self.weights.validate()?;
        reward_suc(1.0, 0, self.max_calls).map(|_| ())
    }
}

pub fn score_trace(
    trace: &EpisodeTrace,
    ground_truth: &str,
    judge: &dyn Judge,
    config: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    config.validate()?;
    let r_vqa = reward_vqa(trace, ground_truth, judge)?;
    let parts = RewardParts {
        r_vqa,
        r_fmt: reward_fmt(trace),
        r_cst: reward_cst(trace, judge)?,
        r_api: reward_api(trace),
        r_suc: reward_suc(r_vqa, trace.call_count, config.max_calls)?,
    };
    Ok(total_reward(parts, &config.weights))
}

/// Scores many traces in parallel; results keep input order.
pub fn score_traces(
    items: &[(&EpisodeTrace, &str)],
    judge: &dyn Judge,
    config: &RewardConfig,
) -> Vec<Result<RewardBreakdown, RewardError>> {
    items
        .par_iter()
        .map(|(t, gt)| score_trace(t, gt, judge, config))
        .collect()
}
