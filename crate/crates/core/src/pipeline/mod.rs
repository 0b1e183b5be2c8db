//! Training-data tooling: difficulty filtering from repeated attempts and
//! format-trajectory synthesis.

mod filter;
mod synth;

pub use filter::{
    apply_filter_policy, passk_difficulty, policy_disposition, resolve_recheck, DifficultyRecord,
    Disposition, FilterOutcome, FilterReport, PassThroughVerifier, RecheckOutcome, RecheckVerdict,
    RecheckVerifier, EASY_KEEP_RATE,
};
pub use synth::{
    format_sft_prompt, prepare_source, synth_format_trajectory, synth_with_rewriter, QaItem,
    Rewriter, SftTrajectory, FORMAT_SFT_PROMPT, TEMPLATE_IDS,
};

use crate::error::ErrorMessage;
use crate::rewards::JudgeError;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error("item {0} has no attempts")]
    NoAttempts(String),
    #[error("unknown template {0:?}")]
    TemplateUnknown(String),
    #[error("malformed trajectory: {0}")]
    Malformed(String),
    #[error("call failed: {}", .0.human_text)]
    Exec(ErrorMessage),
    #[error("rewriter failed: {0}")]
    Rewriter(String),
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Judge(_) => "judge_unavailable",
            PipelineError::NoAttempts(_) => "no_attempts",
            PipelineError::TemplateUnknown(_) => "template_unknown",
            PipelineError::Malformed(_) => "malformed",
            PipelineError::Exec(_) => "exec_failed",
            PipelineError::Rewriter(_) => "rewriter_failed",
        }
    }
}
