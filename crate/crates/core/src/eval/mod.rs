//! Benchmark harness: manifests, resumable runs, pass@k and call statistics,
//! plus the synthetic fixture and oracle backend used to check the harness
//! end to end.

mod fixture;
mod manifest;
mod oracle;
mod run;
mod score;

pub use fixture::{synthesize_fixture, Fixture, FixtureItem, Perturbation, FIXTURE_ANSWERS};
pub use manifest::{check_unique_ids, load_manifest, BenchmarkItem, Split};
pub use oracle::{OracleBackend, OracleKey, ORACLE_WRONG_ANSWER};
pub use run::{attempt_seed, default_store, run_benchmark, ImageSource, RunConfig, RunOutcome};
pub use score::{
    api_frequency, compression_experiment, episode_failed, item_verdicts, judge_record,
    passk_from_verdicts, score_passk, ApiFreqReport, Averaging, CompressionCell,
    CompressionReport, ItemVerdicts, PassKReport, Rates, ReportHeader, FREQ_COLUMNS,
};

use crate::jsonl::JsonlError;
use crate::rewards::JudgeError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("image for item {id}: {message}")]
    Image { id: String, message: String },
    #[error("duplicate item id {0:?}")]
    DuplicateId(String),
    #[error("episode failed: {0}")]
    Episode(String),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error("no stored attempts for item {0:?}")]
    MissingAttempts(String),
    #[error("writing fixture: {0}")]
    Io(#[from] std::io::Error),
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::Config(_) => "config_invalid",
            EvalError::Image { .. } => "image_undecodable",
            EvalError::DuplicateId(_) => "duplicate_id",
            EvalError::Episode(_) => "episode_failed",
            EvalError::Jsonl(_) => "io",
            EvalError::Judge(_) => "judge_unavailable",
            EvalError::MissingAttempts(_) => "missing_attempts",
            EvalError::Io(_) => "io",
        }
    }
}
