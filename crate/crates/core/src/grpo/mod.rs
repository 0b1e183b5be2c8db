//! Policy-optimisation signals: loss masks, advantages and KL terms, emitted
//! as records for an external trainer.

mod advantage;
mod batch;
mod mask;

pub use advantage::{
    group_normalize, kl_term, kl_value, mean_std, zscore, KlRecord, NormMode, DEGENERATE_STD,
};
pub use batch::{
    assemble_batch, batch_to_jsonl, GrpoConfig, MaskSpan, RolloutGroup, ScoredTrace,
    TrainingRecord, DEFAULT_BETA, GRPO_SCHEMA,
};
pub use mask::{build_loss_sequence, validate_structure, LossSequence, LossSpan, SpanKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GrpoError {
    #[error("trace structure invalid: {0}")]
    StructureInvalid(String),
    #[error("group needs at least 2 rollouts, got {0}")]
    GroupTooSmall(usize),
    #[error("length mismatch in {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("duplicate trace id {0:?}")]
    DuplicateTraceId(String),
    #[error("trace {id}: {source}")]
    InTrace {
        id: String,
        #[source]
        source: Box<GrpoError>,
    },
}

impl GrpoError {
    fn in_trace(self, id: &str) -> Self {
        GrpoError::InTrace {
            id: id.to_string(),
            source: Box::new(self),
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            GrpoError::StructureInvalid(_) => "structure_invalid",
            GrpoError::GroupTooSmall(_) => "group_too_small",
            GrpoError::LengthMismatch { .. } => "length_mismatch",
            GrpoError::NonFinite(_) => "non_finite",
            GrpoError::DuplicateTraceId(_) => "duplicate_trace_id",
            GrpoError::InTrace { source, .. } => source.code(),
        }
    }
}
