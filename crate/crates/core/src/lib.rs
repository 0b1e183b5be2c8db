//! Runtime for iterative post-hoc visual augmentation during VLM inference,
//! with the reward stack, GRPO signal assembly, data tooling and evaluation
//! harness built around it.

pub mod agent;
pub mod augment;
pub mod error;
pub mod eval;
pub mod grpo;
pub mod jsonl;
pub mod parser;
pub mod pipeline;
pub mod rewards;

pub use augment::{
    apply_op, AugmentationOp, ExecError, ExecLimits, ExecOutcome, ImageBuffer, OpKind, Vocabulary,
};
pub use error::ErrorMessage;
pub use parser::{extract_call, find_stop, scan_tags, ParseError, ParsedCall, TagScan};
