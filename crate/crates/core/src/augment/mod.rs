//! Deterministic image augmentations: the executor behind every `<code>` call.

mod exec;
pub mod filters;
mod image;
mod ops;

pub use exec::{
    apply_op, apply_op_in, downsample_for_compression, CompressionRate, ExecContext, ExecError,
    ExecLimits, ExecOutcome, MIN_COMPRESSED_SIDE,
};
pub use image::{Channels, ImageBuffer};
pub use ops::{AugmentationOp, DenoiseMethod, Factor, FlipAxis, OpKind, Rotation, Vocabulary};
