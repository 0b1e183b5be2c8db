use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    ZeroDimension { width: u32, height: u32 },
    #[error("pixel buffer holds {actual} bytes, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("cannot decode image: {0}")]
    Decode(String),
}

/// A model-visible error: stable machine code plus the text re-injected
/// inside the `<output>` block.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ErrorMessage {
    pub code: String,
    pub human_text: String,
}

impl ErrorMessage {
    pub fn new(code: impl Into<String>, human_text: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            human_text: human_text.into(),
        }
    }
}
