//! Benchmark manifests: one JSON object per line.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::augment::ImageBuffer;
use crate::jsonl::read_jsonl;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    RealWorld,
    Synthetic,
    #[default]
    Other,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::RealWorld => "real_world",
            Split::Synthetic => "synthetic",
            Split::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub image: PathBuf,
    pub question: String,
    pub ground_truth: String,
    #[serde(default)]
    pub split: Split,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
}

impl BenchmarkItem {
    pub fn load_image(&self, base: Option<&Path>) -> Result<ImageBuffer, EvalError> {
        let path = match base {
            Some(b) if self.image.is_relative() => b.join(&self.image),
            _ => self.image.clone(),
        };
        ImageBuffer::open(&path).map_err(|e| EvalError::Image {
            id: self.id.clone(),
            message: format!("{}: {e}", path.display()),
        })
    }
}

pub fn check_unique_ids(items: &[BenchmarkItem]) -> Result<(), EvalError> {
    let mut seen = HashSet::new();
    for it in items {
        if !seen.insert(it.id.as_str()) {
            return Err(EvalError::DuplicateId(it.id.clone()));
        }
    }
    Ok(())
}

/// Reads and validates a manifest; returns the items and the directory
/// relative image paths resolve against.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<(Vec<BenchmarkItem>, PathBuf), EvalError> {
    let path = path.as_ref();
    let items: Vec<BenchmarkItem> = read_jsonl(path)?;
    check_unique_ids(&items)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((items, base))
}
