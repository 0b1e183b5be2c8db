//! Running a benchmark: n independent episodes per item, persisted as they
//! finish so an interrupted run can resume.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::manifest::BenchmarkItem;
use super::EvalError;
use crate::agent::{
    run_episode, EpisodeConfig, EpisodeErrorKind, EpisodeQuery, ModelBackend, SamplingParams,
    TraceRecord,
};
use crate::augment::{downsample_for_compression, CompressionRate, ImageBuffer};
use crate::error::ErrorMessage;
use crate::jsonl::{read_jsonl_or_empty, JsonlAppender};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub episode: EpisodeConfig,
    /// Independent attempts per item.
    pub attempts: u32,
    /// Attempt seeds derive from this.
    pub seed: u64,
    pub workers: usize,
    /// Downsample query images by this rate; the full-resolution image stays
    /// available for resize-up recall.
    pub compression: Option<CompressionRate>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            episode: EpisodeConfig {
                sampling: SamplingParams::pass_at_1(),
                ..Default::default()
            },
            attempts: 1,
            seed: 0,
            workers: 4,
            compression: None,
        }
    }
}

/// Per-attempt seed, stable across platforms and distinct per (item, attempt).
pub fn attempt_seed(base: u64, item_id: &str, attempt: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update((item_id.len() as u64).to_le_bytes());
    h.update(item_id.as_bytes());
    h.update(attempt.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// One record per (item, attempt), in manifest order then attempt order.
    pub records: Vec<TraceRecord>,
    /// Records produced by this invocation (the rest came from the store).
    pub executed: usize,
    /// Attempts that aborted; their records carry the error and partial trace.
    pub failed: usize,
}

/// Where images come from: a manifest directory, or preloaded buffers.
pub enum ImageSource<'a> {
    Dir(&'a Path),
    Loaded(&'a (dyn Fn(&BenchmarkItem) -> Option<ImageBuffer> + Sync)),
}

impl ImageSource<'_> {
    fn load(&self, item: &BenchmarkItem) -> Result<ImageBuffer, EvalError> {
        match self {
            ImageSource::Dir(base) => item.load_image(Some(base)),
            ImageSource::Loaded(f) => f(item).ok_or_else(|| EvalError::Image {
                id: item.id.clone(),
                message: "no image supplied".into(),
            }),
        }
    }
}

fn episode_query(item: &BenchmarkItem, image: &ImageBuffer, compression: Option<CompressionRate>) -> EpisodeQuery {
    match compression {
        Some(rate) if rate.get() < 1.0 => {
            EpisodeQuery::new(downsample_for_compression(image, rate), item.question.clone())
                .with_original(image.clone())
        }
        _ => EpisodeQuery::new(image.clone(), item.question.clone()),
    }
}

fn run_one(
    item: &BenchmarkItem,
    query: &EpisodeQuery,
    attempt: u32,
    backend: &dyn ModelBackend,
    config: &RunConfig,
) -> Result<TraceRecord, EvalError> {
    let seed = attempt_seed(config.seed, &item.id, attempt);
    let mut episode = config.episode.clone();
    episode.sampling = episode.sampling.with_seed(seed);
    let (trace, error) = match run_episode(backend, query, &episode) {
        Ok(t) => (t, None),
        Err(e) => match (&e.kind, e.partial) {
            (EpisodeErrorKind::BackendUnavailable(msg), Some(partial)) => (
                *partial,
                Some(ErrorMessage::new("backend_unavailable", msg.clone())),
            ),
            (kind, _) => return Err(EvalError::Episode(kind.to_string())),
        },
    };
    let mut rec = TraceRecord::new(item.id.clone(), attempt, episode.max_calls, trace);
    rec.seed = Some(seed);
    rec.question = item.question.clone();
    rec.ground_truth = Some(item.ground_truth.clone());
    rec.split = Some(item.split.as_str().to_string());
    rec.error = error;
    Ok(rec)
}

/// Runs every (item, attempt) not already complete in `store`, appending
/// each record to the store as soon as it finishes.
pub fn run_benchmark(
    items: &[BenchmarkItem],
    images: &ImageSource<'_>,
    backend: &dyn ModelBackend,
    config: &RunConfig,
    store: Option<&Path>,
) -> Result<RunOutcome, EvalError> {
    if config.attempts == 0 {
        return Err(EvalError::Config("attempts must be at least 1".into()));
    }
    super::manifest::check_unique_ids(items)?;
    config.episode.validate().map_err(EvalError::Config)?;

    let previous: Vec<TraceRecord> = match store {
        Some(p) => read_jsonl_or_empty(p)?,
        None => Vec::new(),
    };
    let done: HashSet<(String, u32)> = previous
        .iter()
        .filter(|r| r.is_complete())
        .map(|r| (r.item_id.clone(), r.attempt))
        .collect();
    let appender = match store {
        Some(p) => Some(Mutex::new(JsonlAppender::open(p)?)),
        None => None,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| EvalError::Config(e.to_string()))?;

    let fresh: Vec<TraceRecord> = pool.install(|| {
        items
            .par_iter()
            .map(|item| -> Result<Vec<TraceRecord>, EvalError> {
                let todo: Vec<u32> = (0..config.attempts)
                    .filter(|a| !done.contains(&(item.id.clone(), *a)))
                    .collect();
                if todo.is_empty() {
                    return Ok(Vec::new());
                }
                let image = images.load(item)?;
                let query = episode_query(item, &image, config.compression);
                todo.into_par_iter()
                    .map(|a| {
                        let rec = run_one(item, &query, a, backend, config)?;
                        if let Some(app) = &appender {
                            app.lock().unwrap_or_else(|e| e.into_inner()).append(&rec)?;
                        }
                        Ok(rec)
                    })
                    .collect()
            })
            .collect::<Result<Vec<Vec<_>>, _>>()
            .map(|v| v.into_iter().flatten().collect())
    })?;

    let executed = fresh.len();
    let order: std::collections::HashMap<&str, usize> =
        items.iter().enumerate().map(|(i, it)| (it.id.as_str(), i)).collect();
    // later records supersede earlier ones for the same (item, attempt)
    let mut latest: std::collections::BTreeMap<(usize, u32), TraceRecord> = Default::default();
    for r in previous.into_iter().chain(fresh) {
        if let Some(&i) = order.get(r.item_id.as_str()) {
            if r.attempt < config.attempts {
                let key = (i, r.attempt);
                let keep_old = latest.get(&key).is_some_and(|old| old.is_complete() && !r.is_complete());
                if !keep_old {
                    latest.insert(key, r);
                }
            }
        }
    }
    let records: Vec<TraceRecord> = latest.into_values().collect();
    let failed = records.iter().filter(|r| !r.is_complete()).count();
    Ok(RunOutcome { records, executed, failed })
}

/// Default store location next to a report directory.
pub fn default_store(out_dir: &Path) -> PathBuf {
    out_dir.join("traces.jsonl")
}
