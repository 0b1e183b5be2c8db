//! Scoring stored attempts: pass@k, call-frequency statistics and the
//! compression comparison.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::manifest::{BenchmarkItem, Split};
use super::run::{run_benchmark, ImageSource, RunConfig};
use super::EvalError;
use crate::agent::{EpisodeTrace, ModelBackend, SamplingParams, Termination, TraceRecord};
use crate::augment::{CompressionRate, OpKind};
use crate::rewards::{answer_window, clamp_score, Judge, CORRECT_THRESHOLD};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Every item weighs the same.
    #[default]
    Pooled,
    /// Every split weighs the same.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub attempts: u32,
    pub seed: u64,
    pub max_calls: u32,
    pub sampling: SamplingParams,
}

impl ReportHeader {
    pub fn from_config(config: &RunConfig) -> Self {
        Self {
            attempts: config.attempts,
            seed: config.seed,
            max_calls: config.episode.max_calls,
            sampling: config.episode.sampling.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemVerdicts {
    pub id: String,
    pub split: Split,
    pub scores: Vec<f64>,
    pub verdicts: Vec<bool>,
    /// Attempts that aborted and were counted as wrong.
    pub aborted: usize,
}

impl ItemVerdicts {
    /// Correct if any of the first `k` attempts is.
    pub fn pass_at(&self, k: usize) -> bool {
        self.verdicts.iter().take(k).any(|v| *v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub items: usize,
    /// Keyed `pass@k`.
    pub pass: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassKReport {
    pub header: ReportHeader,
    pub ks: Vec<u32>,
    pub averaging: Averaging,
    pub threshold: f64,
    pub splits: BTreeMap<Split, Rates>,
    pub overall: Rates,
    pub items: Vec<ItemVerdicts>,
}

fn pass_key(k: u32) -> String {
    format!("pass@{k}")
}

fn rates(items: &[&ItemVerdicts], ks: &[u32]) -> Rates {
    let n = items.len();
    let pass = ks
        .iter()
        .map(|&k| {
            let hits = items.iter().filter(|i| i.pass_at(k as usize)).count();
            let rate = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
            (pass_key(k), rate)
        })
        .collect();
    Rates { items: n, pass }
}

/// Judges one stored attempt on its final answer. Aborted attempts score 0.
pub fn judge_record(record: &TraceRecord, ground_truth: &str, judge: &dyn Judge) -> Result<f64, EvalError> {
    if !record.is_complete() {
        return Ok(0.0);
    }
    let window = answer_window(&record.trace.final_answer);
    let s = judge.score_vqa(&record.question, ground_truth, &window)?;
    Ok(clamp_score(s)?)
}

/// Per-item verdicts in manifest order, attempts in attempt order.
pub fn item_verdicts(
    items: &[BenchmarkItem],
    records: &[TraceRecord],
    judge: &dyn Judge,
) -> Result<Vec<ItemVerdicts>, EvalError> {
    let mut by_item: HashMap<&str, Vec<&TraceRecord>> = HashMap::new();
    for r in records {
        by_item.entry(r.item_id.as_str()).or_default().push(r);
    }
    items
        .iter()
        .map(|item| {
            let mut attempts = by_item.remove(item.id.as_str()).unwrap_or_default();
            if attempts.is_empty() {
                return Err(EvalError::MissingAttempts(item.id.clone()));
            }
            attempts.sort_by_key(|r| r.attempt);
            let mut scores = Vec::with_capacity(attempts.len());
            for r in &attempts {
                scores.push(judge_record(r, &item.ground_truth, judge)?);
            }
            Ok(ItemVerdicts {
                id: item.id.clone(),
                split: item.split,
                verdicts: scores.iter().map(|s| *s >= CORRECT_THRESHOLD).collect(),
                scores,
                aborted: attempts.iter().filter(|r| !r.is_complete()).count(),
            })
        })
        .collect()
}

pub fn score_passk(
    items: &[BenchmarkItem],
    records: &[TraceRecord],
    judge: &dyn Judge,
    ks: &[u32],
    averaging: Averaging,
    header: ReportHeader,
) -> Result<PassKReport, EvalError> {
    let verdicts = item_verdicts(items, records, judge)?;
    Ok(passk_from_verdicts(verdicts, ks, averaging, header))
}

pub fn passk_from_verdicts(
    verdicts: Vec<ItemVerdicts>,
    ks: &[u32],
    averaging: Averaging,
    header: ReportHeader,
) -> PassKReport {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut grouped: BTreeMap<Split, Vec<&ItemVerdicts>> = BTreeMap::new();
    for v in &verdicts {
        grouped.entry(v.split).or_default().push(v);
    }
    let splits: BTreeMap<Split, Rates> = grouped.iter().map(|(s, v)| (*s, rates(v, &ks))).collect();
    let all: Vec<&ItemVerdicts> = verdicts.iter().collect();
    let overall = match averaging {
        Averaging::Pooled => rates(&all, &ks),
        Averaging::Macro => Rates {
            items: all.len(),
            pass: ks
                .iter()
                .map(|&k| {
                    let key = pass_key(k);
                    let mean = if splits.is_empty() {
                        0.0
                    } else {
                        splits.values().map(|r| r.pass[&key]).sum::<f64>() / splits.len() as f64
                    };
                    (key, mean)
                })
                .collect(),
        },
    };
    PassKReport {
        header,
        ks,
        averaging,
        threshold: CORRECT_THRESHOLD,
        splits,
        overall,
        items: verdicts,
    }
}

impl PassKReport {
    /// Human-readable table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "attempts={} seed={} temperature={} top_p={} averaging={:?}",
            self.header.attempts,
            self.header.seed,
            self.header.sampling.temperature,
            self.header.sampling.top_p,
            self.averaging
        );
        let _ = write!(out, "{:<12}{:>7}", "split", "items");
        for k in &self.ks {
            let _ = write!(out, "{:>10}", pass_key(*k));
        }
        out.push('\n');
        let mut row = |name: &str, r: &Rates| {
            let _ = write!(out, "{:<12}{:>7}", name, r.items);
            for k in &self.ks {
                let _ = write!(out, "{:>9.1}%", 100.0 * r.pass[&pass_key(*k)]);
            }
            out.push('\n');
        };
        for (s, r) in &self.splits {
            row(s.as_str(), r);
        }
        row("average", &self.overall);
        out
    }
}

/// Frequency columns: each op kind, with both resize directions merged.
pub const FREQ_COLUMNS: [&str; 6] = ["crop", "resize", "flip", "rotate", "denoise", "edge"];

fn column(kind: OpKind) -> &'static str {
    match kind {
        OpKind::Crop => "crop",
        OpKind::ResizeUp | OpKind::ResizeDown => "resize",
        OpKind::Flip => "flip",
        OpKind::Rotate => "rotate",
        OpKind::Denoise => "denoise",
        OpKind::Edge => "edge",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiFreqReport {
    pub total: usize,
    /// Set when there were no episodes; every percentage is then 0.
    pub zero_denominator: bool,
    pub direct: f64,
    pub fail: f64,
    /// Share of episodes using each op at least once, keyed by column.
    pub ops: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, usize>,
}

/// An episode fails when a call was unparseable or the answer was forced.
pub fn episode_failed(trace: &EpisodeTrace) -> bool {
    trace.has_parse_error() || trace.terminated_by != Termination::Answer
}

/// Presence statistics in percent.
pub fn api_frequency(traces: &[&EpisodeTrace]) -> ApiFreqReport {
    let mut counts: BTreeMap<String, usize> = ["direct", "fail"]
        .into_iter()
        .chain(FREQ_COLUMNS)
        .map(|c| (c.to_string(), 0))
        .collect();
    for t in traces {
        if t.call_count == 0 {
            *counts.get_mut("direct").expect("column") += 1;
        }
        if episode_failed(t) {
            *counts.get_mut("fail").expect("column") += 1;
        }
        let mut seen: Vec<&str> = t.calls.iter().filter_map(|c| c.op()).map(|op| column(op.kind())).collect();
        seen.sort_unstable();
        seen.dedup();
        for c in seen {
            *counts.get_mut(c).expect("column") += 1;
        }
    }
    let total = traces.len();
    let pct = |n: usize| if total == 0 { 0.0 } else { 100.0 * n as f64 / total as f64 };
    ApiFreqReport {
        total,
        zero_denominator: total == 0,
        direct: pct(counts["direct"]),
        fail: pct(counts["fail"]),
        ops: FREQ_COLUMNS.iter().map(|c| (c.to_string(), pct(counts[*c]))).collect(),
        counts,
    }
}

impl ApiFreqReport {
    pub fn to_text(&self) -> String {
        let mut head = format!("{:>8}{:>8}", "direct", "fail");
        let mut row = format!("{:>8.1}{:>8.1}", self.direct, self.fail);
        for c in FREQ_COLUMNS {
            let _ = write!(head, "{c:>9}");
            let _ = write!(row, "{:>9.1}", self.ops[c]);
        }
        format!("{head}\n{row}\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionCell {
    pub rate: f64,
    pub allow_resize_up: bool,
    pub episodes: usize,
    /// Share of attempts judged correct.
    pub accuracy: f64,
    /// Share of episodes calling `resize_up` at least once.
    pub resize_up_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub header: ReportHeader,
    pub cells: Vec<CompressionCell>,
}

/// Runs the benchmark at each rate with and without `resize_up` available.
pub fn compression_experiment(
    items: &[BenchmarkItem],
    images: &ImageSource<'_>,
    backend: &dyn ModelBackend,
    judge: &dyn Judge,
    base: &RunConfig,
    rates: &[CompressionRate],
) -> Result<CompressionReport, EvalError> {
    let mut cells = Vec::new();
    for &rate in rates {
        for allow in [true, false] {
            let mut cfg = base.clone();
            cfg.compression = Some(rate);
            if !allow {
                cfg.episode.vocabulary = cfg.episode.vocabulary.without(OpKind::ResizeUp);
            }
            let run = run_benchmark(items, images, backend, &cfg, None)?;
            let gt: HashMap<&str, &str> =
                items.iter().map(|i| (i.id.as_str(), i.ground_truth.as_str())).collect();
            let mut correct = 0usize;
            let mut resized = 0usize;
            for r in &run.records {
                if judge_record(r, gt[r.item_id.as_str()], judge)? >= CORRECT_THRESHOLD {
                    correct += 1;
                }
                if r.trace.calls.iter().any(|c| c.op().is_some_and(|o| o.kind() == OpKind::ResizeUp)) {
                    resized += 1;
                }
            }
            let n = run.records.len();
            let frac = |x: usize| if n == 0 { 0.0 } else { x as f64 / n as f64 };
            cells.push(CompressionCell {
                rate: rate.get(),
                allow_resize_up: allow,
                episodes: n,
                accuracy: frac(correct),
                resize_up_rate: frac(resized),
            });
        }
    }
    Ok(CompressionReport { header: ReportHeader::from_config(base), cells })
}

impl CompressionReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("{:>6}{:>11}{:>10}{:>11}\n", "rate", "resize_up", "accuracy", "resize_up%");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{:>6.2}{:>11}{:>9.1}%{:>10.1}%",
                c.rate,
                if c.allow_resize_up { "on" } else { "off" },
                100.0 * c.accuracy,
                100.0 * c.resize_up_rate
            );
        }
        out
    }
}
