//! Subcommand definitions and their adapters onto the core library.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use augchain::agent::{
    render_history, run_episode, EpisodeErrorKind, EpisodeQuery, SamplingParams, TraceRecord,
};
use augchain::augment::{downsample_for_compression, CompressionRate};
use augchain::eval::{
    api_frequency, compression_experiment, load_manifest, run_benchmark, score_passk,
    synthesize_fixture, Averaging, ImageSource, ReportHeader, RunConfig,
};
use augchain::grpo::{assemble_batch, batch_to_jsonl, NormMode, RolloutGroup, ScoredTrace};
use augchain::jsonl::{read_jsonl, to_line, write_jsonl};
use augchain::parser::extract_call;
use augchain::pipeline::{apply_filter_policy, passk_difficulty, synth_format_trajectory, QaItem};
use augchain::rewards::score_trace;
use augchain::{ImageBuffer, Vocabulary};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{CliConfig, Overrides};
use crate::exit::{InputError, PartialRun};
use crate::refs::{backend_from_ref, judge_from_ref};
use crate::service::{serve, ServiceState};

/// Stdout writes that surface errors, so a closed pipe ends the command cleanly.
macro_rules! out {
    ($($t:tt)*) => { write!(std::io::stdout(), $($t)*)? };
}

macro_rules! outln {
    ($($t:tt)*) => { writeln!(std::io::stdout(), $($t)*)? };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Human-readable summary.
    Text,
    /// One pretty-printed JSON document.
    Json,
    /// Schema records only, one per line.
    Records,
}

#[derive(Debug, Parser)]
#[command(name = "augchain", version, about = "Post-hoc visual augmentation agent toolkit")]
pub struct Cli {
    /// TOML config file (also read from AUGCHAIN_CONFIG).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Cap on parallel episodes or judge calls.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Base URL of an OpenAI-compatible chat completions server.
    #[arg(long, global = true)]
    pub backend_url: Option<String>,
    /// Model name sent to the backend.
    #[arg(long, global = true)]
    pub backend_model: Option<String>,
    /// Base URL of the judge model server.
    #[arg(long, global = true)]
    pub judge_url: Option<String>,
    /// Model name sent to the judge.
    #[arg(long, global = true)]
    pub judge_model: Option<String>,
    /// Calls allowed per episode before the answer is forced.
    #[arg(long, global = true)]
    pub max_calls: Option<u32>,
    #[arg(long, global = true, value_enum, default_value = "text")]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one episode on an image and a question.
    Run(RunArgs),
    /// Run a benchmark manifest and write pass@k and call-frequency reports.
    Eval(EvalArgs),
    /// Score attempts per item and apply the difficulty filter.
    Filter(FilterArgs),
    /// Build format-teaching trajectories from a QA manifest.
    Synth(SynthArgs),
    /// Score stored trace records.
    Rewards(RewardsArgs),
    /// Assemble training records from scored rollout groups.
    Grpo(GrpoArgs),
    /// Write the synthetic adversarial benchmark and its answer key.
    Fixture(FixtureArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Query image (PNG, JPEG or any format the image crate decodes).
    #[arg(long)]
    pub image: PathBuf,
    /// Question shown to the model with the image.
    #[arg(long)]
    pub question: String,
    /// `http`, `scripted:<file>` or `oracle:<key file>`.
    #[arg(long, default_value = "http")]
    pub backend: String,
    /// Downsample the query by this rate, keeping the original for recall.
    #[arg(long)]
    pub compression: Option<f64>,
    /// Sampling seed sent to the backend.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Item id stored in the record; defaults to the image file stem.
    #[arg(long)]
    pub id: Option<String>,
    /// Also write the record here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplingPreset {
    /// Low temperature, for single attempts.
    Pass1,
    /// Exploratory, for multiple attempts.
    Passk,
    /// Whatever the config file says.
    Config,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AveragingArg {
    Pooled,
    Macro,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Benchmark manifest, one JSON item per line.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Attempts per item.
    #[arg(long, default_value_t = 1)]
    pub attempts: u32,
    /// Base seed; attempt seeds derive from it.
    #[arg(long)]
    pub seed: u64,
    /// `http`, `scripted:<file>` or `oracle:<key file>`.
    #[arg(long, default_value = "http")]
    pub backend: String,
    /// `rule`, `rule:contains` or `http`.
    #[arg(long, default_value = "rule")]
    pub judge: String,
    /// Directory for records and reports.
    #[arg(long, default_value = "eval_out")]
    pub out: PathBuf,
    /// pass@k cut-offs to report; defaults to 1 and the attempt count.
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<u32>,
    #[arg(long, value_enum, default_value = "pooled")]
    pub averaging: AveragingArg,
    /// Defaults to pass1 for one attempt and passk otherwise.
    #[arg(long, value_enum)]
    pub sampling: Option<SamplingPreset>,
    /// Run with no operations available.
    #[arg(long)]
    pub no_augment: bool,
    /// Compression rates; runs the compression comparison instead.
    #[arg(long, value_delimiter = ',')]
    pub compression: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Trace records with ground truth, several attempts per item.
    #[arg(long)]
    pub input: PathBuf,
    /// Seed for the 10% sample of items every attempt got right.
    #[arg(long)]
    pub seed: u64,
    /// `rule`, `rule:contains` or `http`.
    #[arg(long, default_value = "rule")]
    pub judge: String,
    /// Directory for kept, recheck and dropped records.
    #[arg(long, default_value = "filter_out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// QA manifest, one item per line.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Call text; repeat to cycle through several.
    #[arg(long = "op", required = true)]
    pub ops: Vec<String>,
    /// Trajectory template name.
    #[arg(long, default_value = "format_v1")]
    pub template: String,
    /// Write trajectories here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RewardsArgs {
    /// Trace records, one per line.
    #[arg(long)]
    pub input: PathBuf,
    /// `rule`, `rule:contains` or `http`.
    #[arg(long, default_value = "rule")]
    pub judge: String,
    /// Scored records are written here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Group,
    Trajectory,
}

#[derive(Debug, Args)]
pub struct GrpoArgs {
    /// Rollout groups, or scored trace records with `--from-traces`.
    #[arg(long)]
    pub input: PathBuf,
    /// Write training records here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// KL coefficient.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Group scored trace records by item id.
    #[arg(long)]
    pub from_traces: bool,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    /// Directory for images, manifest and answer key.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of items; perturbations cycle clean, rotated, mirrored, noisy.
    #[arg(long, default_value_t = 20)]
    pub items: usize,
    /// Seed for images and perturbations.
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address, e.g. 127.0.0.1:8088.
    #[arg(long)]
    pub bind: Option<String>,
    /// Shared secret required in the x-augchain-secret header.
    #[arg(long)]
    pub secret: Option<String>,
    /// Judge for the rewards endpoint: `rule`, `rule:contains` or `http`.
    #[arg(long)]
    pub judge: Option<String>,
    /// Default episode backend: `http`, `scripted:<file>` or `oracle:<key file>`.
    #[arg(long)]
    pub backend: Option<String>,
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        let (bind, secret) = match &self.command {
            Command::Serve(s) => (s.bind.clone(), s.secret.clone()),
            _ => (None, None),
        };
        Overrides {
            workers: self.workers,
            backend_url: self.backend_url.clone(),
            backend_model: self.backend_model.clone(),
            judge_url: self.judge_url.clone(),
            judge_model: self.judge_model.clone(),
            max_calls: self.max_calls,
            bind,
            secret,
        }
    }
}

struct Output {
    format: Format,
}

impl Output {
    fn records<T: Serialize>(&self, records: &[T]) -> Result<()> {
        let mut out = std::io::stdout().lock();
        for r in records {
            writeln!(out, "{}", to_line(r))?;
        }
        Ok(())
    }

    fn json<T: Serialize>(&self, value: &T) -> Result<()> {
        outln!("{}", serde_json::to_string_pretty(value)?);
        Ok(())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut config = CliConfig::resolve(cli.config.as_deref(), |k| std::env::var(k).ok(), &cli.overrides())?;
    let out = Output { format: cli.format };
    match cli.command {
        Command::Run(a) => cmd_run(&config, &out, a),
        Command::Eval(a) => cmd_eval(&config, &out, a),
        Command::Filter(a) => cmd_filter(&config, &out, a),
        Command::Synth(a) => cmd_synth(&out, a),
        Command::Rewards(a) => cmd_rewards(&config, &out, a),
        Command::Grpo(a) => cmd_grpo(&config, &out, a),
        Command::Fixture(a) => cmd_fixture(&out, a),
        Command::Serve(a) => {
            if let Some(j) = a.judge {
                config.service.judge = j;
            }
            if let Some(b) = a.backend {
                config.service.backend = b;
            }
            let state = Arc::new(ServiceState::new(config)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(state))
        }
    }
}

fn compression_rate(r: f64) -> Result<CompressionRate> {
    CompressionRate::new(r).ok_or_else(|| InputError(format!("compression rate {r} must be in (0, 1]")).into())
}

fn cmd_run(config: &CliConfig, out: &Output, a: RunArgs) -> Result<()> {
    let backend = backend_from_ref(&a.backend, &config.backend)?;
    let image = ImageBuffer::open(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let query = match a.compression {
        Some(r) => {
            let rate = compression_rate(r)?;
            EpisodeQuery::new(downsample_for_compression(&image, rate), a.question.clone()).with_original(image)
        }
        None => EpisodeQuery::new(image, a.question.clone()),
    };
    let mut episode = config.episode.clone();
    if let Some(seed) = a.seed {
        episode.sampling = episode.sampling.with_seed(seed);
    }
    let id = a.id.clone().unwrap_or_else(|| {
        a.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "query".into())
    });
    let (trace, failure) = match run_episode(backend.as_ref(), &query, &episode) {
        Ok(t) => (t, None),
        Err(e) => match (&e.kind, e.partial.clone()) {
            (EpisodeErrorKind::BackendUnavailable(_), Some(p)) => (*p, Some(e)),
            _ => return Err(e.into()),
        },
    };
    let mut record = TraceRecord::new(id, 0, episode.max_calls, trace);
    record.seed = a.seed;
    record.question = a.question;
    if let Some(e) = &failure {
        record.error = Some(augchain::ErrorMessage::new("backend_unavailable", e.kind.to_string()));
    }
    if let Some(path) = &a.out {
        write_jsonl(path, std::slice::from_ref(&record))?;
    }
    match out.format {
        Format::Records => out.records(std::slice::from_ref(&record))?,
        Format::Json => out.json(&record)?,
        Format::Text => {
            outln!("{}", render_history(&record.trace.history));
            outln!("answer: {}", record.trace.final_answer);
            outln!("calls: {} ({:?})", record.trace.call_count, record.trace.terminated_by);
        }
    }
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn cmd_eval(config: &CliConfig, out: &Output, a: EvalArgs) -> Result<()> {
    let (items, base) = load_manifest(&a.manifest)?;
    let backend = backend_from_ref(&a.backend, &config.backend)?;
    let judge = judge_from_ref(&a.judge, &config.judge)?;
    let preset = a
        .sampling
        .unwrap_or(if a.attempts <= 1 { SamplingPreset::Pass1 } else { SamplingPreset::Passk });
    let mut episode = config.episode.clone();
    episode.sampling = match preset {
        SamplingPreset::Pass1 => SamplingParams::pass_at_1(),
        SamplingPreset::Passk => SamplingParams::pass_at_k(),
        SamplingPreset::Config => episode.sampling,
    };
    if a.no_augment {
        episode.vocabulary = Vocabulary::empty();
    }
    let run = RunConfig {
        episode,
        attempts: a.attempts,
        seed: a.seed,
        workers: config.workers,
        compression: None,
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let images = ImageSource::Dir(&base);

    if !a.compression.is_empty() {
        let rates = a.compression.iter().map(|r| compression_rate(*r)).collect::<Result<Vec<_>>>()?;
        let report = compression_experiment(&items, &images, backend.as_ref(), judge.as_ref(), &run, &rates)?;
        write_json(&a.out.join("compression.json"), &report)?;
        write_text(&a.out.join("compression.txt"), &report.to_text())?;
        match out.format {
            Format::Text => out!("{}", report.to_text()),
            Format::Json => out.json(&report)?,
            Format::Records => out.records(&report.cells)?,
        }
        return Ok(());
    }

    let store = augchain::eval::default_store(&a.out);
    let outcome = run_benchmark(&items, &images, backend.as_ref(), &run, Some(&store))?;
    log::info!("{} attempt(s) executed, {} reused", outcome.executed, outcome.records.len() - outcome.executed);
    let ks = if a.k.is_empty() {
        let mut ks = vec![1, a.attempts];
        ks.dedup();
        ks
    } else {
        a.k.clone()
    };
    let averaging = match a.averaging {
        AveragingArg::Pooled => Averaging::Pooled,
        AveragingArg::Macro => Averaging::Macro,
    };
    let report = score_passk(&items, &outcome.records, judge.as_ref(), &ks, averaging, ReportHeader::from_config(&run))?;
    let traces: Vec<_> = outcome.records.iter().map(|r| &r.trace).collect();
    let freq = api_frequency(&traces);
    write_json(&a.out.join("passk.json"), &report)?;
    write_text(&a.out.join("passk.txt"), &report.to_text())?;
    write_json(&a.out.join("api_freq.json"), &freq)?;
    write_text(&a.out.join("api_freq.txt"), &freq.to_text())?;
    match out.format {
        Format::Text => out!("{}\n{}", report.to_text(), freq.to_text()),
        Format::Json => out.json(&serde_json::json!({ "passk": report, "api_frequency": freq }))?,
        Format::Records => out.records(&outcome.records)?,
    }
    if outcome.failed > 0 {
        return Err(PartialRun { failed: outcome.failed }.into());
    }
    Ok(())
}

/// Groups records by item id in first-seen order, attempts ascending.
fn group_by_item(records: Vec<TraceRecord>) -> Vec<Vec<TraceRecord>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<TraceRecord>> = HashMap::new();
    for r in records {
        if !groups.contains_key(&r.item_id) {
            order.push(r.item_id.clone());
        }
        groups.entry(r.item_id.clone()).or_default().push(r);
    }
    order
        .into_iter()
        .map(|id| {
            let mut g = groups.remove(&id).unwrap_or_default();
            g.sort_by_key(|r| r.attempt);
            g
        })
        .collect()
}

fn ground_truth(r: &TraceRecord) -> Result<&str> {
    r.ground_truth
        .as_deref()
        .ok_or_else(|| InputError(format!("record {} has no ground_truth", r.id)).into())
}

fn cmd_filter(config: &CliConfig, out: &Output, a: FilterArgs) -> Result<()> {
    let judge = judge_from_ref(&a.judge, &config.judge)?;
    let records: Vec<TraceRecord> = read_jsonl(&a.input)?;
    let mut scored = Vec::new();
    for group in group_by_item(records) {
        let first = &group[0];
        let attempts: Vec<String> = group
            .iter()
            .map(|r| if r.is_complete() { r.trace.final_answer.clone() } else { String::new() })
            .collect();
        scored.push(passk_difficulty(&first.item_id, &first.question, ground_truth(first)?, &attempts, judge.as_ref())?);
    }
    let outcome = apply_filter_policy(&scored, a.seed);
    let report = outcome.report(a.seed);
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_jsonl(a.out.join("kept.jsonl"), &outcome.kept)?;
    write_jsonl(a.out.join("recheck.jsonl"), &outcome.recheck)?;
    write_jsonl(a.out.join("dropped.jsonl"), &outcome.dropped)?;
    write_json(&a.out.join("filter_report.json"), &report)?;
    match out.format {
        Format::Text => {
            outln!("items {}  kept {}  recheck {}  dropped {}  seed {}", report.total, report.kept, report.recheck, report.dropped, report.seed);
            for (d, n) in &report.by_difficulty {
                outln!("difficulty {d}: {n}");
            }
        }
        Format::Json => out.json(&report)?,
        Format::Records => {
            out.records(&outcome.kept)?;
            out.records(&outcome.recheck)?;
            out.records(&outcome.dropped)?;
        }
    }
    Ok(())
}

fn cmd_synth(out: &Output, a: SynthArgs) -> Result<()> {
    let items: Vec<QaItem> = read_jsonl(&a.manifest)?;
    let ops = a
        .ops
        .iter()
        .map(|c| extract_call(c).map(|p| p.op).map_err(|e| InputError(format!("--op {c:?}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let trajectories = items
        .iter()
        .zip(ops.iter().cycle())
        .map(|(qa, op)| synth_format_trajectory(qa, op, &a.template))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(path) = &a.out {
        write_jsonl(path, &trajectories)?;
    }
    match (out.format, &a.out) {
        (Format::Text, Some(path)) => outln!("wrote {} trajectories to {}", trajectories.len(), path.display()),
        (Format::Text, None) => {
            for t in &trajectories {
                outln!("# {}\n{}\n", t.item_id, t.text);
            }
        }
        (Format::Json, _) => out.json(&trajectories)?,
        (Format::Records, _) => out.records(&trajectories)?,
    }
    Ok(())
}

fn cmd_rewards(config: &CliConfig, out: &Output, a: RewardsArgs) -> Result<()> {
    let judge = judge_from_ref(&a.judge, &config.judge)?;
    let mut records: Vec<TraceRecord> = read_jsonl(&a.input)?;
    let mut skipped = 0;
    for r in &mut records {
        if !r.is_complete() {
            skipped += 1;
            continue;
        }
        let mut rc = config.rewards;
        rc.max_calls = r.max_calls;
        r.rewards = Some(score_trace(&r.trace, ground_truth(r)?, judge.as_ref(), &rc)?);
    }
    if skipped > 0 {
        log::warn!("{skipped} aborted record(s) left unscored");
    }
    if let Some(path) = &a.out {
        write_jsonl(path, &records)?;
    }
    match out.format {
        Format::Text => {
            outln!("{:<24}{:>8}{:>8}{:>8}{:>8}{:>8}{:>8}", "id", "total", "vqa", "fmt", "cst", "api", "suc");
            for r in &records {
                match &r.rewards {
                    Some(b) => outln!(
                        "{:<24}{:>8.4}{:>8.3}{:>8.3}{:>8.3}{:>8.3}{:>8.3}",
                        r.id, b.total, b.r_vqa, b.r_fmt, b.r_cst, b.r_api, b.r_suc
                    ),
                    None => outln!("{:<24}{:>8}", r.id, "-"),
                }
            }
        }
        Format::Json => out.json(&records)?,
        Format::Records => out.records(&records)?,
    }
    Ok(())
}

fn cmd_grpo(config: &CliConfig, out: &Output, a: GrpoArgs) -> Result<()> {
    let mut grpo = config.grpo;
    if let Some(b) = a.beta {
        grpo.beta = b;
    }
    if let Some(m) = a.mode {
        grpo.mode = match m {
            ModeArg::Group => NormMode::Group,
            ModeArg::Trajectory => NormMode::Trajectory,
        };
    }
    let groups: Vec<RolloutGroup> = if a.from_traces {
        let records: Vec<TraceRecord> = read_jsonl(&a.input)?;
        group_by_item(records)
            .into_iter()
            .map(|g| {
                let traces = g
                    .into_iter()
                    .map(|r| {
                        let reward = r
                            .rewards
                            .as_ref()
                            .ok_or_else(|| InputError(format!("record {} has no rewards", r.id)))?
                            .total;
                        Ok(ScoredTrace::new(r.id, r.trace, reward))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let group_id = traces.first().map(|t| t.id.split('#').next().unwrap_or_default().to_string()).unwrap_or_default();
                Ok(RolloutGroup { group_id, traces })
            })
            .collect::<Result<_>>()?
    } else {
        read_jsonl(&a.input)?
    };
    let records = assemble_batch(&groups, &grpo)?;
    if let Some(path) = &a.out {
        write_text(path, &batch_to_jsonl(&records))?;
    }
    match (out.format, &a.out) {
        (Format::Text, Some(path)) => outln!("wrote {} training records to {}", records.len(), path.display()),
        (Format::Text, None) | (Format::Records, _) => out!("{}", batch_to_jsonl(&records)),
        (Format::Json, _) => out.json(&records)?,
    }
    Ok(())
}

fn cmd_fixture(out: &Output, a: FixtureArgs) -> Result<()> {
    let fx = synthesize_fixture(a.items, a.seed);
    let manifest = fx.write(&a.out)?;
    match out.format {
        Format::Text => outln!(
            "wrote {} items to {} (answer key: {}; unaided rate {:.2})",
            fx.items.len(),
            manifest.display(),
            a.out.join("fixture.jsonl").display(),
            fx.unaided_rate()
        ),
        Format::Json => out.json(&fx.benchmark_items())?,
        Format::Records => out.records(&fx.benchmark_items())?,
    }
    Ok(())
}
