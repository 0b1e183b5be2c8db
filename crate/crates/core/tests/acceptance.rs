//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits non-zero if any failed or ran over its time limit.
//!
//! Set `AUGCHAIN_BLESS=1` to rewrite the golden loop traces.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use augchain::agent::{
    run_episode, ChatHistory, EpisodeConfig, EpisodeQuery, EpisodeTrace, Message, Role,
    ScriptedBackend, Termination, TraceRecord, FORCED_ANSWER_MESSAGE,
};
use augchain::augment::{
    downsample_for_compression, Channels, CompressionRate, DenoiseMethod, ExecLimits, Factor,
    FlipAxis, Rotation, Vocabulary,
};
use augchain::eval::{
    api_frequency, passk_from_verdicts, run_benchmark, score_passk, synthesize_fixture, Averaging,
    BenchmarkItem, ImageSource, ItemVerdicts, OracleBackend, ReportHeader, RunConfig, Split,
};
use augchain::grpo::{build_loss_sequence, group_normalize, kl_term, kl_value, DEGENERATE_STD};
use augchain::parser::ParseErrorCode;
use augchain::pipeline::{apply_filter_policy, DifficultyRecord, Disposition, EASY_KEEP_RATE};
use augchain::rewards::{
    reward_suc, reward_vqa, total_reward, vqa_window, RewardParts, RewardWeights, RuleJudge,
    VQA_WINDOW_CHARS,
};
use augchain::{apply_op, extract_call, AugmentationOp, ImageBuffer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

struct Criterion {
    name: &'static str,
    limit: Duration,
    run: fn(),
}

const CRITERIA: [Criterion; 11] = [
    Criterion { name: "success reward exhaustive table", limit: Duration::from_secs(1), run: success_reward_table },
    Criterion { name: "weighted total and monotonicity", limit: Duration::from_secs(1), run: weighted_total },
    Criterion { name: "loss masking on fuzzed traces", limit: Duration::from_secs(10), run: loss_masking },
    Criterion { name: "group normalization and KL", limit: Duration::from_secs(10), run: normalization_and_kl },
    Criterion { name: "golden loop traces", limit: Duration::from_secs(5), run: golden_loop_traces },
    Criterion { name: "augmentation exactness", limit: Duration::from_secs(30), run: augmentation_exactness },
    Criterion { name: "parser round-trip and fuzzing", limit: Duration::from_secs(30), run: parser_round_trip_and_fuzz },
    Criterion { name: "difficulty filter policy", limit: Duration::from_secs(10), run: difficulty_filter },
    Criterion { name: "pass@k algebra and presence statistics", limit: Duration::from_secs(5), run: passk_algebra },
    Criterion { name: "judge window metamorphic suite", limit: Duration::from_secs(5), run: judge_window },
    Criterion { name: "end-to-end adversarial fixture", limit: Duration::from_secs(60), run: end_to_end },
];

fn main() {
    let mut failed = 0;
    for c in &CRITERIA {
        let start = Instant::now();
        let result = panic::catch_unwind(c.run);
        let elapsed = start.elapsed();
        let verdict = match result {
            Ok(()) if elapsed <= c.limit => "PASS",
            Ok(()) => "FAIL (over time limit)",
            Err(_) => "FAIL",
        };
        if verdict != "PASS" {
            failed += 1;
        }
        println!(
            "{verdict:<6} {:<42} {:>8.1} ms  (limit {} s)",
            c.name,
            elapsed.as_secs_f64() * 1e3,
            c.limit.as_secs()
        );
    }
    println!("acceptance: {} passed, {failed} failed", CRITERIA.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn noise_image(r: &mut ChaCha8Rng, w: u32, h: u32, channels: Channels) -> ImageBuffer {
    let n = (w * h) as usize * channels.count();
    let pixels = (0..n).map(|_| r.random()).collect();
    ImageBuffer::new(w, h, channels, pixels).unwrap()
}

fn query_image() -> ImageBuffer {
    ImageBuffer::from_fn(32, 24, Channels::Rgb, |x, y, c| (x * 7 + y * 13 + c as u32 * 61) as u8)
}

fn episode(spans: &[String], max_calls: u32) -> EpisodeTrace {
    let config = EpisodeConfig { max_calls, ..Default::default() };
    run_episode(
        &ScriptedBackend::new(spans.iter().cloned()),
        &EpisodeQuery::new(query_image(), "What does the sign say?"),
        &config,
    )
    .expect("scripted episode completes")
}

fn random_op(r: &mut ChaCha8Rng) -> AugmentationOp {
    match r.random_range(0..7) {
        0 => {
            let (x0, y0) = (r.random_range(0..5000), r.random_range(0..5000));
            AugmentationOp::Crop {
                x0,
                y0,
                x1: x0 + r.random_range(1..5000),
                y1: y0 + r.random_range(1..5000),
            }
        }
        1 => {
            let den = [1, 2, 3, 4, 5, 7, 10, 100][r.random_range(0..8)];
            let num = r.random_range(den..=8 * den);
            AugmentationOp::ResizeUp { factor: Factor::new(num, den).unwrap() }
        }
        2 => {
            let den: u32 = [1, 2, 3, 4, 5, 8, 10, 100][r.random_range(0..8)];
            let num = r.random_range(den.div_ceil(8).max(1)..=den);
            let factor = Factor::new(num, den).unwrap();
            let factor = if ExecLimits::default().factor_in_range(factor) { factor } else { Factor::new(1, 2).unwrap() };
            AugmentationOp::ResizeDown { factor }
        }
        3 => AugmentationOp::Rotate {
            degrees: [Rotation::Deg90, Rotation::Deg180, Rotation::Deg270][r.random_range(0..3)],
        },
        4 => AugmentationOp::Flip {
            axis: if r.random_bool(0.5) { FlipAxis::Horizontal } else { FlipAxis::Vertical },
        },
        5 => AugmentationOp::Denoise {
            method: [DenoiseMethod::Gaussian, DenoiseMethod::Median, DenoiseMethod::Bilateral][r.random_range(0..3)],
            kernel_size: 3 + 2 * r.random_range(0..15),
        },
        _ => AugmentationOp::Edge,
    }
}

fn random_text(r: &mut ChaCha8Rng, len: usize) -> String {
    const ALPHABET: &[char] = &[
        'a', 'b', 'c', 'x', 'y', 'z', ' ', ' ', '\n', '0', '7', '.', ',', 'é', '漢', '字', '<', '>', '/',
    ];
    (0..len).map(|_| ALPHABET[r.random_range(0..ALPHABET.len())]).collect()
}

fn success_reward_table() {
    // the piecewise definition, written case by case
    fn expected(r_vqa: f64, k: u32, big_k: u32) -> f64 {
        if r_vqa < 0.5 {
            0.0
        } else if k <= 2 {
            1.0
        } else if k <= big_k {
            1.0 - (k as f64 - 2.0) / (big_k as f64 - 2.0)
        } else {
            0.0
        }
    }
    for big_k in [3, 8, 16] {
        for r_vqa in [0.0, 0.49, 0.5, 1.0] {
            for k in 0..=2 * big_k {
                let got = reward_suc(r_vqa, k, big_k).unwrap();
                assert_eq!(got.to_bits(), expected(r_vqa, k, big_k).to_bits(), "({r_vqa}, {k}, {big_k})");
            }
        }
    }
    assert_eq!(reward_suc(0.9, 5, 8).unwrap(), 0.5);
    assert_eq!(reward_suc(0.9, 2, 8).unwrap(), 1.0);
    assert_eq!(reward_suc(0.9, 9, 8).unwrap(), 0.0);
}

fn weighted_total() {
    let weights = RewardWeights::default();
    assert_eq!(weights.as_array(), [1.0, 0.25, 0.5, 0.25, 0.5]);
    let ones = RewardParts { r_vqa: 1.0, r_fmt: 1.0, r_cst: 1.0, r_api: 1.0, r_suc: 1.0 };
    assert_eq!(total_reward(ones, &weights).total, 2.5);
    let only_vqa = RewardParts { r_vqa: 1.0, ..Default::default() };
    assert_eq!(total_reward(only_vqa, &weights).total, 1.0);
    assert_eq!(total_reward(RewardParts::default(), &weights).total, 0.0);

    let mut r = rng(9);
    for _ in 0..10_000 {
        let base: [f64; 5] = std::array::from_fn(|_| r.random());
        let at = |a: [f64; 5]| {
            total_reward(
                RewardParts { r_vqa: a[0], r_fmt: a[1], r_cst: a[2], r_api: a[3], r_suc: a[4] },
                &weights,
            )
            .total
        };
        let t0 = at(base);
        assert!((0.0..=2.5).contains(&t0));
        let i = r.random_range(0..5);
        let mut up = base;
        up[i] = r.random_range(base[i]..=1.0);
        assert!(at(up) >= t0, "component {i} raised from {} to {} lowered the total", base[i], up[i]);
    }
}

/// Like [`random_op`] but cheap to execute; masking does not depend on pixels.
fn cheap_op(r: &mut ChaCha8Rng) -> AugmentationOp {
    match random_op(r) {
        AugmentationOp::ResizeUp { .. } => AugmentationOp::ResizeUp { factor: Factor::new(3, 2).unwrap() },
        AugmentationOp::Denoise { method, .. } => AugmentationOp::Denoise { method, kernel_size: 3 },
        op => op,
    }
}

fn random_span(r: &mut ChaCha8Rng) -> String {
    let len = r.random_range(0..60);
    let think = format!("<think>{}</think>\n", random_text(r, len));
    let body = match r.random_range(0..6) {
        0..=2 => {
            let call = cheap_op(r).render_call("image_path");
            if r.random_bool(0.5) {
                format!("<code>\nimage_path = {call}\n</code>")
            } else {
                format!("<code>{call}</code>")
            }
        }
        3 => "<code>sharpen(image_path, amount=2)</code>".to_string(),
        4 => format!("<code>{}</code>", random_text(r, 12).replace(['<', '>', '/'], "")),
        _ => "<code>rotate(image_path, degrees=45)</code>".to_string(),
    };
    format!("{think}{body}")
}

fn loss_masking() {
    let mut r = rng(5);
    let mut forced = 0;
    for _ in 0..1000 {
        let k = r.random_range(1..=5);
        let calls = r.random_range(0..=k + 2);
        let mut spans: Vec<String> = (0..calls).map(|_| random_span(&mut r)).collect();
        spans.push(format!("<think>{}</think>\n<answer>{}</answer>", random_text(&mut r, 20), random_text(&mut r, 4)));
        let trace = episode(&spans, k);
        forced += usize::from(trace.terminated_by == Termination::Forced);
        let seq = build_loss_sequence(&trace).unwrap();

        assert_eq!(seq.text().as_bytes(), trace.rendered().as_bytes());
        let excluded: Vec<String> = seq.excluded().map(|s| s.text.clone()).collect();
        let tool_blocks: Vec<String> = trace
            .history
            .messages()
            .iter()
            .filter(|m| m.role == Role::ToolOutput)
            .map(Message::body)
            .collect();
        assert_eq!(excluded, tool_blocks);
        for block in &excluded {
            assert!(block.starts_with("<output>") && block.ends_with("</output>"));
        }
        let included: usize = seq.spans.iter().filter(|s| s.include).map(|s| s.text.chars().count()).sum();
        let excluded_len: usize = excluded.iter().map(|b| b.chars().count()).sum();
        assert_eq!(included + excluded_len, trace.rendered().chars().count());
    }
    assert!(forced > 0, "fuzzer never reached the call budget");
}

fn normalization_and_kl() {
    let mut r = rng(7);
    let mut degenerate = 0;
    for n in 0..10_000 {
        let g = [2, 4, 8][n % 3];
        let rewards: Vec<f64> = if r.random_bool(0.1) {
            degenerate += 1;
            vec![r.random_range(0.0..2.5); g]
        } else {
            (0..g).map(|_| r.random_range(0.0..2.5)).collect()
        };
        let adv = group_normalize(&rewards).unwrap();
        let mean_r = rewards.iter().sum::<f64>() / g as f64;
        let std_r = (rewards.iter().map(|x| (x - mean_r).powi(2)).sum::<f64>() / g as f64).sqrt();
        if std_r < DEGENERATE_STD {
            assert!(adv.iter().all(|a| *a == 0.0));
            continue;
        }
        let mean = adv.iter().sum::<f64>() / g as f64;
        let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / g as f64).sqrt();
        assert!(mean.abs() <= 1e-9, "mean {mean}");
        assert!((std - 1.0).abs() <= 1e-6, "std {std}");
    }
    assert!(degenerate > 0);

    for _ in 0..2_000 {
        let len = r.random_range(1..64);
        let policy: Vec<f64> = (0..len).map(|_| r.random_range(-30.0..0.0)).collect();
        let reference: Vec<f64> = (0..len).map(|_| r.random_range(-30.0..0.0)).collect();
        let kl = kl_term(&policy, &reference, 0.01).unwrap();
        assert!(kl.values.iter().all(|v| *v >= 0.0));
        let same = kl_term(&policy, &policy, 0.01).unwrap();
        assert!(same.values.iter().all(|v| *v == 0.0));
    }
    for (p, q) in [(-1e-12, -2e-12), (0.0, -700.0), (-700.0, 0.0), (-1.0, -1.0 - f64::EPSILON)] {
        assert!(kl_value(p, q) >= 0.0);
    }
}

fn golden_doc(t: &EpisodeTrace) -> String {
    let attachments: Vec<_> = t
        .history
        .messages()
        .iter()
        .enumerate()
        .flat_map(|(i, m)| {
            m.attachments.iter().map(move |a| {
                json!({
                    "message": i,
                    "generation": a.generation,
                    "width": a.image.width(),
                    "height": a.image.height(),
                    "sha256": a.image.digest(),
                })
            })
        })
        .collect();
    let doc = json!({
        "rendered": t.rendered(),
        "final_answer": t.final_answer,
        "call_count": t.call_count,
        "terminated_by": t.terminated_by,
        "calls": t.calls,
        "attachments": attachments,
    });
    serde_json::to_string_pretty(&doc).unwrap() + "\n"
}

fn golden_loop_traces() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let bless = std::env::var_os("AUGCHAIN_BLESS").is_some();
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let cases = [
        ("loop_a_direct", s(&["<think>The sign is clear.</think>\n<answer>STOP</answer>"]), 8),
        (
            "loop_b_one_call",
            s(&[
                "<think>The text is upside down.</think>\n<code>\nimage_path = rotate(image_path, degrees=180)\n</code>",
                "<think>Now it reads STOP.</think>\n<answer>STOP</answer>",
            ]),
            8,
        ),
        (
            "loop_c_invalid_op",
            s(&[
                "<think>Sharpen it.</think>\n<code>sharpen(image_path, amount=2)</code>",
                "<think>Use a median filter instead.</think>\n<code>denoise(image_path, method=\"median\", kernel_size=3)</code>",
                "<think>Readable now.</think>\n<answer>STOP</answer>",
            ]),
            8,
        ),
        (
            "loop_d_forced",
            s(&[
                "<think>Mirror it.</think>\n<code>flip(image_path, axis=\"horizontal\")</code>",
                "<think>Edges.</think>\n<code>edge(image_path)</code>",
                "<think>Once more.</think>\n<code>rotate(image_path, degrees=90)</code>",
                "<think>Out of calls.</think>\n<answer>STOP</answer>",
            ]),
            2,
        ),
    ];
    for (name, spans, k) in &cases {
        let k = *k;
        let first = golden_doc(&episode(spans, k));
        assert_eq!(first, golden_doc(&episode(spans, k)), "{name} differs between runs");
        let path = dir.join(format!("{name}.json"));
        if bless {
            std::fs::create_dir_all(&dir).unwrap();
            std::fs::write(&path, &first).unwrap();
        }
        let frozen = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(first, frozen, "{name} drifted from its golden file");
    }
    let d = episode(&cases[3].1, 2);
    assert_eq!(d.terminated_by, Termination::Forced);
    assert!(d.rendered().contains("OK, I have to give the final answer directly"));
    assert_eq!(FORCED_ANSWER_MESSAGE, "OK, I have to give the final answer directly");
    let c = episode(&cases[2].1, 8);
    let tool: Vec<_> = c.history.messages().iter().filter(|m| m.role == Role::ToolOutput).collect();
    assert!(tool[0].text.starts_with("Error: unknown operation 'sharpen'"));
}

/// Median of the clamped 3x3 neighbourhood, by sorting the full window.
fn brute_median3(img: &ImageBuffer, x: u32, y: u32, ch: usize) -> u8 {
    let mut window = Vec::with_capacity(9);
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            let sx = (x as i64 + dx).clamp(0, img.width() as i64 - 1) as u32;
            let sy = (y as i64 + dy).clamp(0, img.height() as i64 - 1) as u32;
            window.push(img.get(sx, sy, ch));
        }
    }
    window.sort_unstable();
    window[4]
}

fn augmentation_exactness() {
    let limits = ExecLimits::default();
    let run = |img: &ImageBuffer, op: AugmentationOp| apply_op(img, &op, img, &limits).result.unwrap();
    let mut r = rng(11);
    for _ in 0..100 {
        let ch = if r.random_bool(0.5) { Channels::Rgb } else { Channels::Gray };
        let (w, h) = (r.random_range(1..48), r.random_range(1..48));
        let img = noise_image(&mut r, w, h, ch);
        for axis in [FlipAxis::Horizontal, FlipAxis::Vertical] {
            let once = run(&img, AugmentationOp::Flip { axis });
            assert_eq!(run(&once, AugmentationOp::Flip { axis }), img);
        }
        for deg in [Rotation::Deg90, Rotation::Deg180, Rotation::Deg270] {
            let once = run(&img, AugmentationOp::Rotate { degrees: deg });
            assert_eq!(run(&once, AugmentationOp::Rotate { degrees: deg.inverse() }), img);
        }
        let mut spun = img.clone();
        for _ in 0..4 {
            spun = run(&spun, AugmentationOp::Rotate { degrees: Rotation::Deg90 });
        }
        assert_eq!(spun, img);
    }

    let median = AugmentationOp::Denoise { method: DenoiseMethod::Median, kernel_size: 3 };
    for _ in 0..20 {
        let (w, h) = (r.random_range(8..64), r.random_range(8..64));
        let (fx, fy, fc) = (r.random_range(1..4), r.random_range(1..4), r.random_range(0..40));
        let clean = ImageBuffer::from_fn(w, h, Channels::Rgb, |x, y, c| {
            (60 + (x * fx + y * fy + c as u32 * fc) % 120) as u8
        });
        // isolated outliers: no two share a 3x3 neighbourhood
        let mut noisy = clean.clone();
        let mut outliers = Vec::new();
        for y in (0..h).step_by(3) {
            for x in (0..w).step_by(3) {
                if r.random_bool(0.6) {
                    let v = if r.random_bool(0.5) { 255 } else { 0 };
                    for c in 0..3 {
                        noisy.set(x, y, c, v);
                    }
                    outliers.push((x, y));
                }
            }
        }
        let out = run(&noisy, median);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    assert_eq!(out.get(x, y, c), brute_median3(&noisy, x, y, c), "({x},{y},{c})");
                }
            }
        }
        for &(x, y) in &outliers {
            for c in 0..3 {
                let v = out.get(x, y, c);
                assert!(v != 0 && v != 255, "outlier at ({x},{y}) survived");
            }
        }
    }

    let rate = CompressionRate::new(0.5).unwrap();
    for _ in 0..20 {
        let (w, h) = (r.random_range(58..160), r.random_range(58..160));
        let original = noise_image(&mut r, w, h, Channels::Rgb);
        let small = downsample_for_compression(&original, rate);
        assert!(small.width() < original.width());
        let up = AugmentationOp::ResizeUp { factor: Factor::integer(2).unwrap() };
        assert_eq!(apply_op(&small, &up, &original, &limits).result.unwrap(), original);

        let spans = ["<code>resize_up(image_path, factor=2)</code>", "<answer>x</answer>"];
        let trace = run_episode(
            &ScriptedBackend::new(spans),
            &EpisodeQuery::new(small, "q").with_original(original.clone()),
            &EpisodeConfig::default(),
        )
        .unwrap();
        assert_eq!(*trace.history.latest_image().unwrap().image, original);
    }
}

fn mutate(r: &mut ChaCha8Rng, s: &str) -> String {
    let mut chars: Vec<char> = s.chars().collect();
    for _ in 0..r.random_range(1..4) {
        let at = r.random_range(0..=chars.len());
        match r.random_range(0..3) {
            0 if at < chars.len() => {
                chars.remove(at);
            }
            1 if at < chars.len() => chars[at] = char::from(r.random_range(0x20u8..0x7f)),
            _ => chars.insert(at, ['(', ')', ',', '=', '"', '\'', '\\', '/', '-', '.', '9', 'e'][r.random_range(0..12)]),
        }
    }
    chars.into_iter().collect()
}

fn parser_round_trip_and_fuzz() {
    let mut r = rng(13);
    let idents = ["image_path", "img", "x_1", "_frame"];
    let mut corpus = Vec::new();
    for _ in 0..10_000 {
        let op = random_op(&mut r);
        let image = idents[r.random_range(0..idents.len())];
        let target = r.random_bool(0.5).then(|| idents[r.random_range(0..idents.len())]);
        let mut text = op.render_call(image);
        if let Some(t) = target {
            text = format!("{t} = {text}");
        }
        if r.random_bool(0.3) {
            text.push(';');
        }
        if r.random_bool(0.3) {
            text = format!("\n  {text}\n");
        }
        let parsed = extract_call(&text).unwrap_or_else(|e| panic!("{text:?}: {e}"));
        assert_eq!(parsed.op, op, "{text:?}");
        assert_eq!(parsed.image_arg.as_deref(), Some(image));
        assert_eq!(parsed.assignment_target.as_deref(), target);
        let again = extract_call(&parsed.render()).unwrap();
        assert_eq!((again.op, &again.image_arg, &again.assignment_target), (op, &parsed.image_arg, &parsed.assignment_target));
        corpus.push(text);
    }

    let codes = [ParseErrorCode::UnknownOperation, ParseErrorCode::ParamInvalid, ParseErrorCode::SyntaxMalformed];
    for i in 0..100_000 {
        let input = match i % 3 {
            0 => {
                let bytes: Vec<u8> = (0..r.random_range(0..64)).map(|_| r.random()).collect();
                String::from_utf8_lossy(&bytes).into_owned()
            }
            1 => random_text(&mut r, 24),
            _ => {
                let pick = r.random_range(0..corpus.len());
                mutate(&mut r, &corpus[pick])
            }
        };
        let result = panic::catch_unwind(AssertUnwindSafe(|| extract_call(&input)));
        match result {
            Ok(Ok(_)) => {}
            Ok(Err(e)) => {
                assert!(codes.contains(&e.code));
                assert!(e.message.starts_with("Error: "), "{:?}", e.message);
            }
            Err(_) => panic!("parser panicked on {input:?}"),
        }
    }
}

/// Kept count for 10,000 zero-difficulty records under seed 20240601.
const FROZEN_LEVEL0_KEPT: usize = 1007;

fn difficulty_filter() {
    let k = 4;
    let level = |id: usize, d: u32| {
        let flags = (0..k).map(|i| i >= d).collect();
        DifficultyRecord::from_flags(format!("q{id:05}"), flags)
    };
    let easy: Vec<DifficultyRecord> = (0..10_000).map(|i| level(i, 0)).collect();
    let seed = 20240601;
    let a = apply_filter_policy(&easy, seed);
    let b = apply_filter_policy(&easy, seed);
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    let kept = a.kept.len();
    let n = easy.len() as f64;
    let sigma = (n * EASY_KEEP_RATE * (1.0 - EASY_KEEP_RATE)).sqrt();
    assert!((kept as f64 - n * EASY_KEEP_RATE).abs() <= 3.0 * sigma, "kept {kept}");
    assert_eq!(kept, FROZEN_LEVEL0_KEPT, "seeded draw changed");
    assert_ne!(apply_filter_policy(&easy, seed + 1).kept, a.kept);

    // harder levels interleaved with the easy ones do not disturb the draws
    let mut mixed = Vec::new();
    for (i, e) in easy.iter().enumerate() {
        mixed.push(e.clone());
        mixed.push(level(10_000 + i, 1 + (i % 4) as u32));
    }
    let m = apply_filter_policy(&mixed, seed);
    let kept_easy: Vec<&str> = m.kept.iter().filter(|r| r.difficulty == 0).map(|r| r.item_id.as_str()).collect();
    let kept_alone: Vec<&str> = a.kept.iter().map(|r| r.item_id.as_str()).collect();
    assert_eq!(kept_easy, kept_alone);
    for d in 1..=3 {
        let total = mixed.iter().filter(|r| r.difficulty == d).count();
        let kept = m.kept.iter().filter(|r| r.difficulty == d).count();
        assert_eq!(kept, total, "level {d}");
    }
    let hard = mixed.iter().filter(|r| r.difficulty == 4).count();
    assert_eq!(m.recheck.len(), hard);
    assert!(m.recheck.iter().all(|r| r.difficulty == 4 && r.disposition == Some(Disposition::RecheckValidity)));
    assert!(m.dropped.iter().all(|r| r.difficulty == 0));
}

fn verdicts(id: &str, split: Split, v: &[bool]) -> ItemVerdicts {
    ItemVerdicts {
        id: id.into(),
        split,
        scores: v.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        verdicts: v.to_vec(),
        aborted: 0,
    }
}

fn header() -> ReportHeader {
    ReportHeader::from_config(&RunConfig::default())
}

fn passk_algebra() {
    let mut r = rng(17);
    for _ in 0..500 {
        let items: Vec<ItemVerdicts> = (0..r.random_range(1..30))
            .map(|i| {
                let split = [Split::RealWorld, Split::Synthetic, Split::Other][r.random_range(0..3)];
                let p = r.random::<f64>();
                let v: Vec<bool> = (0..5).map(|_| r.random_bool(p)).collect();
                verdicts(&format!("i{i}"), split, &v)
            })
            .collect();
        for averaging in [Averaging::Pooled, Averaging::Macro] {
            let rep = passk_from_verdicts(items.clone(), &[1, 2, 3, 4, 5], averaging, header());
            let p = &rep.overall.pass;
            for k in 1..5 {
                assert!(p[&format!("pass@{}", k + 1)] >= p[&format!("pass@{k}")]);
            }
            for rates in rep.splits.values() {
                assert!(rates.pass["pass@5"] >= rates.pass["pass@1"]);
            }
        }
    }

    // one real-world item right, one of three synthetic items right
    let answer = |a: &str| format!("<think>t</think><answer>{a}</answer>");
    let items: Vec<BenchmarkItem> = [("r0", Split::RealWorld), ("s0", Split::Synthetic), ("s1", Split::Synthetic), ("s2", Split::Synthetic)]
        .into_iter()
        .map(|(id, split)| BenchmarkItem {
            id: id.into(),
            image: PathBuf::from(format!("{id}.png")),
            question: "q".into(),
            ground_truth: "yes".into(),
            split,
            kind: None,
        })
        .collect();
    let records: Vec<TraceRecord> = ["yes", "yes", "no", "no"]
        .iter()
        .zip(&items)
        .map(|(a, item)| TraceRecord::new(item.id.clone(), 0, 8, episode(&[answer(a)], 8)))
        .collect();
    let judge = RuleJudge::exact();
    let pooled = score_passk(&items, &records, &judge, &[1], Averaging::Pooled, header()).unwrap();
    let macro_ = score_passk(&items, &records, &judge, &[1], Averaging::Macro, header()).unwrap();
    assert_eq!(pooled.overall.pass["pass@1"], 0.5);
    assert_eq!(macro_.overall.pass["pass@1"], (1.0 + 1.0 / 3.0) / 2.0);

    // presence statistics over five scripted episodes, counted by hand:
    // direct 1, fail 2 (parse error, forced), crop 1, resize 1, flip 1,
    // rotate 1, denoise 2, edge 1
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let traces = [
        episode(&s(&["<answer>a</answer>"]), 8),
        episode(
            &s(&[
                "<code>flip(image_path, axis=\"vertical\")</code>",
                "<code>rotate(image_path, degrees=90)</code>",
                "<code>denoise(image_path, method=\"median\", kernel_size=3)</code>",
                "<answer>a</answer>",
            ]),
            8,
        ),
        episode(
            &s(&[
                "<code>resize_up(image_path, factor=2)</code>",
                "<code>resize_down(image_path, factor=0.5)</code>",
                "<code>crop(image_path, 0, 0, 8, 8)</code>",
                "<code>denoise(image_path, method=\"gaussian\", kernel_size=5)</code>",
                "<answer>a</answer>",
            ]),
            8,
        ),
        episode(&s(&["<code>sharpen(image_path)</code>", "<answer>a</answer>"]), 8),
        episode(&s(&["<code>edge(image_path)</code>", "<code>edge(image_path)</code>", "<answer>a</answer>"]), 1),
    ];
    let refs: Vec<&EpisodeTrace> = traces.iter().collect();
    let freq = api_frequency(&refs);
    let expected: BTreeMap<&str, usize> =
        [("direct", 1), ("fail", 2), ("crop", 1), ("resize", 1), ("flip", 1), ("rotate", 1), ("denoise", 2), ("edge", 1)].into();
    for (col, n) in &expected {
        assert_eq!(freq.counts[*col], *n, "{col}");
    }
    assert_eq!(freq.total, 5);
    assert_eq!(freq.direct, 20.0);
    assert_eq!(freq.fail, 40.0);
    assert_eq!(freq.ops["denoise"], 40.0);
    assert_eq!(freq.ops["resize"], 20.0);
}

/// Character offset in the rendered history where each message's `text` starts.
fn text_offsets(history: &ChatHistory) -> Vec<usize> {
    let mut at = 0;
    history
        .messages()
        .iter()
        .map(|m| {
            let mut prefix = m.role.header().chars().count() + 7 * m.attachments.len();
            if m.role == Role::ToolOutput {
                prefix += "<output>".len();
            }
            let start = at + prefix;
            at += m.role.header().chars().count() + m.body().chars().count() + 1;
            start
        })
        .collect()
}

fn judge_window() {
    let mut r = rng(19);
    let judges = [RuleJudge::exact(), RuleJudge::contains()];
    let mut cases = 0;
    while cases < 1000 {
        let truth = ["STOP", "42", "exit 3"][r.random_range(0..3)];
        let len = r.random_range(300..900);
        let think = random_text(&mut r, len);
        let mut spans = vec![format!("<think>{think}</think>\n<code>flip(image_path, axis=\"vertical\")</code>")];
        let said = if r.random_bool(0.5) { truth.to_string() } else { random_text(&mut r, 4) };
        let len = r.random_range(0..450);
        let tail = random_text(&mut r, len);
        spans.push(format!("<think>{tail}</think>\n<answer>{said}</answer>"));
        let trace = episode(&spans, 8);
        let rendered = trace.rendered();
        let n = rendered.chars().count();
        let limit = n.saturating_sub(VQA_WINDOW_CHARS);

        let offsets = text_offsets(&trace.history);
        let messages = trace.history.messages();
        let mut targets = Vec::new();
        for (i, m) in messages.iter().enumerate() {
            for j in 0..m.text.chars().count() {
                if offsets[i] + j < limit {
                    targets.push((i, j));
                }
            }
        }
        if targets.is_empty() {
            continue;
        }
        let (i, j) = targets[r.random_range(0..targets.len())];
        let replacement = ['<', '>', 'A', '/', ' ', '漢', '\n'][r.random_range(0..7)];
        let mut mutated: Vec<Message> = messages.to_vec();
        mutated[i].text = mutated[i].text.chars().enumerate().map(|(p, c)| if p == j { replacement } else { c }).collect();
        let mut other = trace.clone();
        other.history = ChatHistory::from_messages(mutated);

        let rendered_other = other.rendered();
        let changed: Vec<usize> = rendered.chars().zip(rendered_other.chars()).enumerate().filter(|(_, (a, b))| a != b).map(|(p, _)| p).collect();
        assert!(changed.iter().all(|p| *p < limit), "mutation landed inside the window");
        assert_eq!(vqa_window(&rendered), vqa_window(&rendered_other));
        for judge in &judges {
            assert_eq!(reward_vqa(&trace, truth, judge).unwrap(), reward_vqa(&other, truth, judge).unwrap());
        }
        cases += 1;
    }
}

fn end_to_end() {
    let fixture = synthesize_fixture(20, 2024);
    let oracle = OracleBackend::from_fixture(&fixture);
    let items = fixture.benchmark_items();
    let load = |item: &BenchmarkItem| fixture.image_for(&item.id);
    let images = ImageSource::Loaded(&load);
    let judge = RuleJudge::exact();

    let mut config = RunConfig::default();
    let with = run_benchmark(&items, &images, &oracle, &config, None).unwrap();
    assert_eq!(with.failed, 0);
    let report = score_passk(&items, &with.records, &judge, &[1], Averaging::Pooled, ReportHeader::from_config(&config)).unwrap();
    assert_eq!(report.overall.pass["pass@1"], 1.0);

    config.episode.vocabulary = Vocabulary::empty();
    let without = run_benchmark(&items, &images, &oracle, &config, None).unwrap();
    assert_eq!(without.failed, 0);
    let report = score_passk(&items, &without.records, &judge, &[1], Averaging::Pooled, ReportHeader::from_config(&config)).unwrap();
    assert_eq!(fixture.unaided_rate(), 0.25);
    assert_eq!(report.overall.pass["pass@1"], fixture.unaided_rate());
}
