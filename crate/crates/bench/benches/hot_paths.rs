use std::hint::black_box;

use augchain::augment::{DenoiseMethod, ExecLimits, Factor, FlipAxis, Rotation};
use augchain::grpo::{assemble_batch, build_loss_sequence, GrpoConfig, RolloutGroup, ScoredTrace};
use augchain::rewards::{score_trace, RewardConfig, RuleJudge};
use augchain::{apply_op, extract_call, AugmentationOp};
use augchain_bench::{pattern, trace_with_calls};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn parser(c: &mut Criterion) {
    let calls = [
        "crop(image_path, 10, 20, 110, 220)",
        "image_path = denoise(image_path, method=\"median\", kernel_size=5)",
        "resize_up(image_path, factor=2.5)",
        "rotate(image_path, degrees=270)",
    ];
    c.bench_function("parse_call", |b| {
        b.iter(|| {
            for call in &calls {
                black_box(extract_call(black_box(call)).ok());
            }
        })
    });
}

fn augment(c: &mut Criterion) {
    let limits = ExecLimits::default();
    let mut g = c.benchmark_group("augment_512x384");
    let img = pattern(512, 384);
    let ops = [
        ("rotate90", AugmentationOp::Rotate { degrees: Rotation::Deg90 }),
        ("flip", AugmentationOp::Flip { axis: FlipAxis::Horizontal }),
        ("median3", AugmentationOp::Denoise { method: DenoiseMethod::Median, kernel_size: 3 }),
        ("bilateral5", AugmentationOp::Denoise { method: DenoiseMethod::Bilateral, kernel_size: 5 }),
        ("resize_up2", AugmentationOp::ResizeUp { factor: Factor::integer(2).unwrap() }),
        ("edge", AugmentationOp::Edge),
    ];
    for (name, op) in &ops {
        g.bench_with_input(BenchmarkId::from_parameter(name), op, |b, op| {
            b.iter(|| black_box(apply_op(&img, op, &img, &limits)))
        });
    }
    g.finish();
}

fn rewards(c: &mut Criterion) {
    let judge = RuleJudge::exact();
    let config = RewardConfig::default();
    let mut g = c.benchmark_group("score_trace");
    for calls in [0usize, 4, 8] {
        let t = trace_with_calls(calls);
        g.bench_with_input(BenchmarkId::from_parameter(calls), &t, |b, t| {
            b.iter(|| black_box(score_trace(t, "42", &judge, &config)))
        });
    }
    g.finish();
}

fn grpo(c: &mut Criterion) {
    let t = trace_with_calls(4);
    c.bench_function("loss_sequence", |b| b.iter(|| black_box(build_loss_sequence(&t))));
    let groups: Vec<RolloutGroup> = (0..16)
        .map(|g| RolloutGroup {
            group_id: format!("g{g}"),
            traces: (0..8)
                .map(|i| ScoredTrace::new(format!("g{g}#{i}"), t.clone(), (i % 3) as f64 * 0.5))
                .collect(),
        })
        .collect();
    c.bench_function("assemble_batch_16x8", |b| {
        b.iter(|| black_box(assemble_batch(&groups, &GrpoConfig::default())))
    });
}

criterion_group!(benches, parser, augment, rewards, grpo);
criterion_main!(benches);
