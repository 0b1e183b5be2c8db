//! Frozen reference batch for trainer clients. Set `AUGCHAIN_BLESS=1` to
//! rewrite it after an intentional format change.

use std::path::PathBuf;

use augchain::agent::{run_episode, EpisodeConfig, EpisodeQuery, EpisodeTrace, ScriptedBackend};
use augchain::augment::Channels;
use augchain::grpo::{assemble_batch, batch_to_jsonl, GrpoConfig, RolloutGroup, ScoredTrace, TrainingRecord};
use augchain::ImageBuffer;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn trace(spans: &[&str]) -> EpisodeTrace {
    let image = ImageBuffer::from_fn(8, 6, Channels::Gray, |x, y, _| (x * 30 + y * 5) as u8);
    run_episode(
        &ScriptedBackend::new(spans.iter().copied()),
        &EpisodeQuery::new(image, "Which digit?"),
        &EpisodeConfig::default(),
    )
    .unwrap()
}

fn groups() -> Vec<RolloutGroup> {
    let mut with_logp = ScoredTrace::new("g1#0", trace(&["<think>a</think><answer>7</answer>"]), 2.5);
    with_logp.logp_policy = Some(vec![-0.5, -1.0, -2.0]);
    with_logp.logp_ref = Some(vec![-0.5, -1.5, -1.0]);
    let mut other = ScoredTrace::new("g1#1", trace(&["<think>b</think><answer>1</answer>"]), 0.5);
    other.logp_policy = Some(vec![-0.25]);
    other.logp_ref = Some(vec![-0.25]);
    vec![
        RolloutGroup {
            group_id: "g0".into(),
            traces: vec![
                ScoredTrace::new(
                    "g0#1",
                    trace(&["<think>flip</think><code>flip(image_path, axis=\"vertical\")</code>", "<answer>7</answer>"]),
                    0.25,
                ),
                ScoredTrace::new("g0#0", trace(&["<think>x</think><answer>7</answer>"]), 1.0),
            ],
        },
        RolloutGroup { group_id: "g1".into(), traces: vec![with_logp, other] },
    ]
}

#[test]
fn grpo_batch_matches_frozen_file() {
    let groups = groups();
    let batch = assemble_batch(&groups, &GrpoConfig::default()).unwrap();
    let text = batch_to_jsonl(&batch);
    let inputs = serde_json::to_string_pretty(&groups).unwrap() + "\n";
    let (in_path, out_path) = (golden_dir().join("grpo_groups.json"), golden_dir().join("grpo_batch.jsonl"));
    if std::env::var_os("AUGCHAIN_BLESS").is_some() {
        std::fs::write(&in_path, &inputs).unwrap();
        std::fs::write(&out_path, &text).unwrap();
    }
    assert_eq!(inputs, std::fs::read_to_string(&in_path).unwrap());
    assert_eq!(text, std::fs::read_to_string(&out_path).unwrap());

    // the frozen inputs reproduce the frozen batch
    let reread: Vec<RolloutGroup> = serde_json::from_str(&inputs).unwrap();
    assert_eq!(assemble_batch(&reread, &GrpoConfig::default()).unwrap(), batch);
}

#[test]
fn frozen_batch_agrees_with_hand_values() {
    let text = std::fs::read_to_string(golden_dir().join("grpo_batch.jsonl")).unwrap();
    let batch: Vec<TrainingRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let ids: Vec<&str> = batch.iter().map(|r| r.trace_id.as_str()).collect();
    assert_eq!(ids, ["g0#0", "g0#1", "g1#0", "g1#1"]);
    // two-member groups normalize to +1 and -1
    let adv: Vec<f64> = batch.iter().map(|r| r.advantage).collect();
    assert_eq!(adv, [1.0, -1.0, 1.0, -1.0]);
    let total: usize = batch.iter().map(|r| r.loss_len).sum();
    assert!(batch.iter().all(|r| r.normalizer == total));
    assert!((batch.iter().map(|r| r.token_weight).sum::<f64>() - 1.0).abs() < 1e-12);
    // d = ref - policy: 0, -0.5, 1
    let kl = batch[2].kl.as_ref().unwrap();
    let expect = [0.0, (-0.5f64).exp() + 0.5 - 1.0, 1f64.exp() - 2.0];
    for (k, e) in kl.iter().zip(expect) {
        assert!((k - e).abs() < 1e-12, "{k} vs {e}");
    }
    assert_eq!(batch[3].kl.as_deref(), Some(&[0.0][..]));
    // the one tool output is the only excluded span
    let excluded: Vec<_> = batch.iter().flat_map(|r| r.mask.iter().filter(|m| !m.include).map(move |m| (r, m))).collect();
    assert_eq!(excluded.len(), 1);
    let (r, m) = excluded[0];
    assert_eq!(r.trace_id, "g0#1");
    let span: String = r.text.chars().skip(m.start).take(m.end - m.start).collect();
    assert_eq!(span, "<output><image></output>");
}
