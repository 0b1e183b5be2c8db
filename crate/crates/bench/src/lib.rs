//! Shared inputs for the benchmarks.

use augchain::agent::{run_episode, EpisodeConfig, EpisodeQuery, EpisodeTrace, ScriptedBackend};
use augchain::augment::Channels;
use augchain::ImageBuffer;

/// Deterministic RGB test pattern.
pub fn pattern(width: u32, height: u32) -> ImageBuffer {
    ImageBuffer::from_fn(width, height, Channels::Rgb, |x, y, c| {
        (x.wrapping_mul(31) ^ y.wrapping_mul(17)).wrapping_add(c as u32 * 85) as u8
    })
}

/// A trace with `calls` executed rotations followed by an answer.
pub fn trace_with_calls(calls: usize) -> EpisodeTrace {
    let mut spans: Vec<String> = (0..calls)
        .map(|i| format!("<think>step {i}</think>\n<code>rotate(image_path, degrees=90)</code>"))
        .collect();
    spans.push("<think>done</think>\n<answer>42</answer>".into());
    let config = EpisodeConfig {
        max_calls: calls.max(1) as u32,
        ..Default::default()
    };
    run_episode(&ScriptedBackend::new(spans), &EpisodeQuery::new(pattern(64, 48), "How many?"), &config)
        .expect("scripted episode completes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_are_well_formed() {
        let t = trace_with_calls(3);
        assert_eq!(t.call_count, 3);
        assert_eq!(t.final_answer, "42");
        assert_eq!(pattern(5, 4).width(), 5);
    }
}
