//! Scoring backends for answer correctness and reasoning consistency.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::parser::{ANSWER_CLOSE, ANSWER_OPEN};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum JudgeError {
    #[error("judge unavailable: {0}")]
    Unavailable(String),
}

/// Anything that can grade a model answer. Scores outside `[0, 1]` are
/// clamped by the callers in this crate.
pub trait Judge: Send + Sync {
    fn score_vqa(
        &self,
        question: &str,
        ground_truth: &str,
        answer_window: &str,
    ) -> Result<f64, JudgeError>;

    fn score_consistency(&self, trace_text: &str) -> Result<f64, JudgeError>;
}

impl<J: Judge + ?Sized> Judge for &J {
    fn score_vqa(&self, q: &str, gt: &str, w: &str) -> Result<f64, JudgeError> {
        (**self).score_vqa(q, gt, w)
    }

    fn score_consistency(&self, t: &str) -> Result<f64, JudgeError> {
        (**self).score_consistency(t)
    }
}

impl<J: Judge + ?Sized> Judge for std::sync::Arc<J> {
    fn score_vqa(&self, q: &str, gt: &str, w: &str) -> Result<f64, JudgeError> {
        (**self).score_vqa(q, gt, w)
    }

    fn score_consistency(&self, t: &str) -> Result<f64, JudgeError> {
        (**self).score_consistency(t)
    }
}

/// Clamps to `[0, 1]`; NaN counts as unparseable.
pub fn clamp_score(score: f64) -> Result<f64, JudgeError> {
    if score.is_nan() {
        return Err(JudgeError::Unavailable("judge returned NaN".into()));
    }
    Ok(score.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Normalized answer equals normalized ground truth.
    #[default]
    Exact,
    /// Normalized answer contains normalized ground truth.
    Contains,
}

/// Deterministic string-matching judge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleJudge {
    pub mode: MatchMode,
}

impl RuleJudge {
    pub fn exact() -> Self {
        Self {
            mode: MatchMode::Exact,
        }
    }

    pub fn contains() -> Self {
        Self {
            mode: MatchMode::Contains,
        }
    }
}

/// Lowercase, collapse whitespace, drop trailing sentence punctuation.
pub fn normalize_answer(s: &str) -> String {
    let joined = s
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    joined
        .trim_end_matches(['.', '!', '?', ',', ';', ':'])
        .trim_end()
        .to_string()
}

/// Body of the last `<answer>` that has a matching `</answer>` after it.
pub fn last_answer(window: &str) -> Option<&str> {
    let mut end = window.len();
    while let Some(open) = window[..end].rfind(ANSWER_OPEN) {
        let body = open + ANSWER_OPEN.len();
        if let Some(close) = window[body..].find(ANSWER_CLOSE) {
            return Some(&window[body..body + close]);
        }
        end = open;
    }
    None
}

impl Judge for RuleJudge {
    fn score_vqa(
        &self,
        _question: &str,
        ground_truth: &str,
        window: &str,
    ) -> Result<f64, JudgeError> {
        let Some(answer) = last_answer(window) else {
            return Ok(0.0);
        };
        let (a, g) = (normalize_answer(answer), normalize_answer(ground_truth));
        let hit = match self.mode {
            MatchMode::Exact => a == g,
            MatchMode::Contains => !g.is_empty() && a.contains(&g),
        };
        Ok(if hit { 1.0 } else { 0.0 })
    }

    fn score_consistency(&self, trace_text: &str) -> Result<f64, JudgeError> {
        Ok(1.0 - repeated_ngram_ratio(trace_text, 4))
    }
}

/// Share of word n-grams that repeat an earlier one. Zero when the text has
/// fewer than `n` words.
pub fn repeated_ngram_ratio(text: &str, n: usize) -> f64 {
    let words: Vec<&str> = text.split_whitespace().collect();
    if n == 0 || words.len() < n {
        return 0.0;
    }
    let grams: Vec<&[&str]> = words.windows(n).collect();
    let distinct: HashSet<&[&str]> = grams.iter().copied().collect();
    (grams.len() - distinct.len()) as f64 / grams.len() as f64
}

/// Substitutes `#SLOT` markers in one pass, so slot names inside the values
/// are left alone.
pub fn fill_template(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while !rest.is_empty() {
        for (slot, value) in slots {
            if let Some(tail) = rest.strip_prefix(slot) {
                out.push_str(value);
                rest = tail;
                continue 'outer;
            }
        }
        let ch = rest.chars().next().expect("non-empty");
        out.push(ch);
        rest = &rest[ch.len_utf8()..];
    }
    out
}

/// Extracts `score` from a judge reply of the form
/// `{ 'score': 1, 'reasoning': '...' }`. Accepts strict JSON, single-quoted
/// pseudo-JSON, and stray text around the object.
pub fn parse_judge_reply(reply: &str) -> Result<f64, JudgeError> {
    let bad = || JudgeError::Unavailable(format!("unparseable judge reply: {}", snippet(reply)));
    let start = reply.find('{');
    let end = reply.rfind('}');
    if let (Some(s), Some(e)) = (start, end) {
        if s < e {
            let obj = &reply[s..=e];
            for candidate in [obj.to_string(), obj.replace('\'', "\"")] {
                if let Ok(v) = serde_json::from_str::<Value>(&candidate) {
                    if let Some(score) = score_field(&v) {
                        return clamp_score(score);
                    }
                }
            }
        }
    }
    score_after_key(reply).ok_or_else(bad).and_then(clamp_score)
}

fn score_field(v: &Value) -> Option<f64> {
    match v.get("score")? {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
        _ => None,
    }
}

/// Last resort: the number following `score` and a colon.
fn score_after_key(reply: &str) -> Option<f64> {
    let at = reply.find("score")?;
    let after = &reply[at + "score".len()..];
    let after = after.trim_start_matches(['\'', '"', ' ']);
    let after = after
        .strip_prefix(':')?
        .trim_start()
        .trim_start_matches(['\'', '"']);
    let len = after
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-' || c == '+' || c == 'e'))
        .unwrap_or(after.len());
    after[..len].parse().ok()
}

fn snippet(s: &str) -> String {
    s.chars().take(120).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_and_disjoint() {
        let j = RuleJudge::exact();
        assert_eq!(
            j.score_vqa("q", "42", "…<answer>42</answer>\n").unwrap(),
            1.0
        );
        assert_eq!(j.score_vqa("q", "42", "<answer>17</answer>").unwrap(), 0.0);
        assert_eq!(j.score_vqa("q", "42", "no tags 42").unwrap(), 0.0);
        assert_eq!(
            j.score_vqa("q", "Paris", "<answer>\n paris.\n</answer>")
                .unwrap(),
            1.0
        );
    }

    #[test]
    fn contains_mode() {
        let j = RuleJudge::contains();
        assert_eq!(
            j.score_vqa("q", "7", "<answer>There are 7 cats</answer>")
                .unwrap(),
            1.0
        );
        assert_eq!(j.score_vqa("q", "", "<answer>x</answer>").unwrap(), 0.0);
    }

    #[test]
    fn last_answer_wins() {
        assert_eq!(
            last_answer("<answer>a</answer> <answer>b</answer>"),
            Some("b")
        );
        assert_eq!(last_answer("swer>a</answer>"), None);
        assert_eq!(last_answer("<answer>a</answer> x</answer>"), Some("a"));
    }

    #[test]
    fn ngram_repetition() {
        assert_eq!(repeated_ngram_ratio("a b c", 4), 0.0);
        assert_eq!(repeated_ngram_ratio("a b c d e", 4), 0.0);
        // grams: abcd bcda cdab dabc abcd → 1 of 5 repeats
        assert!((repeated_ngram_ratio("a b c d a b c d", 4) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn template_single_pass() {
        let t = "Q: #A\nG: #B";
        assert_eq!(
            fill_template(t, &[("#A", "#B"), ("#B", "x")]),
            "Q: #B\nG: x"
        );
    }

    #[test]
    fn reply_parsing() {
        assert_eq!(
            parse_judge_reply("{ 'score': 1, 'reasoning': 'ok' }").unwrap(),
            1.0
        );
        assert_eq!(
            parse_judge_reply("{\"score\": 0, \"reasoning\": \"no\"}").unwrap(),
            0.0
        );
        assert_eq!(
            parse_judge_reply("Sure. {'score': '1', 'reasoning': \"it's right\"}").unwrap(),
            1.0
        );
        assert_eq!(parse_judge_reply("{'score': 3}").unwrap(), 1.0);
        assert_eq!(parse_judge_reply("{'score': -2}").unwrap(), 0.0);
        assert_eq!(
            parse_judge_reply("{'score': 0.5, 'reasoning': 'don't'}").unwrap(),
            0.5
        );
        assert!(parse_judge_reply("I think it is right").is_err());
        assert!(parse_judge_reply("{'score': 'high'}").is_err());
    }
}
