//! Stop-string detection and structural tag scanning.

use serde::{Deserialize, Serialize};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";
pub const CODE_OPEN: &str = "<code>";
pub const CODE_CLOSE: &str = "</code>";
pub const OUTPUT_OPEN: &str = "<output>";
pub const OUTPUT_CLOSE: &str = "</output>";

/// Default generation stop set.
pub const DEFAULT_STOPS: [&str; 2] = [CODE_CLOSE, ANSWER_CLOSE];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    CodeClose,
    AnswerClose,
    Other,
}

impl StopKind {
    pub fn of(stop: &str) -> Self {
        match stop {
            CODE_CLOSE => StopKind::CodeClose,
            ANSWER_CLOSE => StopKind::AnswerClose,
            _ => StopKind::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopMatch {
    pub kind: StopKind,
    /// Index into the stop list that matched.
    pub index: usize,
    /// Byte offset where the stop string starts.
    pub offset: usize,
}

impl StopMatch {
    pub fn end(&self, stops: &[impl AsRef<str>]) -> usize {
        self.offset + stops[self.index].as_ref().len()
    }
}

/// Earliest complete occurrence of any stop string. On a tie the stop listed
/// first wins. Empty stop strings are ignored.
pub fn find_stop(text: &str, stops: &[impl AsRef<str>]) -> Option<StopMatch> {
    stops
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.as_ref().is_empty())
        .filter_map(|(i, s)| {
            text.find(s.as_ref()).map(|offset| StopMatch {
                kind: StopKind::of(s.as_ref()),
                index: i,
                offset,
            })
        })
        .min_by_key(|m| (m.offset, m.index))
}

/// Structural summary of a piece of generated text. Spans are byte ranges
/// from the start of the open tag to the end of the close tag.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagScan {
    pub has_think: bool,
    pub has_answer: bool,
    pub code_spans: Vec<(usize, usize)>,
    pub output_spans: Vec<(usize, usize)>,
    pub answer_text: String,
}

impl TagScan {
    pub fn code_bodies<'a>(&'a self, text: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.code_spans
            .iter()
            .map(move |&(s, e)| &text[s + CODE_OPEN.len()..e - CODE_CLOSE.len()])
    }
}

/// First open tag and the first close tag after it.
fn first_pair(text: &str, open: &str, close: &str) -> Option<(usize, usize)> {
    let start = text.find(open)?;
    let body = start + open.len();
    let end = text[body..].find(close)? + body + close.len();
    Some((start, end))
}

fn all_pairs(text: &str, open: &str, close: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut from = 0;
    while let Some((s, e)) = first_pair(&text[from..], open, close) {
        spans.push((from + s, from + e));
        from += e;
    }
    spans
}

/// Strict, case-sensitive, first-match pairing. Unclosed tags count as absent.
pub fn scan_tags(text: &str) -> TagScan {
    let think = first_pair(text, THINK_OPEN, THINK_CLOSE);
    let answer = first_pair(text, ANSWER_OPEN, ANSWER_CLOSE);
    TagScan {
        has_think: think.is_some(),
        has_answer: answer.is_some(),
        code_spans: all_pairs(text, CODE_OPEN, CODE_CLOSE),
        output_spans: all_pairs(text, OUTPUT_OPEN, OUTPUT_CLOSE),
        answer_text: answer
            .map(|(s, e)| text[s + ANSWER_OPEN.len()..e - ANSWER_CLOSE.len()].to_string())
            .unwrap_or_default(),
    }
}

/// Body of the last `<code>` opened before `close_offset`, if any.
pub fn code_body_before(text: &str, close_offset: usize) -> Option<&str> {
    let head = &text[..close_offset];
    let open = head.rfind(CODE_OPEN)?;
    Some(&head[open + CODE_OPEN.len()..])
}
