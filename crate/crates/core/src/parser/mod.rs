//! Stop detection, `<code>` call parsing and tag scanning for generated text.

mod call;
mod tags;

pub use call::{
    extract_call, extract_call_with, ParseError, ParseErrorCode, ParsedCall, ParserConfig,
    ERROR_TABLE_VERSION,
};
pub use tags::{
    code_body_before, find_stop, scan_tags, StopKind, StopMatch, TagScan, ANSWER_CLOSE,
    ANSWER_OPEN, CODE_CLOSE, CODE_OPEN, DEFAULT_STOPS, OUTPUT_CLOSE, OUTPUT_OPEN, THINK_CLOSE,
    THINK_OPEN,
};
