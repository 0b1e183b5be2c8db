//! The call grammar for `<code>` blocks.
//!
//! ```text
//! block   = [ ident "=" ] call [ ";" ]
//! call    = ident "(" [ arg { "," arg } [ "," ] ] ")"
//! arg     = [ ident "=" ] value
//! value   = ident | string | number
//! number  = [ "+" | "-" ] ( digits [ "." { digit } ] | "." digits ) [ "/" digits ]
//! string  = '"' { char } '"' | "'" { char } "'"     (backslash escapes \\ \" \' \n \t)
//! ident   = ( letter | "_" ) { letter | digit | "_" }
//! ```
//!
//! Whitespace (including newlines) may appear between any two tokens. One
//! call per block; anything after it except a single `;` is malformed.
//! A bare identifier as the first positional argument, or `image=<ident>`,
//! names the image and is recorded but not interpreted.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::augment::{
    AugmentationOp, DenoiseMethod, ExecLimits, Factor, FlipAxis, OpKind, Rotation, Vocabulary,
};

/// Bumped whenever any model-visible error text below changes.
pub const ERROR_TABLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseErrorCode {
    UnknownOperation,
    ParamInvalid,
    SyntaxMalformed,
}

impl ParseErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseErrorCode::UnknownOperation => "unknown_operation",
            ParseErrorCode::ParamInvalid => "param_invalid",
            ParseErrorCode::SyntaxMalformed => "syntax_malformed",
        }
    }
}

/// A rejected call. `message` is the exact text fed back to the model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, thiserror::Error)]
#[error("{message}")]
pub struct ParseError {
    pub code: ParseErrorCode,
    pub message: String,
}

impl ParseError {
    pub(crate) fn syntax(detail: impl fmt::Display) -> Self {
        Self {
            code: ParseErrorCode::SyntaxMalformed,
            message: format!("Error: malformed API call: {detail}."),
        }
    }

    fn param(op: &str, detail: impl fmt::Display) -> Self {
        Self {
            code: ParseErrorCode::ParamInvalid,
            message: format!("Error: invalid parameters for {op}: {detail}."),
        }
    }

    fn unknown(name: &str, vocab: Vocabulary) -> Self {
        Self {
            code: ParseErrorCode::UnknownOperation,
            message: format!(
                "Error: unknown operation '{name}'. Available operations: {}.",
                available_names(vocab)
            ),
        }
    }
}

fn available_names(vocab: Vocabulary) -> String {
    let names: Vec<&str> = vocab.kinds().map(OpKind::name).collect();
    if names.is_empty() {
        "none".to_string()
    } else {
        names.join(", ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParsedCall {
    pub op: AugmentationOp,
    pub raw_text: String,
    pub assignment_target: Option<String>,
    pub image_arg: Option<String>,
}

impl ParsedCall {
    /// Canonical text that reparses to the same op, target and image name.
    pub fn render(&self) -> String {
        let image = self.image_arg.as_deref().unwrap_or("image_path");
        let call = self.op.render_call(image);
        match &self.assignment_target {
            Some(t) => format!("{t} = {call}"),
            None => call,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ParserConfig {
    pub vocabulary: Vocabulary,
    pub limits: ExecLimits,
}

/// Parses with the full vocabulary and default limits.
pub fn extract_call(span: &str) -> Result<ParsedCall, ParseError> {
    extract_call_with(span, &ParserConfig::default())
}

pub fn extract_call_with(span: &str, config: &ParserConfig) -> Result<ParsedCall, ParseError> {
    let tokens = lex(span)?;
    let stmt = Statement::parse(&tokens)?;
    let (op, image_arg) = bind(&stmt, config)?;
    Ok(ParsedCall {
        op,
        raw_text: span.to_string(),
        assignment_target: stmt.target.map(str::to_string),
        image_arg,
    })
}

// ---------------------------------------------------------------- lexing

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Ident(&'a str),
    Str(String),
    Num(Number),
    LParen,
    RParen,
    Comma,
    Equals,
    Semi,
}

impl fmt::Display for Tok<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "'{s}'"),
            Tok::Str(_) => f.write_str("string literal"),
            Tok::Num(_) => f.write_str("number"),
            Tok::LParen => f.write_str("'('"),
            Tok::RParen => f.write_str("')'"),
            Tok::Comma => f.write_str("','"),
            Tok::Equals => f.write_str("'='"),
            Tok::Semi => f.write_str("';'"),
        }
    }
}

/// Exact numeric literal: `sign * num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Number {
    negative: bool,
    num: u64,
    den: u64,
}

impl Number {
    fn as_integer(self) -> Option<i64> {
        if !self.num.is_multiple_of(self.den) {
            return None;
        }
        let v = i64::try_from(self.num / self.den).ok()?;
        Some(if self.negative { -v } else { v })
    }

    /// Literal written without a decimal point or slash.
    fn is_plain_integer(self, text_had_point_or_slash: bool) -> bool {
        !text_had_point_or_slash && self.den == 1
    }
}

fn lex(src: &str) -> Result<Vec<(Tok<'_>, bool)>, ParseError> {
    // bool: numeric literal contained '.' or '/'
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'(' => {
                out.push((Tok::LParen, false));
                i += 1;
            }
            b')' => {
                out.push((Tok::RParen, false));
                i += 1;
            }
            b',' => {
                out.push((Tok::Comma, false));
                i += 1;
            }
            b'=' => {
                out.push((Tok::Equals, false));
                i += 1;
            }
            b';' => {
                out.push((Tok::Semi, false));
                i += 1;
            }
            b'"' | b'\'' => {
                let (s, next) = lex_string(src, i)?;
                out.push((Tok::Str(s), false));
                i = next;
            }
            b'0'..=b'9' | b'.' | b'+' | b'-' => {
                let (n, fancy, next) = lex_number(src, i)?;
                out.push((Tok::Num(n), fancy));
                i = next;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(&src[start..i]), false));
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(ParseError::syntax(format!(
                    "unexpected character {ch:?} at offset {i}"
                )));
            }
        }
    }
    Ok(out)
}

fn lex_string(src: &str, start: usize) -> Result<(String, usize), ParseError> {
    let quote = src.as_bytes()[start] as char;
    let mut out = String::new();
    let mut chars = src[start + 1..].char_indices();
    while let Some((off, c)) = chars.next() {
        match c {
            c if c == quote => return Ok((out, start + 1 + off + 1)),
            '\\' => match chars.next() {
                Some((_, 'n')) => out.push('\n'),
                Some((_, 't')) => out.push('\t'),
                Some((_, e @ ('\\' | '"' | '\''))) => out.push(e),
                Some((_, e)) => {
                    return Err(ParseError::syntax(format!(
                        "unknown escape \\{e} in string"
                    )))
                }
                None => break,
            },
            c => out.push(c),
        }
    }
    Err(ParseError::syntax("unterminated string literal"))
}

fn digits(src: &[u8], mut i: usize) -> usize {
    while i < src.len() && src[i].is_ascii_digit() {
        i += 1;
    }
    i
}

fn lex_number(src: &str, start: usize) -> Result<(Number, bool, usize), ParseError> {
    let b = src.as_bytes();
    let mut i = start;
    let negative = b[i] == b'-';
    if b[i] == b'+' || b[i] == b'-' {
        i += 1;
    }
    let int_start = i;
    i = digits(b, i);
    let int_part = &src[int_start..i];
    let mut frac_part = "";
    let mut fancy = false;
    if i < b.len() && b[i] == b'.' {
        fancy = true;
        let fs = i + 1;
        i = digits(b, fs);
        frac_part = &src[fs..i];
    }
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(ParseError::syntax(format!(
            "malformed number at offset {start}"
        )));
    }
    let too_big = || ParseError::syntax(format!("number at offset {start} is too large"));
    let mut num: u64 = 0;
    for d in int_part.bytes().chain(frac_part.bytes()) {
        num = num
            .checked_mul(10)
            .and_then(|n| n.checked_add((d - b'0') as u64))
            .ok_or_else(too_big)?;
    }
    let mut den: u64 = 10u64
        .checked_pow(frac_part.len() as u32)
        .ok_or_else(too_big)?;

    // optional "/ digits", only after a plain integer
    let mut j = i;
    while j < b.len() && matches!(b[j], b' ' | b'\t' | b'\n' | b'\r') {
        j += 1;
    }
    if j < b.len() && b[j] == b'/' {
        if fancy {
            return Err(ParseError::syntax("a fraction needs integer parts"));
        }
        j += 1;
        while j < b.len() && matches!(b[j], b' ' | b'\t' | b'\n' | b'\r') {
            j += 1;
        }
        let ds = j;
        j = digits(b, j);
        if ds == j {
            return Err(ParseError::syntax("fraction is missing its denominator"));
        }
        let mut d: u64 = 0;
        for c in src[ds..j].bytes() {
            d = d
                .checked_mul(10)
                .and_then(|n| n.checked_add((c - b'0') as u64))
                .ok_or_else(too_big)?;
        }
        if d == 0 {
            return Err(ParseError::syntax("fraction has a zero denominator"));
        }
        den = d;
        fancy = true;
        i = j;
    }
    let g = {
        let (mut a, mut c) = (num, den);
        while c != 0 {
            (a, c) = (c, a % c);
        }
        a.max(1)
    };
    Ok((
        Number {
            negative,
            num: num / g,
            den: den / g,
        },
        fancy,
        i,
    ))
}

// --------------------------------------------------------------- parsing

#[derive(Debug)]
enum Value<'a> {
    Ident(&'a str),
    Str(String),
    Num { n: Number, fancy: bool },
}

impl Value<'_> {
    fn describe(&self) -> &'static str {
        match self {
            Value::Ident(_) => "a bare name",
            Value::Str(_) => "a string",
            Value::Num { .. } => "a number",
        }
    }
}

#[derive(Debug)]
struct Arg<'a> {
    keyword: Option<&'a str>,
    value: Value<'a>,
}

#[derive(Debug)]
struct Statement<'a> {
    target: Option<&'a str>,
    name: &'a str,
    args: Vec<Arg<'a>>,
}

struct Cursor<'t, 'a> {
    toks: &'t [(Tok<'a>, bool)],
    pos: usize,
}

impl<'t, 'a> Cursor<'t, 'a> {
    fn peek(&self) -> Option<&'t Tok<'a>> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn peek_at(&self, ahead: usize) -> Option<&'t Tok<'a>> {
        self.toks.get(self.pos + ahead).map(|(t, _)| t)
    }

    fn next(&mut self) -> Option<&'t (Tok<'a>, bool)> {
        let t = self.toks.get(self.pos);
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok<'static>, what: &str) -> Result<(), ParseError> {
        match self.next() {
            Some((t, _)) if *t == want => Ok(()),
            Some((t, _)) => Err(ParseError::syntax(format!("expected {what}, found {t}"))),
            None => Err(ParseError::syntax(format!(
                "expected {what}, found end of input"
            ))),
        }
    }
}

impl<'a> Statement<'a> {
    fn parse(toks: &[(Tok<'a>, bool)]) -> Result<Self, ParseError> {
        if toks.is_empty() {
            return Err(ParseError::syntax("empty code block"));
        }
        let mut cur = Cursor { toks, pos: 0 };
        let target = match (cur.peek(), cur.peek_at(1)) {
            (Some(Tok::Ident(t)), Some(Tok::Equals)) => {
                cur.pos += 2;
                Some(*t)
            }
            _ => None,
        };
        let name = match cur.next() {
            Some((Tok::Ident(n), _)) => *n,
            Some((t, _)) => {
                return Err(ParseError::syntax(format!(
                    "expected a function name, found {t}"
                )))
            }
            None => {
                return Err(ParseError::syntax(
                    "expected a function name, found end of input",
                ))
            }
        };
        cur.expect(Tok::LParen, "'('")?;
        let mut args = Vec::new();
        let mut seen_keyword = false;
        loop {
            match cur.peek() {
                Some(Tok::RParen) => {
                    cur.pos += 1;
                    break;
                }
                None => return Err(ParseError::syntax("unbalanced parentheses")),
                _ => {}
            }
            let keyword = match (cur.peek(), cur.peek_at(1)) {
                (Some(Tok::Ident(k)), Some(Tok::Equals)) => {
                    cur.pos += 2;
                    Some(*k)
                }
                _ => None,
            };
            if keyword.is_some() {
                seen_keyword = true;
            } else if seen_keyword {
                return Err(ParseError::syntax(
                    "positional argument follows keyword argument",
                ));
            }
            let value = match cur.next() {
                Some((Tok::Ident(v), _)) => Value::Ident(v),
                Some((Tok::Str(s), _)) => Value::Str(s.clone()),
                Some((Tok::Num(n), fancy)) => Value::Num {
                    n: *n,
                    fancy: *fancy,
                },
                Some((t, _)) => {
                    return Err(ParseError::syntax(format!(
                        "expected an argument value, found {t}"
                    )))
                }
                None => return Err(ParseError::syntax("unbalanced parentheses")),
            };
            args.push(Arg { keyword, value });
            match cur.next() {
                Some((Tok::Comma, _)) => continue,
                Some((Tok::RParen, _)) => break,
                Some((t, _)) => {
                    return Err(ParseError::syntax(format!(
                        "expected ',' or ')', found {t}"
                    )))
                }
                None => return Err(ParseError::syntax("unbalanced parentheses")),
            }
        }
        if let Some(Tok::Semi) = cur.peek() {
            cur.pos += 1;
        }
        if let Some(t) = cur.peek() {
            return Err(ParseError::syntax(format!(
                "only one call per code block is allowed, found trailing {t}"
            )));
        }
        Ok(Statement { target, name, args })
    }
}

// --------------------------------------------------------------- binding

const IMAGE_KEYWORDS: [&str; 2] = ["image", "image_path"];

fn param_names(name: &str) -> Option<&'static [&'static str]> {
    Some(match name {
        "crop" => &["x0", "y0", "x1", "y1"],
        "resize" | "resize_up" | "resize_down" => &["factor"],
        "rotate" => &["degrees"],
        "flip" => &["axis"],
        "denoise" => &["method", "kernel_size"],
        "edge" => &[],
        _ => return None,
    })
}

fn bind<'a>(
    stmt: &Statement<'a>,
    config: &ParserConfig,
) -> Result<(AugmentationOp, Option<String>), ParseError> {
    let name = stmt.name;
    let Some(params) = param_names(name) else {
        return Err(ParseError::unknown(name, config.vocabulary));
    };

    let mut image = None;
    let mut slots: Vec<Option<&Value<'a>>> = vec![None; params.len()];
    let mut positional = 0usize;
    for (i, arg) in stmt.args.iter().enumerate() {
        match arg.keyword {
            None => {
                if i == 0 {
                    if let Value::Ident(id) = &arg.value {
                        image = Some(id.to_string());
                        continue;
                    }
                }
                if positional >= params.len() {
                    return Err(ParseError::param(
                        name,
                        format!("takes at most {} value argument(s)", params.len()),
                    ));
                }
                slots[positional] = Some(&arg.value);
                positional += 1;
            }
            Some(k) if IMAGE_KEYWORDS.contains(&k) => {
                let Value::Ident(id) = &arg.value else {
                    return Err(ParseError::param(name, format!("'{k}' must name an image")));
                };
                if image.is_some() {
                    return Err(ParseError::param(name, "image given more than once"));
                }
                image = Some(id.to_string());
            }
            Some(k) => {
                let Some(idx) = params.iter().position(|p| *p == k) else {
                    return Err(ParseError::param(name, format!("unexpected keyword '{k}'")));
                };
                if slots[idx].is_some() {
                    return Err(ParseError::param(
                        name,
                        format!("'{k}' given more than once"),
                    ));
                }
                slots[idx] = Some(&arg.value);
            }
        }
    }

    let op = match name {
        "crop" => {
            let mut c = [0u32; 4];
            for (i, p) in params.iter().enumerate() {
                let v =
                    slots[i].ok_or_else(|| ParseError::param(name, format!("missing '{p}'")))?;
                c[i] = coord(name, p, v)?;
            }
            AugmentationOp::Crop {
                x0: c[0],
                y0: c[1],
                x1: c[2],
                y1: c[3],
            }
        }
        "resize" | "resize_up" | "resize_down" => {
            let v = slots[0].ok_or_else(|| ParseError::param(name, "missing 'factor'"))?;
            let factor = factor(name, v)?;
            if !config.limits.factor_in_range(factor) {
                return Err(ParseError::param(
                    name,
                    format!(
                        "factor {factor} is outside [{}, {}]",
                        config.limits.min_factor, config.limits.max_factor
                    ),
                ));
            }
            let up = match name {
                "resize_up" if factor.cmp_one().is_lt() => {
                    return Err(ParseError::param(name, "resize_up needs a factor >= 1"))
                }
                "resize_down" if factor.cmp_one().is_gt() => {
                    return Err(ParseError::param(name, "resize_down needs a factor <= 1"))
                }
                "resize_up" => true,
                "resize_down" => false,
                _ => factor.cmp_one().is_ge(),
            };
            if up {
                AugmentationOp::ResizeUp { factor }
            } else {
                AugmentationOp::ResizeDown { factor }
            }
        }
        "rotate" => {
            let v = slots[0].ok_or_else(|| ParseError::param(name, "missing 'degrees'"))?;
            let deg = match v {
                Value::Num { n, .. } => n.as_integer(),
                _ => None,
            };
            let degrees = deg
                .and_then(Rotation::from_degrees)
                .ok_or_else(|| ParseError::param(name, "degrees must be one of 90, 180, 270"))?;
            AugmentationOp::Rotate { degrees }
        }
        "flip" => {
            let axis = match slots[0] {
                None => FlipAxis::Horizontal,
                Some(Value::Str(s)) if s == "horizontal" => FlipAxis::Horizontal,
                Some(Value::Str(s)) if s == "vertical" => FlipAxis::Vertical,
                Some(_) => {
                    return Err(ParseError::param(
                        name,
                        "axis must be \"horizontal\" or \"vertical\"",
                    ))
                }
            };
            AugmentationOp::Flip { axis }
        }
        "denoise" => {
            let method = match slots[0] {
                None => DenoiseMethod::Median,
                Some(Value::Str(s)) => DenoiseMethod::parse(s).ok_or_else(|| {
                    ParseError::param(
                        name,
                        "method must be \"gaussian\", \"median\" or \"bilateral\"",
                    )
                })?,
                Some(v) => {
                    return Err(ParseError::param(
                        name,
                        format!("method must be a string, got {}", v.describe()),
                    ))
                }
            };
            let kernel_size = match slots[1] {
                None => 3,
                Some(v) => kernel(name, v, config.limits.max_kernel)?,
            };
            AugmentationOp::Denoise {
                method,
                kernel_size,
            }
        }
        "edge" => AugmentationOp::Edge,
        _ => unreachable!("param_names covers the vocabulary"),
    };

    if !config.vocabulary.contains(op.kind()) {
        return Err(ParseError::unknown(name, config.vocabulary));
    }
    Ok((op, image))
}

fn coord(op: &str, param: &str, v: &Value<'_>) -> Result<u32, ParseError> {
    match v {
        Value::Num { n, fancy } if n.is_plain_integer(*fancy) && (!n.negative || n.num == 0) => {
            u32::try_from(n.num)
                .map_err(|_| ParseError::param(op, format!("'{param}' is too large")))
        }
        _ => Err(ParseError::param(
            op,
            format!("'{param}' must be a non-negative integer"),
        )),
    }
}

fn factor(op: &str, v: &Value<'_>) -> Result<Factor, ParseError> {
    match v {
        Value::Num { n, .. } if !n.negative && n.num > 0 => Factor::from_u64(n.num, n.den)
            .ok_or_else(|| ParseError::param(op, "factor is too large")),
        _ => Err(ParseError::param(op, "factor must be a positive number")),
    }
}

fn kernel(op: &str, v: &Value<'_>, max: u32) -> Result<u32, ParseError> {
    let k = match v {
        Value::Num { n, fancy } if n.is_plain_integer(*fancy) && !n.negative => {
            u32::try_from(n.num).ok()
        }
        _ => None,
    };
    match k {
        Some(k) if k >= 3 && k % 2 == 1 && k <= max => Ok(k),
        _ => Err(ParseError::param(
            op,
            format!("kernel_size must be an odd integer between 3 and {max}"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appendix_style_denoise() {
        let c =
            extract_call(r#"image_path = denoise(image_path, method="gaussian", kernel_size=3)"#)
                .unwrap();
        assert_eq!(
            c.op,
            AugmentationOp::Denoise {
                method: DenoiseMethod::Gaussian,
                kernel_size: 3
            }
        );
        assert_eq!(c.assignment_target.as_deref(), Some("image_path"));
        assert_eq!(c.image_arg.as_deref(), Some("image_path"));
    }

    #[test]
    fn unknown_operation() {
        let e = extract_call("brighten(image_path)").unwrap_err();
        assert_eq!(e.code, ParseErrorCode::UnknownOperation);
        assert_eq!(
            e.message,
            "Error: unknown operation 'brighten'. Available operations: crop, resize_up, resize_down, rotate, flip, denoise, edge."
        );
    }

    #[test]
    fn even_kernel_rejected() {
        let e = extract_call(r#"denoise(image_path, method="median", kernel_size=4)"#).unwrap_err();
        assert_eq!(e.code, ParseErrorCode::ParamInvalid);
        assert_eq!(
            e.message,
            "Error: invalid parameters for denoise: kernel_size must be an odd integer between 3 and 31."
        );
    }

    #[test]
    fn positional_crop() {
        let c = extract_call("crop(image_path, 10, 20, 110, 220)").unwrap();
        assert_eq!(
            c.op,
            AugmentationOp::Crop {
                x0: 10,
                y0: 20,
                x1: 110,
                y1: 220
            }
        );
        assert_eq!(c.assignment_target, None);
    }

    #[test]
    fn whitespace_insensitive() {
        let c = extract_call("  img =\n crop ( img ,x0 = 1 ,y0=2,\tx1=3 , y1 = 4 , ) ;  ").unwrap();
        assert_eq!(
            c.op,
            AugmentationOp::Crop {
                x0: 1,
                y0: 2,
                x1: 3,
                y1: 4
            }
        );
    }

    #[test]
    fn resize_dispatch() {
        let up = extract_call("resize(img, 2)").unwrap().op;
        assert_eq!(
            up,
            AugmentationOp::ResizeUp {
                factor: Factor::integer(2).unwrap()
            }
        );
        let down = extract_call("resize(img, factor=0.5)").unwrap().op;
        assert_eq!(
            down,
            AugmentationOp::ResizeDown {
                factor: Factor::new(1, 2).unwrap()
            }
        );
        let frac = extract_call("resize(img, factor=1/3)").unwrap().op;
        assert_eq!(
            frac,
            AugmentationOp::ResizeDown {
                factor: Factor::new(1, 3).unwrap()
            }
        );
        let id = extract_call("resize(img, 1)").unwrap().op;
        assert_eq!(
            id,
            AugmentationOp::ResizeUp {
                factor: Factor::ONE
            }
        );
        assert_eq!(
            extract_call("resize_up(img, 0.5)").unwrap_err().code,
            ParseErrorCode::ParamInvalid
        );
        assert_eq!(
            extract_call("resize(img, 16)").unwrap_err().code,
            ParseErrorCode::ParamInvalid
        );
        assert_eq!(
            extract_call("resize(img, -2)").unwrap_err().code,
            ParseErrorCode::ParamInvalid
        );
    }

    #[test]
    fn rotate_domain() {
        assert!(extract_call("rotate(img, 90)").is_ok());
        assert!(extract_call("rotate(img, degrees=270)").is_ok());
        for bad in [
            "rotate(img, 45)",
            "rotate(img, -90)",
            "rotate(img, \"90\")",
            "rotate(img)",
        ] {
            assert_eq!(
                extract_call(bad).unwrap_err().code,
                ParseErrorCode::ParamInvalid,
                "{bad}"
            );
        }
    }

    #[test]
    fn syntax_errors() {
        for bad in [
            "",
            "crop(img, 1, 2, 3, 4",
            "flip(img, axis=\"horizontal)",
            "a = flip(img) b = flip(img)",
            "flip(img); flip(img)",
            "flip(img, axis=\"vertical\", 3)",
            "flip img",
            "@flip(img)",
            "resize(img, 1/0)",
        ] {
            assert_eq!(
                extract_call(bad).unwrap_err().code,
                ParseErrorCode::SyntaxMalformed,
                "{bad:?}"
            );
        }
    }

    #[test]
    fn param_errors() {
        for bad in [
            "crop(img, 1, 2, 3)",
            "crop(img, 1, 2, 3, 4, 5)",
            "crop(img, 1.5, 2, 3, 4)",
            "crop(img, -1, 2, 3, 4)",
            "flip(img, axis=\"diagonal\")",
            "flip(img, direction=\"vertical\")",
            "denoise(img, method=\"box\")",
            "denoise(img, kernel_size=3, kernel_size=5)",
            "edge(img, 3)",
            "edge(image=\"x\")",
        ] {
            assert_eq!(
                extract_call(bad).unwrap_err().code,
                ParseErrorCode::ParamInvalid,
                "{bad:?}"
            );
        }
    }

    #[test]
    fn defaults_follow_the_signature() {
        let op = extract_call("denoise(img)").unwrap().op;
        assert_eq!(
            op,
            AugmentationOp::Denoise {
                method: DenoiseMethod::Median,
                kernel_size: 3
            }
        );
        let op = extract_call("flip(img)").unwrap().op;
        assert_eq!(
            op,
            AugmentationOp::Flip {
                axis: FlipAxis::Horizontal
            }
        );
    }

    #[test]
    fn disabled_op_is_unknown() {
        let cfg = ParserConfig {
            vocabulary: Vocabulary::all().without(OpKind::ResizeUp),
            ..Default::default()
        };
        let e = extract_call_with("resize(img, 2)", &cfg).unwrap_err();
        assert_eq!(e.code, ParseErrorCode::UnknownOperation);
        assert!(extract_call_with("resize(img, 0.5)", &cfg).is_ok());
        let none = ParserConfig {
            vocabulary: Vocabulary::empty(),
            ..Default::default()
        };
        let e = extract_call_with("edge(img)", &none).unwrap_err();
        assert_eq!(
            e.message,
            "Error: unknown operation 'edge'. Available operations: none."
        );
    }

    #[test]
    fn render_reparses() {
        let c = extract_call("out = denoise(src, 'bilateral', 5)").unwrap();
        let again = extract_call(&c.render()).unwrap();
        assert_eq!(again.op, c.op);
        assert_eq!(again.assignment_target, c.assignment_target);
        assert_eq!(again.image_arg, c.image_arg);
    }
}
