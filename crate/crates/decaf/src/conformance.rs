//! Replays recorded protocol transcripts against a segmenter.
//!
//! A transcript is a text file of lines `> {request}` and `< {reply}`; blank
//! lines and lines starting with `#` are ignored. `{frames}` inside a request
//! is replaced by the frames directory under test. Requests may be
//! deliberately malformed to exercise error handling.

use std::time::Duration;

use serde_json::Value;

use crate::client::Transport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strictness {
    /// Replies must equal the transcript, except error message text.
    Exact,
    /// Only message types, frames, mask sizes, dimensions and error codes must match.
    Structural,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Line {
    Send(String),
    Expect(String),
}

pub fn parse_transcript(text: &str) -> Result<Vec<Line>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            if let Some(rest) = l.strip_prefix("> ") {
                Ok(Line::Send(rest.to_owned()))
            } else if let Some(rest) = l.strip_prefix("< ") {
                Ok(Line::Expect(rest.to_owned()))
            } else {
                Err(format!("line {}: expected '> ' or '< ' prefix", i + 1))
            }
        })
        .collect()
}

fn field<'a>(v: &'a Value, key: &str) -> &'a Value {
    v.get(key).unwrap_or(&Value::Null)
}

/// JSON equality where numbers compare by value, so `1` equals `1.0`.
fn same(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x == y || x.as_f64() == y.as_f64(),
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| same(p, q)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| same(v, w)))
        }
        _ => a == b,
    }
}

fn matches(expected: &Value, got: &Value, strictness: Strictness) -> bool {
    let ty = field(expected, "type");
    if ty != field(got, "type") {
        return false;
    }
    let keys: &[&str] = match (ty.as_str(), strictness) {
        (Some("error"), _) => &["code"],
        (_, Strictness::Exact) => return same(expected, got),
        (Some("ready"), _) => &["format_version", "num_frames", "height", "width"],
        (Some("mask"), _) => {
            return same(field(expected, "frame"), field(got, "frame"))
                && same(field(field(expected, "rle"), "size"), field(field(got, "rle"), "size"))
                && field(got, "confidence").is_number()
        }
        _ => &[],
    };
    keys.iter().all(|k| same(field(expected, k), field(got, k)))
}

/// Plays `lines` through `transport`, comparing every reply.
pub fn replay(
    lines: &[Line],
    frames_dir: &str,
    transport: &mut dyn Transport,
    strictness: Strictness,
    timeout: Duration,
) -> Result<usize, String> {
    let mut checked = 0;
    for (i, line) in lines.iter().enumerate() {
        match line {
            Line::Send(req) => transport
                .send(&req.replace("{frames}", frames_dir))
                .map_err(|e| format!("step {i}: {e}"))?,
            Line::Expect(want) => {
                let got = transport.recv(timeout).map_err(|e| format!("step {i}: {e}"))?;
                let want_v: Value =
                    serde_json::from_str(want).map_err(|e| format!("step {i}: bad transcript line: {e}"))?;
                let got_v: Value =
                    serde_json::from_str(&got).map_err(|e| format!("step {i}: reply is not JSON: {got:?}: {e}"))?;
                if !matches(&want_v, &got_v, strictness) {
                    return Err(format!("step {i}: expected {want}\n  got {got}"));
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}
