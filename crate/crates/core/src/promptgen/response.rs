use serde::Serialize;
use serde_json::Value;

use super::MutationPair;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseFailure {
    /// No `<json>...</json>` region in the reply.
    NoTags,
    /// The tagged region is not a JSON array.
    NotAnArray(String),
}

impl std::fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseFailure::NoTags => f.write_str("no <json></json> region"),
            ParseFailure::NotAnArray(e) => write!(f, "tagged region is not a JSON array: {e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ParsedResponse {
    pub pairs: Vec<MutationPair>,
    /// Array elements that were not valid pairs.
    pub dropped: usize,
    pub failure: Option<ParseFailure>,
}

const OPEN: &str = "<json>";
const CLOSE: &str = "</json>";

/// Extracts mutation pairs from the first `<json>...</json>` region.
/// Elements without a non-empty string `precode` and a string `aftercode`
/// are dropped one by one; a missing or non-array region yields no pairs.
pub fn parse_response(text: &str) -> ParsedResponse {
    let Some(start) = text.find(OPEN) else {
        return failed(ParseFailure::NoTags);
    };
    let body_start = start + OPEN.len();
    let Some(len) = text[body_start..].find(CLOSE) else {
        return failed(ParseFailure::NoTags);
    };
    let body = text[body_start..body_start + len].trim();
    let items = match serde_json::from_str::<Value>(body) {
        Ok(Value::Array(items)) => items,
        Ok(other) => return failed(ParseFailure::NotAnArray(format!("found {}", kind(&other)))),
        Err(e) => return failed(ParseFailure::NotAnArray(e.to_string())),
    };
    let mut parsed = ParsedResponse::default();
    for item in items {
        let pre = item.get("precode").and_then(Value::as_str);
        let after = item.get("aftercode").and_then(Value::as_str);
        match (pre, after) {
            (Some(p), Some(a)) if !p.trim().is_empty() => parsed.pairs.push(MutationPair {
                precode: p.to_string(),
                aftercode: a.to_string(),
            }),
            _ => parsed.dropped += 1,
        }
    }
    parsed
}

fn failed(failure: ParseFailure) -> ParsedResponse {
    ParsedResponse {
        failure: Some(failure),
        ..Default::default()
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}
