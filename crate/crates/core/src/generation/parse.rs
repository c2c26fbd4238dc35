use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no JSON object in output: {raw:?}")]
    NoObject { raw: String },
    #[error("field {field:?} missing in output: {raw:?}")]
    MissingField { field: String, raw: String },
    #[error("field {field:?} is not a string in output: {raw:?}")]
    NotAString { field: String, raw: String },
}

impl ParseError {
    pub fn raw(&self) -> &str {
        match self {
            Self::NoObject { raw } | Self::MissingField { raw, .. } | Self::NotAString { raw, .. } => raw,
        }
    }
}

/// Byte index one past the `}` closing the object that opens at `start`,
/// honoring string literals and escapes.
fn balanced_end(s: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in s[start..].char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// First balanced `{...}` span in `raw` that parses as a JSON object.
pub fn find_json_object(raw: &str) -> Option<Map<String, Value>> {
    let mut from = 0;
    while let Some(off) = raw[from..].find('{') {
        let start = from + off;
        if let Some(end) = balanced_end(raw, start) {
            if let Ok(Value::Object(map)) = serde_json::from_str(&raw[start..end]) {
                return Some(map);
            }
        }
        from = start + 1;
    }
    None
}

/// Extracts the string `field` from the JSON object embedded in `raw`.
pub fn parse_generation_json(raw: &str, field: &str) -> Result<String, ParseError> {
    let obj = find_json_object(raw).ok_or_else(|| ParseError::NoObject { raw: raw.to_owned() })?;
    match obj.get(field) {
        None => Err(ParseError::MissingField {
            field: field.to_owned(),
            raw: raw.to_owned(),
        }),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(ParseError::NotAString {
            field: field.to_owned(),
            raw: raw.to_owned(),
        }),
    }
}
