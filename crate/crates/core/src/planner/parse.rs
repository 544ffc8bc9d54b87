//! Parsers for planner replies: the enumeration JSON object and the single
//! selection tuple.

use serde_json::Value;

use super::{ElementCandidate, PlannerResponse};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no JSON object found in reply")]
    NoJson,
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("missing key {0:?}")]
    MissingKey(&'static str),
    #[error("key {0:?} has the wrong type")]
    WrongType(&'static str),
    #[error("list_objects entry {index} has {len} fields, expected 2")]
    Arity { index: usize, len: usize },
    #[error("reply is not a single (ID, name, description) tuple: {0}")]
    NotATuple(String),
    #[error("selection index {0:?} is not a non-negative integer")]
    BadIndex(String),
    #[error("selected index {0} is not in the offered list")]
    UnknownIndex(usize),
}

/// Drops a surrounding markdown code fence, if any.
fn strip_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    // Skip the info string (e.g. `json`) on the opening line.
    let rest = rest.split_once('\n').map_or("", |(_, body)| body);
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}

pub fn parse_planner_response(text: &str) -> Result<PlannerResponse, ParseError> {
    let body = strip_fence(text);
    let start = body.find('{').ok_or(ParseError::NoJson)?;
    let end = body.rfind('}').ok_or(ParseError::NoJson)?;
    if end < start {
        return Err(ParseError::NoJson);
    }
    let value: Value = serde_json::from_str(&body[start..=end]).map_err(|e| ParseError::Json(e.to_string()))?;
    let obj = value.as_object().ok_or(ParseError::NoJson)?;
    let primary_subject = obj
        .get("primary_subject")
        .ok_or(ParseError::MissingKey("primary_subject"))?
        .as_str()
        .ok_or(ParseError::WrongType("primary_subject"))?
        .to_string();
    let list = obj
        .get("list_objects")
        .ok_or(ParseError::MissingKey("list_objects"))?
        .as_array()
        .ok_or(ParseError::WrongType("list_objects"))?;
    let mut list_objects = Vec::with_capacity(list.len());
    for (index, entry) in list.iter().enumerate() {
        let pair = entry.as_array().ok_or(ParseError::WrongType("list_objects"))?;
        if pair.len() != 2 {
            return Err(ParseError::Arity { index, len: pair.len() });
        }
        let field = |v: &Value| v.as_str().map(str::to_string).ok_or(ParseError::WrongType("list_objects"));
        list_objects.push((field(&pair[0])?, field(&pair[1])?));
    }
    Ok(PlannerResponse { primary_subject, list_objects })
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    for q in ['"', '\'', '`'] {
        if s.len() >= 2 && s.starts_with(q) && s.ends_with(q) {
            return s[1..s.len() - 1].trim();
        }
    }
    s
}

pub fn parse_selection(text: &str) -> Result<ElementCandidate, ParseError> {
    let not_tuple = || ParseError::NotATuple(text.trim().to_string());
    let t = strip_fence(text).trim_end_matches(|c: char| c.is_whitespace() || ".,;:!".contains(c));
    let t = t.trim_start();
    if !t.starts_with('(') || !t.ends_with(')') {
        return Err(not_tuple());
    }
    // The opening parenthesis must close only at the very end.
    let mut depth = 0i32;
    for (i, c) in t.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 && i + 1 != t.len() {
                    return Err(not_tuple());
                }
            }
            _ => {}
        }
    }
    let inner = &t[1..t.len() - 1];
    let mut parts = inner.splitn(3, ',');
    let (Some(id), Some(name), Some(description)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(not_tuple());
    };
    let id = unquote(id);
    let index = id.parse::<usize>().map_err(|_| ParseError::BadIndex(id.to_string()))?;
    let name = unquote(name);
    if name.is_empty() {
        return Err(not_tuple());
    }
    Ok(ElementCandidate { index, name: name.to_string(), description: unquote(description).to_string() })
}
