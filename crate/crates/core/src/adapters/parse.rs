//! Parsers for raw model output.

use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::types::{Verdict, DEFAULT_LINK_WEIGHT};

pub const ANSWER_MARKER: &str = "[ANSWER]";
pub const EXPAND_MARKER: &str = "[Expand]";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no [ANSWER] or [Expand] marker in output")]
    NoVerdict,
    #[error("[ANSWER] marker without an answer")]
    EmptyAnswer,
    #[error("no integer list in output")]
    NoSelection,
    #[error("no links object in output: {0}")]
    NoLinks(String),
}

/// Reads the final directive of an answering model.
///
/// The last marker in the text wins; an answer is everything after the final
/// `[ANSWER]`, trimmed.
pub fn parse_verdict(raw: &str) -> Result<Verdict, ParseError> {
    let answer_at = raw.rfind(ANSWER_MARKER);
    let expand_at = raw.to_ascii_lowercase().rfind(&EXPAND_MARKER.to_ascii_lowercase());
    match (answer_at, expand_at) {
        (None, None) => Err(ParseError::NoVerdict),
        (Some(a), Some(e)) if e > a => Ok(Verdict::Expand),
        (None, Some(_)) => Ok(Verdict::Expand),
        (Some(a), _) => {
            let payload = raw[a + ANSWER_MARKER.len()..].trim();
            if payload.is_empty() {
                Err(ParseError::EmptyAnswer)
            } else {
                Ok(Verdict::Answer(payload.to_string()))
            }
        }
    }
}

fn list_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[\s*(\d+(?:\s*,\s*\d+)*)?\s*,?\s*\]").expect("valid regex"))
}

/// Extracts the first well-formed list of non-negative integers, keeps
/// indices below `n_candidates` and drops repeats (first occurrence wins).
pub fn parse_selection(raw: &str, n_candidates: usize) -> Result<Vec<usize>, ParseError> {
    let caps = list_pattern().captures(raw).ok_or(ParseError::NoSelection)?;
    let mut out: Vec<usize> = Vec::new();
    if let Some(body) = caps.get(1) {
        for tok in body.as_str().split(',') {
            // numbers too large for usize are out of range anyway
            let Ok(i) = tok.trim().parse::<usize>() else {
                continue;
            };
            if i < n_candidates && !out.contains(&i) {
                out.push(i);
            }
        }
    }
    Ok(out)
}

/// One link as emitted by the link judge, before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgedLink {
    pub target: String,
    pub description: String,
    pub weight: f64,
}

#[derive(Deserialize)]
struct RawJudgement {
    links: Vec<Value>,
}

/// Parses `{"links": [...]}`, tolerating code fences or prose around the JSON.
///
/// Entries without a string `target` are skipped. A missing or non-numeric
/// weight becomes the default weight; numeric weights are clamped to `[0, 1]`.
pub fn parse_link_judgement(raw: &str) -> Result<Vec<JudgedLink>, ParseError> {
    let start = raw.find('{').ok_or_else(|| ParseError::NoLinks("no JSON object".into()))?;
    let end = raw.rfind('}').ok_or_else(|| ParseError::NoLinks("no JSON object".into()))?;
    if end < start {
        return Err(ParseError::NoLinks("no JSON object".into()));
    }
    let parsed: RawJudgement =
        serde_json::from_str(&raw[start..=end]).map_err(|e| ParseError::NoLinks(e.to_string()))?;
    let links = parsed
        .links
        .into_iter()
        .filter_map(|v| {
            let target = match v.get("target")? {
                Value::String(s) => s.clone(),
                Value::Number(n) => n.to_string(),
                _ => return None,
            };
            let description = v
                .get("description")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string();
            let weight = v
                .get("weight")
                .and_then(Value::as_f64)
                .filter(|w| w.is_finite())
                .map(|w| w.clamp(0.0, 1.0))
                .unwrap_or(DEFAULT_LINK_WEIGHT);
            Some(JudgedLink {
                target,
                description,
                weight,
            })
        })
        .collect();
    Ok(links)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_fixtures() {
        let case = "The passage at 42:47 says a monitor lizard swims in the water. \
                    The monitor lizard is a type of lizard, which corresponds to option C.\n\n[ANSWER] C";
        assert_eq!(parse_verdict(case), Ok(Verdict::Answer("C".into())));
        assert_eq!(parse_verdict("[Expand]"), Ok(Verdict::Expand));
        assert_eq!(parse_verdict("no markers here"), Err(ParseError::NoVerdict));
        assert_eq!(
            parse_verdict("The woman is holding the trophy in the final scene. [ANSWER] A"),
            Ok(Verdict::Answer("A".into()))
        );
        assert_eq!(
            parse_verdict("From the text given and images, the woman is holding the trophy in the final scene. \n[ANSWER] The woman is holding the trophy."),
            Ok(Verdict::Answer("The woman is holding the trophy.".into()))
        );
    }

    #[test]
    fn last_marker_wins() {
        assert_eq!(parse_verdict("[ANSWER] B ... on reflection [Expand]"), Ok(Verdict::Expand));
        assert_eq!(parse_verdict("[Expand] hmm, actually [ANSWER] D "), Ok(Verdict::Answer("D".into())));
        assert_eq!(parse_verdict("the correct action is to expand.\n\n[EXPAND]"), Ok(Verdict::Expand));
        assert_eq!(parse_verdict("[ANSWER]   "), Err(ParseError::EmptyAnswer));
    }

    #[test]
    fn selection_fixtures() {
        assert_eq!(parse_selection("[1, 3, 5]", 6), Ok(vec![1, 3, 5]));
        assert_eq!(parse_selection("[0, 0, 9]", 3), Ok(vec![0]));
        assert_eq!(parse_selection("sorry", 3), Err(ParseError::NoSelection));
        assert_eq!(parse_selection("[]", 3), Ok(vec![]));
        assert_eq!(parse_selection("Helpful: [2,1]. Also [0]", 3), Ok(vec![2, 1]));
        assert_eq!(parse_selection("[a, b] then [1]", 3), Ok(vec![1]));
        assert_eq!(parse_selection("[1, 99]", 3), Ok(vec![1]));
        assert_eq!(parse_selection("[1, 2,]", 3), Ok(vec![1, 2]));
        assert_eq!(parse_selection("[184467440737095516160]", 3), Ok(vec![]));
    }

    #[test]
    fn link_judgement_shapes() {
        let raw = "```json\n{\"links\": [{\"target\": \"f-1\", \"description\": \"causes\", \"weight\": 0.8},\
                   {\"target\": \"f-2\", \"description\": \"after\"},\
                   {\"target\": \"f-3\", \"weight\": 7},\
                   {\"description\": \"no target\"}]}\n```";
        let links = parse_link_judgement(raw).unwrap();
        assert_eq!(links.len(), 3);
        assert_eq!(links[0].weight, 0.8);
        assert_eq!(links[1].weight, DEFAULT_LINK_WEIGHT);
        assert_eq!(links[2].weight, 1.0);
        assert!(parse_link_judgement("not json").is_err());
        assert_eq!(parse_link_judgement("{\"links\": []}").unwrap(), vec![]);
    }
}
