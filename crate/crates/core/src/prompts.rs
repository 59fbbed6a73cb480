//! Versioned prompt templates and slot rendering.
//!
//! Templates use format-string slots: `{name}` is replaced by the slot value,
//! `{{` and `}}` render as literal braces, and any other brace (for example
//! the JSON skeletons in the link prompt) passes through unchanged.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::adapters::{LinkFact, Passage, PassageTime};
use crate::types::format_timestamp;

pub const TEMPLATE_VERSION: &str = "v1";

pub const LINK_GENERATION: &str = include_str!("../prompts/v1/link_generation.txt");
pub const LLM_JUDGE: &str = include_str!("../prompts/v1/llm_judge.txt");
pub const MC_ANSWERING: &str = include_str!("../prompts/v1/mc_answering.txt");
pub const OPEN_ANSWERING: &str = include_str!("../prompts/v1/open_answering.txt");
pub const MC_NODE_SELECTION: &str = include_str!("../prompts/v1/mc_node_selection.txt");
pub const OPEN_NODE_SELECTION: &str = include_str!("../prompts/v1/open_node_selection.txt");
pub const EXTRACTION: &str = include_str!("../prompts/v1/extraction.txt");
pub const GLOBAL_UPDATE: &str = include_str!("../prompts/v1/global_update.txt");
pub const PROFILE_UPDATE: &str = include_str!("../prompts/v1/profile_update.txt");

/// Every shipped template by resource name.
pub const TEMPLATES: [(&str, &str); 9] = [
    ("link_generation", LINK_GENERATION),
    ("llm_judge", LLM_JUDGE),
    ("mc_answering", MC_ANSWERING),
    ("open_answering", OPEN_ANSWERING),
    ("mc_node_selection", MC_NODE_SELECTION),
    ("open_node_selection", OPEN_NODE_SELECTION),
    ("extraction", EXTRACTION),
    ("global_update", GLOBAL_UPDATE),
    ("profile_update", PROFILE_UPDATE),
];

pub fn template(name: &str) -> Option<&'static str> {
    TEMPLATES.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("missing slot {0:?}")]
    MissingSlot(String),
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn is_slot_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn pieces(template: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let bytes = template.as_bytes();
    let mut i = 0;
    let mut text_start = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' | b'}' if bytes.get(i + 1) == Some(&bytes[i]) => {
                out.push(Piece::Text(&template[text_start..i]));
                out.push(Piece::Text(&template[i..i + 1]));
                i += 2;
                text_start = i;
            }
            b'{' => {
                let close = template[i + 1..].find('}').map(|off| i + 1 + off);
                match close {
                    Some(end) if is_slot_name(&template[i + 1..end]) => {
                        out.push(Piece::Text(&template[text_start..i]));
                        out.push(Piece::Slot(&template[i + 1..end]));
                        i = end + 1;
                        text_start = i;
                    }
                    _ => i += 1,
                }
            }
            _ => i += 1,
        }
    }
    out.push(Piece::Text(&template[text_start..]));
    out
}

/// Names of the slots a template expects, in order of first appearance.
pub fn slot_names(template: &str) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for p in pieces(template) {
        if let Piece::Slot(name) = p {
            if !names.iter().any(|n| n == name) {
                names.push(name.to_string());
            }
        }
    }
    names
}

/// Substitutes every slot; fails on the first slot without a value.
pub fn render_prompt(template: &str, slots: &BTreeMap<&str, String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    for p in pieces(template) {
        match p {
            Piece::Text(t) => out.push_str(t),
            Piece::Slot(name) => {
                let value = slots
                    .get(name)
                    .ok_or_else(|| PromptError::MissingSlot(name.to_string()))?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

/// Convenience wrapper over [`render_prompt`] for a named template.
pub fn render_named(name: &str, slots: &BTreeMap<&str, String>) -> Result<String, PromptError> {
    let t = template(name).ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))?;
    render_prompt(t, slots)
}

/// Passages keyed by their 0-based position, in the node-selection format.
pub fn render_passages(passages: &[Passage]) -> String {
    let mut map = Map::new();
    for (i, p) in passages.iter().enumerate() {
        let text = p.character_text.as_deref().unwrap_or(&p.text);
        let body = match p.time {
            PassageTime::Instant { timestamp } => {
                json!({ "text": text, "timestamp": format_timestamp(timestamp) })
            }
            PassageTime::Range { start, end } => json!({
                "text": text,
                "timestamp_start": format_timestamp(start),
                "timestamp_end": format_timestamp(end),
            }),
        };
        map.insert(i.to_string(), body);
    }
    serde_json::to_string_pretty(&Value::Object(map)).expect("json value")
}

pub fn render_profiles(profiles: &[(String, String)]) -> String {
    let map: Map<String, Value> = profiles
        .iter()
        .map(|(id, profile)| (id.clone(), Value::String(profile.clone())))
        .collect();
    serde_json::to_string_pretty(&Value::Object(map)).expect("json value")
}

pub fn render_link_fact(fact: &LinkFact) -> String {
    serde_json::to_string_pretty(fact).expect("link fact")
}

pub fn render_link_facts(facts: &[LinkFact]) -> String {
    serde_json::to_string_pretty(facts).expect("link facts")
}
