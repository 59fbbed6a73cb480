//! One-step expansion over the memory graph and passage rendering.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;

use crate::adapters::{Passage, PassageTime};
use crate::store::PyramidStore;
use crate::types::{Level, LinkKind, NodeId};

/// Which edges expansion may follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeRules {
    /// fact → parent clip, clip → child facts.
    pub hierarchy: bool,
    /// fact → relational targets, clip → cross-clip targets.
    pub relational: bool,
    /// Also follow relational and cross-clip links backwards.
    pub undirected: bool,
}

impl Default for EdgeRules {
    fn default() -> Self {
        Self {
            hierarchy: true,
            relational: true,
            undirected: true,
        }
    }
}

/// Neighbors of `id` under `rules`, in a fixed order: hierarchy first, then
/// outgoing links in insertion order, then incoming links by source age.
pub fn neighbors(store: &PyramidStore, id: &NodeId, rules: EdgeRules) -> Vec<NodeId> {
    let mut out = Vec::new();
    match store.level_of(id) {
        Some(Level::Fact) => {
            let fact = store.fact(id).expect("level_of checked");
            if rules.hierarchy {
                out.push(fact.clip_id.clone());
            }
            if rules.relational {
                out.extend(fact.links_of(LinkKind::Relational).map(|l| l.target.clone()));
                if rules.undirected {
                    out.extend(store.incoming(id).iter().cloned());
                }
            }
        }
        Some(Level::Clip) => {
            let clip = store.clip(id).expect("level_of checked");
            if rules.hierarchy {
                out.extend(clip.fact_ids.iter().cloned());
            }
            if rules.relational {
                out.extend(clip.cross_clip_links.iter().map(|l| l.target.clone()));
                if rules.undirected {
                    out.extend(store.incoming(id).iter().cloned());
                }
            }
        }
        // the global node is side context, never expanded into
        Some(Level::Global) | None => {}
    }
    out
}

/// Union of the frontier's neighbors minus everything already in `context`,
/// deduplicated in first-seen order.
pub fn expand(
    store: &PyramidStore,
    context: &HashSet<NodeId>,
    frontier: &[NodeId],
    rules: EdgeRules,
) -> Vec<NodeId> {
    let mut seen: HashSet<&NodeId> = HashSet::new();
    let mut out = Vec::new();
    let all: Vec<Vec<NodeId>> = frontier.iter().map(|id| neighbors(store, id, rules)).collect();
    for id in all.iter().flatten() {
        if !context.contains(id) && seen.insert(id) {
            out.push(id.clone());
        }
    }
    out
}

/// A node as shown to the pruner and answerer.
pub fn passage(store: &PyramidStore, id: &NodeId) -> Option<Passage> {
    if let Some(f) = store.fact(id) {
        Some(Passage {
            node: id.clone(),
            level: Level::Fact,
            text: f.text.clone(),
            time: PassageTime::Instant { timestamp: f.span.start },
            character_text: f.character_text.clone(),
            keyframes: f.keyframes.clone(),
        })
    } else {
        store.clip(id).map(|c| Passage {
            node: id.clone(),
            level: Level::Clip,
            text: c.summary.clone(),
            time: PassageTime::Range {
                start: c.span.start,
                end: c.span.end,
            },
            character_text: c.character_summary.clone(),
            keyframes: Vec::new(),
        })
    }
}

fn person_tag_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<(p-\d+)>").expect("valid regex"))
}

/// Profiles of persons tagged in the passages, in order of first mention.
pub fn matched_profiles(store: &PyramidStore, passages: &[Passage]) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for p in passages {
        let Some(text) = &p.character_text else {
            continue;
        };
        for cap in person_tag_pattern().captures_iter(text) {
            let pid = &cap[1];
            if out.iter().any(|(id, _)| id == pid) {
                continue;
            }
            if let Some(person) = store.persons().get(pid) {
                out.push((pid.to_string(), person.profile.clone()));
            }
        }
    }
    out
}
