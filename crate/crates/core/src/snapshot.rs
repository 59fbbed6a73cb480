//! Snapshot document and graph validation.
//!
//! A snapshot is one JSON document with `global`, `clips`, `facts` and
//! `persons` sections, plus the stored embeddings so a load does not need
//! the embedder.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::PersonEntity;
use crate::index::Embedding;
use crate::types::{ClipNode, FactNode, GlobalNode, Level, LinkKind, NodeId};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEmbedding {
    pub id: NodeId,
    pub level: Level,
    pub vector: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    #[serde(default = "format_version")]
    pub format: u32,
    pub global: GlobalNode,
    pub clips: Vec<ClipNode>,
    pub facts: Vec<FactNode>,
    #[serde(default)]
    pub persons: Vec<PersonEntity>,
    #[serde(default)]
    pub embedding_dim: usize,
    #[serde(default)]
    pub embeddings: Vec<StoredEmbedding>,
    /// Sequence number of the last append-log event folded into this snapshot.
    #[serde(default)]
    pub log_seq: u64,
}

fn format_version() -> u32 {
    FORMAT_VERSION
}

impl Snapshot {
    pub fn empty(embedding_dim: usize) -> Self {
        Self {
            format: FORMAT_VERSION,
            global: GlobalNode::default(),
            clips: Vec::new(),
            facts: Vec::new(),
            persons: Vec::new(),
            embedding_dim,
            embeddings: Vec::new(),
            log_seq: 0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SnapshotError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let parsed: Snapshot = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            SnapshotError {
                offset: byte_offset(text, inner.line(), inner.column()),
                field: path,
                message: inner.to_string(),
            }
        })?;
        if parsed.format != FORMAT_VERSION {
            return Err(SnapshotError {
                offset: 0,
                field: "format".into(),
                message: format!("unsupported snapshot format {}", parsed.format),
            });
        }
        Ok(parsed)
    }
}

/// A snapshot that could not be parsed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("snapshot parse error at byte {offset}, field `{field}`: {message}")]
pub struct SnapshotError {
    pub offset: usize,
    pub field: String,
    pub message: String,
}

/// Converts serde_json's 1-based line/column into a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// One broken invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "kebab-case")]
pub enum Violation {
    DuplicateId { id: NodeId },
    DanglingLink { source: NodeId, target: NodeId },
    WeightOutOfRange { source: NodeId, target: NodeId, weight: f64 },
    LinkKindMisuse { source: NodeId, target: NodeId, kind: LinkKind },
    InvalidSpan { node: NodeId },
    SpanContainment { fact: NodeId, clip: NodeId },
    AsrPeriodOutsideSpan { fact: NodeId },
    KeyframeOutsideSpan { fact: NodeId },
    EmptyText { node: NodeId },
    ParentMismatch { fact: NodeId, clip: NodeId },
    EmptyClip { clip: NodeId },
    MissingHierLink { source: NodeId, target: NodeId, kind: LinkKind },
    GlobalCountMismatch { clips_integrated: u64, clips: u64 },
    DanglingEvidence { person: String, node: NodeId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId { id } => write!(f, "duplicate-id({id})"),
            Violation::DanglingLink { source, target } => write!(f, "dangling-link({source} -> {target})"),
            Violation::WeightOutOfRange { source, target, weight } => {
                write!(f, "weight-out-of-range({source} -> {target}: {weight})")
            }
            Violation::LinkKindMisuse { source, target, kind } => {
                write!(f, "link-kind-misuse({kind} {source} -> {target})")
            }
            Violation::InvalidSpan { node } => write!(f, "invalid-span({node})"),
            Violation::SpanContainment { fact, clip } => write!(f, "span-containment({fact} in {clip})"),
            Violation::AsrPeriodOutsideSpan { fact } => write!(f, "asr-period-outside-span({fact})"),
            Violation::KeyframeOutsideSpan { fact } => write!(f, "keyframe-outside-span({fact})"),
            Violation::EmptyText { node } => write!(f, "empty-text({node})"),
            Violation::ParentMismatch { fact, clip } => write!(f, "parent-mismatch({fact}, {clip})"),
            Violation::EmptyClip { clip } => write!(f, "empty-clip({clip})"),
            Violation::MissingHierLink { source, target, kind } => {
                write!(f, "missing-hier-link({kind} {source} -> {target})")
            }
            Violation::GlobalCountMismatch { clips_integrated, clips } => {
                write!(f, "global-count-mismatch({clips_integrated} integrated, {clips} clips)")
            }
            Violation::DanglingEvidence { person, node } => write!(f, "dangling-evidence({person} -> {node})"),
        }
    }
}

/// Every invariant violation in the snapshot; empty means valid.
pub fn validate_graph(s: &Snapshot) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut levels: HashMap<&NodeId, Level> = HashMap::new();
    for (id, level) in std::iter::once((&s.global.id, Level::Global))
        .chain(s.clips.iter().map(|c| (&c.id, Level::Clip)))
        .chain(s.facts.iter().map(|f| (&f.id, Level::Fact)))
    {
        if levels.insert(id, level).is_some() {
            out.push(Violation::DuplicateId { id: id.clone() });
        }
    }
    let clips: HashMap<&NodeId, &ClipNode> = s.clips.iter().map(|c| (&c.id, c)).collect();
    let facts: HashMap<&NodeId, &FactNode> = s.facts.iter().map(|f| (&f.id, f)).collect();

    let check_link = |out: &mut Vec<Violation>, source: &NodeId, from: Level, link: &crate::types::Link| {
        if !(0.0..=1.0).contains(&link.weight) {
            out.push(Violation::WeightOutOfRange {
                source: source.clone(),
                target: link.target.clone(),
                weight: link.weight,
            });
        }
        let Some(&to) = levels.get(&link.target) else {
            out.push(Violation::DanglingLink {
                source: source.clone(),
                target: link.target.clone(),
            });
            return;
        };
        let allowed = matches!(
            (link.kind, from, to),
            (LinkKind::Relational, Level::Fact, Level::Fact)
                | (LinkKind::HierUp, Level::Fact, Level::Clip)
                | (LinkKind::HierUp, Level::Clip, Level::Global)
                | (LinkKind::HierDown, Level::Clip, Level::Fact)
                | (LinkKind::HierDown, Level::Global, Level::Clip)
                | (LinkKind::CrossClip, Level::Clip, Level::Clip)
        ) && &link.target != source;
        if !allowed {
            out.push(Violation::LinkKindMisuse {
                source: source.clone(),
                target: link.target.clone(),
                kind: link.kind,
            });
        }
    };

    for f in &s.facts {
        if f.text.trim().is_empty() {
            out.push(Violation::EmptyText { node: f.id.clone() });
        }
        if !f.span.is_valid() {
            out.push(Violation::InvalidSpan { node: f.id.clone() });
        }
        if f.asr_periods.iter().any(|p| !f.span.contains(p)) {
            out.push(Violation::AsrPeriodOutsideSpan { fact: f.id.clone() });
        }
        if f.keyframes.iter().any(|k| !f.span.contains_time(k.timestamp)) {
            out.push(Violation::KeyframeOutsideSpan { fact: f.id.clone() });
        }
        for link in &f.links {
            check_link(&mut out, &f.id, Level::Fact, link);
        }
        match clips.get(&f.clip_id) {
            Some(c) => {
                if !c.fact_ids.contains(&f.id) {
                    out.push(Violation::ParentMismatch {
                        fact: f.id.clone(),
                        clip: c.id.clone(),
                    });
                }
                if !c.span.contains(&f.span) {
                    out.push(Violation::SpanContainment {
                        fact: f.id.clone(),
                        clip: c.id.clone(),
                    });
                }
                if !has_link(&f.links, &c.id, LinkKind::HierUp) {
                    out.push(missing(&f.id, &c.id, LinkKind::HierUp));
                }
            }
            None => out.push(Violation::ParentMismatch {
                fact: f.id.clone(),
                clip: f.clip_id.clone(),
            }),
        }
    }

    for c in &s.clips {
        if !c.span.is_valid() {
            out.push(Violation::InvalidSpan { node: c.id.clone() });
        }
        if c.fact_ids.is_empty() {
            out.push(Violation::EmptyClip { clip: c.id.clone() });
        }
        for fid in &c.fact_ids {
            match facts.get(fid) {
                Some(f) if f.clip_id == c.id => {
                    if !has_link(&c.links, fid, LinkKind::HierDown) {
                        out.push(missing(&c.id, fid, LinkKind::HierDown));
                    }
                }
                _ => out.push(Violation::ParentMismatch {
                    fact: fid.clone(),
                    clip: c.id.clone(),
                }),
            }
        }
        // cross-clip links live in their own list
        for link in &c.links {
            if matches!(link.kind, LinkKind::HierUp | LinkKind::HierDown) {
                check_link(&mut out, &c.id, Level::Clip, link);
            } else {
                out.push(Violation::LinkKindMisuse {
                    source: c.id.clone(),
                    target: link.target.clone(),
                    kind: link.kind,
                });
            }
        }
        for link in &c.cross_clip_links {
            if link.kind == LinkKind::CrossClip {
                check_link(&mut out, &c.id, Level::Clip, link);
            } else {
                out.push(Violation::LinkKindMisuse {
                    source: c.id.clone(),
                    target: link.target.clone(),
                    kind: link.kind,
                });
            }
        }
        if !has_link(&c.links, &s.global.id, LinkKind::HierUp) {
            out.push(missing(&c.id, &s.global.id, LinkKind::HierUp));
        }
        if !has_link(&s.global.links, &c.id, LinkKind::HierDown) {
            out.push(missing(&s.global.id, &c.id, LinkKind::HierDown));
        }
    }

    for link in &s.global.links {
        check_link(&mut out, &s.global.id, Level::Global, link);
    }
    if s.global.clips_integrated != s.clips.len() as u64 {
        out.push(Violation::GlobalCountMismatch {
            clips_integrated: s.global.clips_integrated,
            clips: s.clips.len() as u64,
        });
    }

    for p in &s.persons {
        let mut seen = HashSet::new();
        for n in &p.evidence {
            if seen.insert(n) && !levels.contains_key(n) {
                out.push(Violation::DanglingEvidence {
                    person: p.person_id.clone(),
                    node: n.clone(),
                });
            }
        }
    }
    out
}

fn has_link(links: &[crate::types::Link], target: &NodeId, kind: LinkKind) -> bool {
    links.iter().any(|l| l.kind == kind && &l.target == target)
}

fn missing(source: &NodeId, target: &NodeId, kind: LinkKind) -> Violation {
    Violation::MissingHierLink {
        source: source.clone(),
        target: target.clone(),
        kind,
    }
}
