//! Shared domain types for the memory graph.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Stable identifier of a node in the memory graph.
///
/// Identifiers carry a level prefix (`f-`, `c-`, `g-`) followed by a
/// monotone counter. Ordering is plain string ordering, which is what every
/// deterministic tie-break in the crate relies on.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub const GLOBAL: &'static str = "g-0";

    pub fn new(raw: impl Into<String>) -> Self {
        Self(raw.into())
    }

    pub fn fact(counter: u64) -> Self {
        Self(format!("f-{counter}"))
    }

    pub fn clip(counter: u64) -> Self {
        Self(format!("c-{counter}"))
    }

    pub fn global() -> Self {
        Self(Self::GLOBAL.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Level implied by the prefix, if the id follows the naming scheme.
    pub fn level(&self) -> Option<Level> {
        match self.0.split_once('-') {
            Some(("f", _)) => Some(Level::Fact),
            Some(("c", _)) => Some(Level::Clip),
            Some(("g", _)) => Some(Level::Global),
            _ => None,
        }
    }

    /// Numeric counter following the prefix.
    pub fn counter(&self) -> Option<u64> {
        self.0.split_once('-').and_then(|(_, n)| n.parse().ok())
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// Pyramid level of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Fact,
    Clip,
    Global,
}

/// Closed time interval in seconds from stream start.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimeSpan {
    pub start: f64,
    pub end: f64,
}

impl TimeSpan {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn point(t: f64) -> Self {
        Self { start: t, end: t }
    }

    pub fn is_valid(&self) -> bool {
        self.start.is_finite() && self.end.is_finite() && 0.0 <= self.start && self.start <= self.end
    }

    pub fn contains(&self, other: &TimeSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn contains_time(&self, t: f64) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Formats seconds as `MM:SS` (minutes grow past 59 for long streams).
pub fn format_timestamp(seconds: f64) -> String {
    let total = seconds.max(0.0).floor() as u64;
    format!("{:02}:{:02}", total / 60, total % 60)
}

/// Parses `SS`, `MM:SS` or `HH:MM:SS`, with an optional fractional seconds part.
pub fn parse_timestamp(raw: &str) -> Option<f64> {
    let parts: Vec<&str> = raw.trim().split(':').collect();
    if parts.is_empty() || parts.len() > 3 {
        return None;
    }
    let mut total = 0.0;
    for (i, part) in parts.iter().enumerate() {
        let value: f64 = part.trim().parse().ok()?;
        if !value.is_finite() || value < 0.0 {
            return None;
        }
        // only the last component may carry a fraction
        if i + 1 < parts.len() && value.fract() != 0.0 {
            return None;
        }
        total = total * 60.0 + value;
    }
    Some(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeyframeEncoding {
    ExternalFile,
    InlineBase64,
}

/// Pointer to a stored frame; the engine never decodes media.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeRef {
    pub timestamp: f64,
    pub uri: String,
    pub encoding: KeyframeEncoding,
}

impl KeyframeRef {
    /// Infers the encoding from the locator: `data:` and `base64:` URIs are inline.
    pub fn from_uri(uri: impl Into<String>, timestamp: f64) -> Self {
        let uri = uri.into();
        let encoding = if uri.starts_with("data:") || uri.starts_with("base64:") {
            KeyframeEncoding::InlineBase64
        } else {
            KeyframeEncoding::ExternalFile
        };
        Self {
            timestamp,
            uri,
            encoding,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkKind {
    Relational,
    HierUp,
    HierDown,
    CrossClip,
}

impl LinkKind {
    pub const ALL: [LinkKind; 4] = [
        LinkKind::Relational,
        LinkKind::HierUp,
        LinkKind::HierDown,
        LinkKind::CrossClip,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LinkKind::Relational => "relational",
            LinkKind::HierUp => "hier-up",
            LinkKind::HierDown => "hier-down",
            LinkKind::CrossClip => "cross-clip",
        }
    }
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Weight used when a judge omits one.
pub const DEFAULT_LINK_WEIGHT: f64 = 0.5;

/// Directed, typed edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub target: NodeId,
    pub description: String,
    pub weight: f64,
    pub kind: LinkKind,
}

impl Link {
    pub fn new(target: NodeId, description: impl Into<String>, weight: f64, kind: LinkKind) -> Self {
        Self {
            target,
            description: description.into(),
            weight,
            kind,
        }
    }

    pub fn hierarchical(target: NodeId, kind: LinkKind) -> Self {
        let description = match kind {
            LinkKind::HierUp => "part of",
            _ => "contains",
        };
        Self::new(target, description, 1.0, kind)
    }
}

/// Fine-grained episodic observation: the pyramid's leaf level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactNode {
    pub id: NodeId,
    pub clip_id: NodeId,
    pub span: TimeSpan,
    pub text: String,
    #[serde(default)]
    pub scene: String,
    #[serde(default)]
    pub asr: String,
    #[serde(default)]
    pub asr_periods: Vec<TimeSpan>,
    #[serde(default)]
    pub name_mentions: Vec<String>,
    #[serde(default)]
    pub keyframes: Vec<KeyframeRef>,
    #[serde(default)]
    pub links: Vec<Link>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub character_text: Option<String>,
}

impl FactNode {
    /// A fact with only the required fields set.
    pub fn new(id: NodeId, clip_id: NodeId, span: TimeSpan, text: impl Into<String>) -> Self {
        Self {
            id,
            clip_id,
            span,
            text: text.into(),
            scene: String::new(),
            asr: String::new(),
            asr_periods: Vec::new(),
            name_mentions: Vec::new(),
            keyframes: Vec::new(),
            links: Vec::new(),
            character_text: None,
        }
    }

    pub fn links_of(&self, kind: LinkKind) -> impl Iterator<Item = &Link> {
        self.links.iter().filter(move |l| l.kind == kind)
    }
}

/// Summary node for one fixed-length segment of the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipNode {
    pub id: NodeId,
    pub span: TimeSpan,
    pub summary: String,
    #[serde(default)]
    pub scene: String,
    pub fact_ids: Vec<NodeId>,
    #[serde(default)]
    pub cross_clip_links: Vec<Link>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub character_summary: Option<String>,
    /// Hierarchical links: `hier-up` to the global node, `hier-down` to each fact.
    #[serde(default)]
    pub links: Vec<Link>,
}

impl ClipNode {
    pub fn new(id: NodeId, span: TimeSpan, summary: impl Into<String>) -> Self {
        Self {
            id,
            span,
            summary: summary.into(),
            scene: String::new(),
            fact_ids: Vec::new(),
            cross_clip_links: Vec::new(),
            character_summary: None,
            links: Vec::new(),
        }
    }
}

/// The single evolving summary of the whole stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalNode {
    pub id: NodeId,
    pub summary: String,
    pub version: u64,
    pub clips_integrated: u64,
    /// `hier-down` links to every clip.
    #[serde(default)]
    pub links: Vec<Link>,
}

impl Default for GlobalNode {
    fn default() -> Self {
        Self {
            id: NodeId::global(),
            summary: String::new(),
            version: 0,
            clips_integrated: 0,
            links: Vec::new(),
        }
    }
}

/// Outcome of one sufficiency assessment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "text", rename_all = "lowercase")]
pub enum Verdict {
    Answer(String),
    Expand,
}

impl Verdict {
    pub fn is_answer(&self) -> bool {
        matches!(self, Verdict::Answer(_))
    }
}
