//! The three-level memory graph.
//!
//! [`PyramidStore`] owns facts, clips, the single global node, the identity
//! bank and the embedding index. Mutations are validated before anything is
//! changed, so a rejected call leaves the store exactly as it was.

pub mod log;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::log::{read_log, EventLog, LogEvent};
use crate::adapters::{AdapterError, Embedder, GlobalUpdater};
use crate::identity::{IdentityBank, PersonEntity};
use crate::index::{EmbeddingIndex, IndexError};
use crate::snapshot::{validate_graph, Snapshot, SnapshotError, StoredEmbedding, Violation};
use crate::types::{ClipNode, FactNode, GlobalNode, Level, Link, LinkKind, NodeId};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("span violation in {fact}: {message}")]
    SpanViolation { fact: NodeId, message: String },
    #[error("invalid node {id}: {message}")]
    InvalidNode { id: NodeId, message: String },
    #[error("node {0} not found")]
    NotFound(NodeId),
    #[error("embedding {id} failed: {source}")]
    Embedding { id: NodeId, source: AdapterError },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("global update failed{}: {source}", if .source.is_retryable() { " (retryable)" } else { "" })]
    GlobalUpdate { source: AdapterError },
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("snapshot violates {} invariant(s), first: {}", .0.len(), .0[0])]
    Invalid(Vec<Violation>),
    #[error("append log line {line}: {message}")]
    Log { line: usize, message: String },
}

impl StoreError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Counts per level and per link kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub facts: usize,
    pub clips: usize,
    pub globals: usize,
    pub persons: usize,
    pub global_version: u64,
    pub clips_integrated: u64,
    pub links: BTreeMap<String, usize>,
    /// Number of facts per relational out-degree.
    pub relational_degree: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone)]
pub struct PyramidStore {
    global: GlobalNode,
    clips: IndexMap<NodeId, ClipNode>,
    facts: IndexMap<NodeId, FactNode>,
    persons: IdentityBank,
    index: EmbeddingIndex,
    /// Sources of relational and cross-clip links, by target.
    incoming: HashMap<NodeId, Vec<NodeId>>,
    next_fact: u64,
    next_clip: u64,
    seq: u64,
    journal: Option<Vec<LogEvent>>,
}

impl PartialEq for PyramidStore {
    fn eq(&self, other: &Self) -> bool {
        self.global == other.global
            && self.clips == other.clips
            && self.facts == other.facts
            && self.persons == other.persons
            && self.index.dim() == other.index.dim()
            && self.index.entries() == other.index.entries()
    }
}

impl PyramidStore {
    pub fn new(embedding_dim: usize) -> Result<Self, StoreError> {
        Ok(Self {
            global: GlobalNode::default(),
            clips: IndexMap::new(),
            facts: IndexMap::new(),
            persons: IdentityBank::new(),
            index: EmbeddingIndex::new(embedding_dim)?,
            incoming: HashMap::new(),
            next_fact: 1,
            next_clip: 1,
            seq: 0,
            journal: None,
        })
    }

    /// Starts collecting mutation events; fetch them with [`Self::drain_events`].
    pub fn enable_journal(&mut self) {
        self.journal.get_or_insert_with(Vec::new);
    }

    pub fn drain_events(&mut self) -> Vec<LogEvent> {
        self.journal.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Sequence number of the newest mutation.
    pub fn seq(&self) -> u64 {
        self.seq
    }

    fn record(&mut self, make: impl FnOnce(u64) -> LogEvent) {
        self.seq += 1;
        if let Some(j) = &mut self.journal {
            j.push(make(self.seq));
        }
    }

    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    pub fn global(&self) -> &GlobalNode {
        &self.global
    }

    pub fn clips(&self) -> impl DoubleEndedIterator<Item = &ClipNode> + ExactSizeIterator {
        self.clips.values()
    }

    pub fn facts(&self) -> impl DoubleEndedIterator<Item = &FactNode> + ExactSizeIterator {
        self.facts.values()
    }

    pub fn clip(&self, id: &NodeId) -> Option<&ClipNode> {
        self.clips.get(id)
    }

    pub fn fact(&self, id: &NodeId) -> Option<&FactNode> {
        self.facts.get(id)
    }

    /// Insertion position of a fact, i.e. its age rank.
    pub fn fact_position(&self, id: &NodeId) -> Option<usize> {
        self.facts.get_index_of(id)
    }

    pub fn clip_position(&self, id: &NodeId) -> Option<usize> {
        self.clips.get_index_of(id)
    }

    pub fn persons(&self) -> &IdentityBank {
        &self.persons
    }

    pub fn index(&self) -> &EmbeddingIndex {
        &self.index
    }

    pub fn index_mut(&mut self) -> &mut EmbeddingIndex {
        &mut self.index
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn level_of(&self, id: &NodeId) -> Option<Level> {
        if self.facts.contains_key(id) {
            Some(Level::Fact)
        } else if self.clips.contains_key(id) {
            Some(Level::Clip)
        } else if *id == self.global.id {
            Some(Level::Global)
        } else {
            None
        }
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.level_of(id).is_some()
    }

    /// Ids the next [`Self::add_clip`] would use for a clip with `n_facts` facts.
    pub fn peek_ids(&self, n_facts: usize) -> (NodeId, Vec<NodeId>) {
        let facts = (0..n_facts as u64).map(|i| NodeId::fact(self.next_fact + i)).collect();
        (NodeId::clip(self.next_clip), facts)
    }

    /// Inserts a finalized clip and its facts, materializes the hierarchical
    /// links and indexes every text. All-or-nothing.
    pub fn add_clip(
        &mut self,
        clip: ClipNode,
        facts: Vec<FactNode>,
        embedder: &dyn Embedder,
    ) -> Result<(), StoreError> {
        self.check_new_clip(&clip, &facts)?;
        if embedder.dim() != self.dim() {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim(),
                actual: embedder.dim(),
            }
            .into());
        }
        let mut embeddings = Vec::with_capacity(facts.len() + 1);
        for f in &facts {
            let vector = embedder.embed(&f.text).map_err(|source| StoreError::Embedding {
                id: f.id.clone(),
                source,
            })?;
            embeddings.push(StoredEmbedding {
                id: f.id.clone(),
                level: Level::Fact,
                vector,
            });
        }
        let vector = embedder.embed(&clip.summary).map_err(|source| StoreError::Embedding {
            id: clip.id.clone(),
            source,
        })?;
        embeddings.push(StoredEmbedding {
            id: clip.id.clone(),
            level: Level::Clip,
            vector,
        });
        self.insert_clip(clip, facts, embeddings)
    }

    fn check_new_clip(&self, clip: &ClipNode, facts: &[FactNode]) -> Result<(), StoreError> {
        let invalid = |id: &NodeId, message: &str| StoreError::InvalidNode {
            id: id.clone(),
            message: message.to_string(),
        };
        if self.contains(&clip.id) {
            return Err(StoreError::DuplicateId(clip.id.clone()));
        }
        if !clip.span.is_valid() {
            return Err(StoreError::SpanViolation {
                fact: clip.id.clone(),
                message: format!("invalid clip span [{}, {}]", clip.span.start, clip.span.end),
            });
        }
        if facts.is_empty() {
            return Err(invalid(&clip.id, "a clip needs at least one fact"));
        }
        if !clip.links.is_empty() || !clip.cross_clip_links.is_empty() {
            return Err(invalid(&clip.id, "links are created by the store, not supplied"));
        }
        if !clip.fact_ids.is_empty() && !clip.fact_ids.iter().eq(facts.iter().map(|f| &f.id)) {
            return Err(invalid(&clip.id, "fact_ids disagree with the supplied facts"));
        }
        let mut batch = HashSet::new();
        for f in facts {
            if f.id == clip.id || self.contains(&f.id) || !batch.insert(&f.id) {
                return Err(StoreError::DuplicateId(f.id.clone()));
            }
            if f.clip_id != clip.id {
                return Err(invalid(&f.id, &format!("clip_id {} is not {}", f.clip_id, clip.id)));
            }
            if f.text.trim().is_empty() {
                return Err(invalid(&f.id, "text is empty"));
            }
            if !f.links.is_empty() {
                return Err(invalid(&f.id, "links are attached after insertion"));
            }
            let span_err = |message: String| StoreError::SpanViolation {
                fact: f.id.clone(),
                message,
            };
            if !f.span.is_valid() {
                return Err(span_err(format!("invalid span [{}, {}]", f.span.start, f.span.end)));
            }
            if !clip.span.contains(&f.span) {
                return Err(span_err(format!(
                    "span [{}, {}] exceeds clip span [{}, {}]",
                    f.span.start, f.span.end, clip.span.start, clip.span.end
                )));
            }
            if f.asr_periods.iter().any(|p| !f.span.contains(p)) {
                return Err(span_err("asr period outside fact span".into()));
            }
            if f.keyframes.iter().any(|k| !f.span.contains_time(k.timestamp)) {
                return Err(span_err("keyframe outside fact span".into()));
            }
        }
        Ok(())
    }

    fn insert_clip(
        &mut self,
        mut clip: ClipNode,
        mut facts: Vec<FactNode>,
        embeddings: Vec<StoredEmbedding>,
    ) -> Result<(), StoreError> {
        for e in &embeddings {
            self.index.check_dim(&e.vector)?;
        }
        let input = (clip.clone(), facts.clone());
        clip.fact_ids = facts.iter().map(|f| f.id.clone()).collect();
        clip.links.push(Link::hierarchical(self.global.id.clone(), LinkKind::HierUp));
        for f in &mut facts {
            f.links.push(Link::hierarchical(clip.id.clone(), LinkKind::HierUp));
            clip.links.push(Link::hierarchical(f.id.clone(), LinkKind::HierDown));
        }
        self.global.links.push(Link::hierarchical(clip.id.clone(), LinkKind::HierDown));
        for e in &embeddings {
            self.index.upsert(e.id.clone(), e.level, e.vector.clone())?;
        }
        for f in facts {
            if let Some(n) = f.id.counter() {
                self.next_fact = self.next_fact.max(n + 1);
            }
            self.facts.insert(f.id.clone(), f);
        }
        if let Some(n) = clip.id.counter() {
            self.next_clip = self.next_clip.max(n + 1);
        }
        self.clips.insert(clip.id.clone(), clip);
        self.record(|seq| LogEvent::AddClip {
            seq,
            clip: input.0,
            facts: input.1,
            embeddings,
        });
        Ok(())
    }

    /// Folds one clip summary into the global node. On adapter failure the
    /// global node is unchanged.
    pub fn update_global(
        &mut self,
        clip_summary: &str,
        updater: &dyn GlobalUpdater,
    ) -> Result<&GlobalNode, StoreError> {
        let summary = updater
            .update(&self.global.summary, clip_summary)
            .map_err(|source| StoreError::GlobalUpdate { source })?;
        self.apply_global(summary);
        Ok(&self.global)
    }

    fn apply_global(&mut self, summary: String) {
        self.global.summary = summary.clone();
        self.global.version += 1;
        self.global.clips_integrated += 1;
        self.record(|seq| LogEvent::UpdateGlobal { seq, summary });
    }

    /// Integrates every clip not yet folded into the global summary, oldest
    /// first. Stops at the first failure; the rest stay pending.
    pub fn integrate_pending(&mut self, updater: &dyn GlobalUpdater) -> Result<u64, StoreError> {
        let mut done = 0;
        while (self.global.clips_integrated as usize) < self.clips.len() {
            let summary = self.clips[self.global.clips_integrated as usize].summary.clone();
            self.update_global(&summary, updater)?;
            done += 1;
        }
        Ok(done)
    }

    pub fn pending_clips(&self) -> usize {
        self.clips.len().saturating_sub(self.global.clips_integrated as usize)
    }

    fn outgoing(&self, id: &NodeId) -> Result<Box<dyn Iterator<Item = &Link> + '_>, StoreError> {
        if let Some(f) = self.facts.get(id) {
            Ok(Box::new(f.links.iter()))
        } else if let Some(c) = self.clips.get(id) {
            Ok(Box::new(c.links.iter().chain(&c.cross_clip_links)))
        } else if *id == self.global.id {
            Ok(Box::new(self.global.links.iter()))
        } else {
            Err(StoreError::NotFound(id.clone()))
        }
    }

    /// Outgoing links of the requested kinds, in insertion order.
    pub fn neighbors(&self, id: &NodeId, kinds: &[LinkKind]) -> Result<Vec<&Link>, StoreError> {
        Ok(self.outgoing(id)?.filter(|l| kinds.contains(&l.kind)).collect())
    }

    /// Sources of relational (for facts) or cross-clip (for clips) links
    /// pointing at `id`, ordered by source age.
    pub fn incoming(&self, id: &NodeId) -> &[NodeId] {
        self.incoming.get(id).map(Vec::as_slice).unwrap_or_default()
    }

    fn age(&self, id: &NodeId) -> usize {
        self.facts
            .get_index_of(id)
            .or_else(|| self.clips.get_index_of(id))
            .unwrap_or(usize::MAX)
    }

    /// Adds relational links to a fact or cross-clip links to a clip.
    /// Links to a target already linked from `source` are skipped; returns the
    /// number actually attached.
    pub fn attach_links(&mut self, source: &NodeId, links: Vec<Link>) -> Result<usize, StoreError> {
        let source_level = self.level_of(source).ok_or_else(|| StoreError::NotFound(source.clone()))?;
        let expected = match source_level {
            Level::Fact => (LinkKind::Relational, Level::Fact),
            Level::Clip => (LinkKind::CrossClip, Level::Clip),
            Level::Global => {
                return Err(StoreError::InvalidNode {
                    id: source.clone(),
                    message: "the global node only has hierarchical links".into(),
                })
            }
        };
        for l in &links {
            if self.level_of(&l.target).is_none() {
                return Err(StoreError::NotFound(l.target.clone()));
            }
            let invalid = |message: String| StoreError::InvalidNode {
                id: source.clone(),
                message,
            };
            if l.kind != expected.0 || self.level_of(&l.target) != Some(expected.1) {
                return Err(invalid(format!("{} link to {} not allowed here", l.kind, l.target)));
            }
            if l.target == *source {
                return Err(invalid("self link".into()));
            }
            if !(0.0..=1.0).contains(&l.weight) {
                return Err(invalid(format!("weight {} outside [0, 1]", l.weight)));
            }
        }
        let existing: HashSet<NodeId> = self.outgoing(source)?.filter(|l| l.kind == expected.0).map(|l| l.target.clone()).collect();
        let mut added = Vec::new();
        let mut seen = existing;
        for l in links {
            if seen.insert(l.target.clone()) {
                added.push(l);
            }
        }
        if added.is_empty() {
            return Ok(0);
        }
        for l in &added {
            let mut sources = self.incoming.remove(&l.target).unwrap_or_default();
            sources.push(source.clone());
            sources.sort_by_key(|s| self.age(s));
            self.incoming.insert(l.target.clone(), sources);
        }
        let n = added.len();
        match source_level {
            Level::Fact => self.facts[source].links.extend(added.iter().cloned()),
            _ => self.clips[source].cross_clip_links.extend(added.iter().cloned()),
        }
        self.record(|seq| LogEvent::AttachLinks {
            seq,
            source: source.clone(),
            links: added,
        });
        Ok(n)
    }

    /// Inserts or replaces a person record.
    pub fn upsert_person(&mut self, person: PersonEntity) -> Result<(), StoreError> {
        if let Some(dim) = self.persons.dim() {
            if person.face_centroid.dim() != dim && self.persons.get(&person.person_id).is_none() {
                return Err(IndexError::DimensionMismatch {
                    expected: dim,
                    actual: person.face_centroid.dim(),
                }
                .into());
            }
        }
        if let Some(n) = person.evidence.iter().find(|n| !self.contains(n)) {
            return Err(StoreError::NotFound(n.clone()));
        }
        self.persons.upsert(person.clone());
        self.record(|seq| LogEvent::UpsertPerson { seq, person });
        Ok(())
    }

    /// Commits an updated bank; `touched` persons are journaled.
    pub fn replace_persons(&mut self, bank: IdentityBank, touched: &[String]) -> Result<(), StoreError> {
        for pid in touched {
            let person = bank
                .get(pid)
                .ok_or_else(|| StoreError::NotFound(NodeId::new(pid.clone())))?
                .clone();
            self.upsert_person(person)?;
        }
        Ok(())
    }

    pub fn stats(&self) -> GraphStats {
        let mut links: BTreeMap<String, usize> =
            LinkKind::ALL.iter().map(|k| (k.as_str().to_string(), 0)).collect();
        let all = self
            .facts
            .values()
            .flat_map(|f| f.links.iter())
            .chain(self.clips.values().flat_map(|c| c.links.iter().chain(&c.cross_clip_links)))
            .chain(self.global.links.iter());
        for l in all {
            *links.entry(l.kind.as_str().to_string()).or_default() += 1;
        }
        let mut relational_degree = BTreeMap::new();
        for f in self.facts.values() {
            *relational_degree.entry(f.links_of(LinkKind::Relational).count()).or_default() += 1;
        }
        GraphStats {
            facts: self.facts.len(),
            clips: self.clips.len(),
            globals: 1,
            persons: self.persons.len(),
            global_version: self.global.version,
            clips_integrated: self.global.clips_integrated,
            links,
            relational_degree,
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            format: crate::snapshot::FORMAT_VERSION,
            global: self.global.clone(),
            clips: self.clips.values().cloned().collect(),
            facts: self.facts.values().cloned().collect(),
            persons: self.persons.persons().cloned().collect(),
            embedding_dim: self.dim(),
            embeddings: self
                .index
                .entries()
                .iter()
                .map(|e| StoredEmbedding {
                    id: e.id.clone(),
                    level: e.level,
                    vector: e.vector.clone(),
                })
                .collect(),
            log_seq: self.seq,
        }
    }

    /// Rebuilds a store from a snapshot, rejecting any invariant violation
    /// or missing embedding.
    pub fn from_snapshot(s: Snapshot) -> Result<Self, StoreError> {
        let violations = validate_graph(&s);
        if !violations.is_empty() {
            return Err(StoreError::Invalid(violations));
        }
        let mut index = EmbeddingIndex::new(s.embedding_dim)?;
        for e in s.embeddings {
            index.upsert(e.id, e.level, e.vector)?;
        }
        for id in s.facts.iter().map(|f| &f.id).chain(s.clips.iter().map(|c| &c.id)) {
            if index.get(id).is_none() {
                return Err(StoreError::InvalidNode {
                    id: id.clone(),
                    message: "no stored embedding".into(),
                });
            }
        }
        let mut store = Self {
            global: s.global,
            clips: s.clips.into_iter().map(|c| (c.id.clone(), c)).collect(),
            facts: s.facts.into_iter().map(|f| (f.id.clone(), f)).collect(),
            persons: IdentityBank::from_persons(s.persons),
            index,
            incoming: HashMap::new(),
            next_fact: 1,
            next_clip: 1,
            seq: s.log_seq,
            journal: None,
        };
        store.next_fact = store.facts.keys().filter_map(NodeId::counter).max().map_or(1, |n| n + 1);
        store.next_clip = store.clips.keys().filter_map(NodeId::counter).max().map_or(1, |n| n + 1);
        store.rebuild_incoming();
        Ok(store)
    }

    fn rebuild_incoming(&mut self) {
        let mut incoming: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        for f in self.facts.values() {
            for l in f.links_of(LinkKind::Relational) {
                incoming.entry(l.target.clone()).or_default().push(f.id.clone());
            }
        }
        for c in self.clips.values() {
            for l in &c.cross_clip_links {
                incoming.entry(l.target.clone()).or_default().push(c.id.clone());
            }
        }
        self.incoming = incoming;
    }

    /// Writes the snapshot atomically (temporary file, then rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = path.as_ref();
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, self.snapshot().to_json()).map_err(|e| StoreError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| StoreError::io(path, e))
    }

    /// Loads a snapshot written by [`Self::save`]. Fails without side effects
    /// on unreadable, truncated or inconsistent files.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
        Self::from_snapshot(Snapshot::from_json(&text)?)
    }

    /// Applies a logged mutation. Events at or below the current sequence
    /// number are skipped, so replaying a log over a newer snapshot is safe.
    pub fn apply(&mut self, event: LogEvent) -> Result<bool, StoreError> {
        if event.seq() <= self.seq {
            return Ok(false);
        }
        let target = event.seq();
        // journaled copies keep the original sequence number
        self.seq = target - 1;
        match event {
            LogEvent::AddClip {
                clip,
                facts,
                embeddings,
                ..
            } => {
                self.check_new_clip(&clip, &facts)?;
                self.insert_clip(clip, facts, embeddings)?;
            }
            LogEvent::UpdateGlobal { summary, .. } => self.apply_global(summary),
            LogEvent::AttachLinks { source, links, .. } => {
                self.attach_links(&source, links)?;
            }
            LogEvent::UpsertPerson { person, .. } => self.upsert_person(person)?,
        }
        // duplicate-link events attach nothing and record nothing
        self.seq = target;
        Ok(true)
    }

    /// Snapshot plus every later log event.
    pub fn recover(snapshot: Option<&Path>, log: &Path, dim: usize) -> Result<Self, StoreError> {
        let mut store = match snapshot {
            Some(p) if p.exists() => Self::load(p)?,
            _ => Self::new(dim)?,
        };
        for ev in read_log(log)? {
            store.apply(ev)?;
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::scripted::{ConcatUpdater, Failing, HashEmbedder};
    use crate::types::TimeSpan;

    fn clip_with(store: &PyramidStore, n: usize, start: f64) -> (ClipNode, Vec<FactNode>) {
        let (cid, fids) = store.peek_ids(n);
        let clip = ClipNode::new(cid.clone(), TimeSpan::new(start, start + 30.0), format!("clip at {start}"));
        let facts = fids
            .into_iter()
            .enumerate()
            .map(|(i, id)| FactNode::new(id, cid.clone(), TimeSpan::point(start + i as f64), format!("fact {i} at {start}")))
            .collect();
        (clip, facts)
    }

    #[test]
    fn first_clip_link_counts() {
        let emb = HashEmbedder::new(16, 0);
        let mut store = PyramidStore::new(16).unwrap();
        let (c, f) = clip_with(&store, 3, 0.0);
        store.add_clip(c, f, &emb).unwrap();
        let s = store.stats();
        assert_eq!((s.facts, s.clips), (3, 1));
        // 3 fact->clip up, 3 clip->fact down, 1 clip->global up, 1 global->clip down
        assert_eq!(s.links["hier-up"], 4);
        assert_eq!(s.links["hier-down"], 4);
        let up = store.neighbors(&NodeId::fact(1), &[LinkKind::HierUp]).unwrap();
        assert_eq!(up[0].target, NodeId::clip(1));
        assert!(store.neighbors(&NodeId::fact(1), &[LinkKind::Relational]).unwrap().is_empty());
        assert!(matches!(store.neighbors(&NodeId::fact(9), &[]), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn span_violation_names_fact_and_changes_nothing() {
        let emb = HashEmbedder::new(16, 0);
        let mut store = PyramidStore::new(16).unwrap();
        let (c, mut f) = clip_with(&store, 2, 0.0);
        f[1].span = TimeSpan::new(10.0, 31.0);
        let before = store.clone();
        match store.add_clip(c, f, &emb) {
            Err(StoreError::SpanViolation { fact, .. }) => assert_eq!(fact, NodeId::fact(2)),
            other => panic!("{other:?}"),
        }
        assert_eq!(store, before);
    }

    #[test]
    fn duplicate_clip_rejected() {
        let emb = HashEmbedder::new(16, 0);
        let mut store = PyramidStore::new(16).unwrap();
        let (c, f) = clip_with(&store, 1, 0.0);
        store.add_clip(c.clone(), f.clone(), &emb).unwrap();
        assert!(matches!(store.add_clip(c, f, &emb), Err(StoreError::DuplicateId(_))));
    }

    #[test]
    fn global_fold_and_failure() {
        let emb = HashEmbedder::new(16, 0);
        let mut store = PyramidStore::new(16).unwrap();
        let updater = ConcatUpdater::default();
        let g = store.update_global("s", &updater).unwrap();
        assert_eq!((g.summary.as_str(), g.version), ("s", 1));
        let before = store.global().clone();
        assert!(store.update_global("t", &Failing::new("down")).is_err());
        assert_eq!(store.global(), &before);

        let mut store = PyramidStore::new(16).unwrap();
        for i in 0..2 {
            let (c, f) = clip_with(&store, 1, 30.0 * i as f64);
            store.add_clip(c, f, &emb).unwrap();
        }
        assert!(store.integrate_pending(&Failing::new("down")).is_err());
        assert_eq!(store.pending_clips(), 2);
        assert_eq!(store.integrate_pending(&updater).unwrap(), 2);
        assert_eq!(store.global().summary, "clip at 0 | clip at 30");
    }

    #[test]
    fn attach_rules() {
        let emb = HashEmbedder::new(16, 0);
        let mut store = PyramidStore::new(16).unwrap();
        let (c, f) = clip_with(&store, 3, 0.0);
        store.add_clip(c, f, &emb).unwrap();
        let f1 = NodeId::fact(1);
        let f3 = NodeId::fact(3);
        let rel = |t: &NodeId| Link::new(t.clone(), "r", 0.5, LinkKind::Relational);
        assert_eq!(store.attach_links(&f3, vec![rel(&f1), rel(&f1)]).unwrap(), 1);
        assert_eq!(store.attach_links(&f3, vec![rel(&f1)]).unwrap(), 0);
        assert_eq!(store.incoming(&f1), std::slice::from_ref(&f3));
        assert!(store.attach_links(&f3, vec![rel(&f3)]).is_err());
        assert!(store.attach_links(&f3, vec![rel(&NodeId::clip(1))]).is_err());
        assert!(store.attach_links(&f3, vec![Link::new(f1, "r", 2.0, LinkKind::Relational)]).is_err());
    }

    #[test]
    fn journal_replay_matches() {
        let emb = HashEmbedder::new(16, 0);
        let mut store = PyramidStore::new(16).unwrap();
        store.enable_journal();
        let (c, f) = clip_with(&store, 2, 0.0);
        store.add_clip(c, f, &emb).unwrap();
        store.update_global("x", &ConcatUpdater::default()).unwrap();
        store
            .attach_links(&NodeId::fact(2), vec![Link::new(NodeId::fact(1), "r", 0.3, LinkKind::Relational)])
            .unwrap();
        let events = store.drain_events();
        assert_eq!(
            events.iter().map(LogEvent::name).collect::<Vec<_>>(),
            ["add_clip", "update_global", "attach_links"]
        );
        let mut replayed = PyramidStore::new(16).unwrap();
        for e in events.clone() {
            assert!(replayed.apply(e).unwrap());
        }
        assert_eq!(replayed, store);
        // replaying again is a no-op
        for e in events {
            assert!(!replayed.apply(e).unwrap());
        }
        assert_eq!(replayed, store);
    }
}
