#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use pyramem_core::adapters::scripted::HashEmbedder;
use pyramem_core::types::{ClipNode, FactNode, Link, LinkKind, NodeId, TimeSpan};
use pyramem_core::{PyramidStore, Snapshot};
use rand::seq::IndexedRandom;
use rand::Rng;

pub const WORDS: [&str; 24] = [
    "kettle", "stove", "door", "cat", "window", "phone", "keys", "coffee", "rain", "bicycle", "garden", "letter",
    "lamp", "piano", "bread", "train", "mirror", "clock", "scarf", "candle", "ladder", "bucket", "radio", "map",
];

pub fn sentence<R: Rng>(rng: &mut R, words: usize) -> String {
    (0..words).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// `clips` clips of 1..=max_facts facts with random text, no relational links.
pub fn random_store<R: Rng>(rng: &mut R, clips: usize, max_facts: usize, dim: usize) -> PyramidStore {
    let emb = HashEmbedder::new(dim, 11);
    let mut store = PyramidStore::new(dim).unwrap();
    for c in 0..clips {
        let n = rng.random_range(1..=max_facts);
        let (cid, fids) = store.peek_ids(n);
        let start = c as f64 * 30.0;
        let clip = ClipNode::new(cid.clone(), TimeSpan::new(start, start + 30.0), sentence(rng, 4));
        let facts = fids
            .into_iter()
            .enumerate()
            .map(|(i, id)| {
                let text = sentence(rng, 3);
                FactNode::new(id, cid.clone(), TimeSpan::point(start + i as f64), text)
            })
            .collect();
        store.add_clip(clip, facts, &emb).unwrap();
    }
    store
}

/// Random relational links between facts and cross-clip links between clips,
/// cycles included.
pub fn add_random_links<R: Rng>(store: &mut PyramidStore, rng: &mut R, relational: usize, cross: usize) {
    let facts: Vec<NodeId> = store.facts().map(|f| f.id.clone()).collect();
    let clips: Vec<NodeId> = store.clips().map(|c| c.id.clone()).collect();
    for _ in 0..relational {
        let (a, b) = (facts.choose(rng).unwrap().clone(), facts.choose(rng).unwrap().clone());
        if a != b {
            let w = rng.random_range(0.0..=1.0);
            store.attach_links(&a, vec![Link::new(b, "r", w, LinkKind::Relational)]).unwrap();
        }
    }
    if clips.len() < 2 {
        return;
    }
    for _ in 0..cross {
        let (a, b) = (clips.choose(rng).unwrap().clone(), clips.choose(rng).unwrap().clone());
        if a != b {
            store.attach_links(&a, vec![Link::new(b, "x", 0.5, LinkKind::CrossClip)]).unwrap();
        }
    }
}

/// Expansion adjacency rebuilt from the serialized graph alone.
pub struct Adjacency {
    pub edges: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl Adjacency {
    pub fn from_snapshot(s: &Snapshot, hierarchy: bool, relational: bool, undirected: bool) -> Self {
        let mut edges: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
        let mut add = |a: &NodeId, b: &NodeId| {
            edges.entry(a.clone()).or_default().insert(b.clone());
        };
        for f in &s.facts {
            if hierarchy {
                add(&f.id, &f.clip_id);
            }
            for l in f.links.iter().filter(|l| l.kind == LinkKind::Relational) {
                if relational {
                    add(&f.id, &l.target);
                    if undirected {
                        add(&l.target, &f.id);
                    }
                }
            }
        }
        for c in &s.clips {
            if hierarchy {
                for f in &c.fact_ids {
                    add(&c.id, f);
                }
            }
            for l in &c.cross_clip_links {
                if relational {
                    add(&c.id, &l.target);
                    if undirected {
                        add(&l.target, &c.id);
                    }
                }
            }
        }
        Self { edges }
    }

    pub fn of(&self, id: &NodeId) -> BTreeSet<NodeId> {
        self.edges.get(id).cloned().unwrap_or_default()
    }

    /// BFS layers: `layers[0]` is the seed set, `layers[r]` the nodes first
    /// reached in step `r`.
    pub fn layers(&self, seeds: &[NodeId], steps: usize) -> Vec<BTreeSet<NodeId>> {
        let mut seen: HashSet<NodeId> = seeds.iter().cloned().collect();
        let mut layers = vec![seeds.iter().cloned().collect::<BTreeSet<_>>()];
        for _ in 0..steps {
            let mut next = BTreeSet::new();
            for id in layers.last().unwrap() {
                for n in self.of(id) {
                    if !seen.contains(&n) {
                        next.insert(n);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            seen.extend(next.iter().cloned());
            layers.push(next);
        }
        layers
    }
}

/// Exhaustive cosine ranking computed independently of the index.
pub fn oracle_top_k(entries: &[(NodeId, Vec<f32>)], query: &[f32], k: usize) -> Vec<(NodeId, f64)> {
    let norm = |v: &[f32]| v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    let qn = norm(query);
    let mut scored: Vec<(NodeId, f64)> = entries
        .iter()
        .map(|(id, v)| {
            let d: f64 = v.iter().zip(query).map(|(a, b)| *a as f64 * *b as f64).sum();
            (id.clone(), d / (norm(v) * qn))
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}
