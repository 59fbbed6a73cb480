//! Exact cosine-similarity index over node embeddings.
//!
//! The index is an exhaustive scan: every query scores every stored vector.
//! Results are totally ordered by descending score, then ascending
//! [`NodeId`], so retrieval traces are reproducible.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::types::{Level, NodeId};

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("dimension mismatch: index expects {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("vector contains a non-finite component")]
    NonFinite,
    #[error("embedding dimension must be positive")]
    EmptyDimension,
}

/// A non-zero, finite vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self, IndexError> {
        if values.is_empty() {
            return Err(IndexError::EmptyDimension);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IndexError::NonFinite);
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(IndexError::ZeroVector);
        }
        Ok(Self(values))
    }

    /// Builds a unit-norm embedding from `f64` components.
    pub fn normalized(values: &[f64]) -> Result<Self, IndexError> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(IndexError::ZeroVector);
        }
        Self::new(values.iter().map(|v| (v / norm) as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        cosine(&self.0, &other.0)
    }
}

impl TryFrom<Vec<f32>> for Embedding {
    type Error = IndexError;

    fn try_from(v: Vec<f32>) -> Result<Self, Self::Error> {
        Embedding::new(v)
    }
}

impl From<Embedding> for Vec<f32> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt()
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

/// Cosine similarity accumulated in `f64`.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    dot(a, b) / (l2_norm(a) * l2_norm(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub id: NodeId,
    pub score: f64,
}

/// Total order used for ranking: score descending, then id ascending.
pub fn rank_order(a: &ScoredHit, b: &ScoredHit) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.id.cmp(&b.id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: NodeId,
    pub level: Level,
    pub vector: Embedding,
    #[serde(skip)]
    norm: f64,
}

#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
    positions: HashMap<NodeId, usize>,
    execution: Execution,
}

impl EmbeddingIndex {
    pub fn new(dim: usize) -> Result<Self, IndexError> {
        if dim == 0 {
            return Err(IndexError::EmptyDimension);
        }
        Ok(Self {
            dim,
            entries: Vec::new(),
            positions: HashMap::new(),
            execution: Execution::default(),
        })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn set_execution(&mut self, execution: Execution) {
        self.execution = execution;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, id: &NodeId) -> Option<&IndexEntry> {
        self.positions.get(id).map(|&i| &self.entries[i])
    }

    pub fn check_dim(&self, emb: &Embedding) -> Result<(), IndexError> {
        if emb.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                actual: emb.dim(),
            });
        }
        Ok(())
    }

    /// Inserts or replaces the vector for `id` (last write wins).
    pub fn upsert(&mut self, id: NodeId, level: Level, emb: Embedding) -> Result<(), IndexError> {
        self.check_dim(&emb)?;
        let norm = emb.norm();
        let entry = IndexEntry {
            id: id.clone(),
            level,
            vector: emb,
            norm,
        };
        match self.positions.get(&id) {
            Some(&i) => self.entries[i] = entry,
            None => {
                self.positions.insert(id, self.entries.len());
                self.entries.push(entry);
            }
        }
        Ok(())
    }

    /// The `k` best hits over all entries.
    pub fn top_k(&self, query: &Embedding, k: usize) -> Result<Vec<ScoredHit>, IndexError> {
        self.top_k_filtered(query, k, |_| true)
    }

    /// The `k` best hits restricted to one pyramid level.
    pub fn top_k_level(
        &self,
        query: &Embedding,
        k: usize,
        level: Level,
    ) -> Result<Vec<ScoredHit>, IndexError> {
        self.top_k_filtered(query, k, |e| e.level == level)
    }

    /// The `k` best hits among entries accepted by `filter`.
    pub fn top_k_filtered<F>(
        &self,
        query: &Embedding,
        k: usize,
        filter: F,
    ) -> Result<Vec<ScoredHit>, IndexError>
    where
        F: Fn(&IndexEntry) -> bool + Sync + Send,
    {
        self.check_dim(query)?;
        if k == 0 || self.entries.is_empty() {
            return Ok(Vec::new());
        }
        let q = query.as_slice();
        let q_norm = query.norm();
        let scored = exec::map_slice(self.execution, &self.entries, |e| {
            filter(e).then(|| dot(q, e.vector.as_slice()) / (q_norm * e.norm))
        });
        // rank positions first; ids are cloned only for the survivors
        let order = |a: &(usize, f64), b: &(usize, f64)| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.entries[a.0].id.cmp(&self.entries[b.0].id))
        };
        let mut ranked: Vec<(usize, f64)> = scored
            .into_iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|s| (i, s)))
            .collect();
        if ranked.len() > k {
            ranked.select_nth_unstable_by(k - 1, order);
            ranked.truncate(k);
        }
        ranked.sort_by(order);
        let hits: Vec<ScoredHit> = ranked
            .into_iter()
            .map(|(i, score)| ScoredHit {
                id: self.entries[i].id.clone(),
                score,
            })
            .collect();
        Ok(hits)
    }
}
