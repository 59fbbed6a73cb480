//! Incremental person-identity tracking.
//!
//! Faces seen within one clip are first grouped locally ([`LocalClusterer`]),
//! then each local cluster is matched against the bank of known persons by
//! centroid cosine similarity. A match at or above the global threshold folds
//! the cluster into that person; anything else opens a new person.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{AdapterError, Profiler};
use crate::exec::{self, Execution};
use crate::index::{cosine, Embedding, IndexError};
use crate::types::NodeId;

pub const DEFAULT_LOCAL_THRESHOLD: f64 = 0.6;
pub const DEFAULT_GLOBAL_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum IdentityError {
    #[error("face dimension {actual} does not match bank dimension {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("unknown person {0}")]
    UnknownPerson(String),
    #[error("invalid embedding: {0}")]
    Embedding(#[from] IndexError),
    #[error("profiler failed: {0}")]
    Profiler(#[from] AdapterError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonEntity {
    pub person_id: String,
    pub face_centroid: Embedding,
    pub observation_count: u64,
    #[serde(default)]
    pub voice_refs: Vec<String>,
    #[serde(default)]
    pub profile: String,
    #[serde(default)]
    pub evidence: Vec<NodeId>,
}

impl PersonEntity {
    /// Tag used for this person inside character-level text, e.g. `<p-3>`.
    pub fn tag(&self) -> String {
        person_tag(&self.person_id)
    }
}

pub fn person_tag(person_id: &str) -> String {
    format!("<{person_id}>")
}

/// Faces grouped within a single clip.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCluster {
    /// Positions of the members in the input slice.
    pub members: Vec<usize>,
    pub member_embeddings: Vec<Embedding>,
    pub centroid: Embedding,
}

impl LocalCluster {
    pub fn from_members(faces: &[Embedding], members: Vec<usize>) -> Result<Self, IndexError> {
        let dim = faces[members[0]].dim();
        let mut sum = vec![0.0f64; dim];
        for &m in &members {
            for (acc, v) in sum.iter_mut().zip(faces[m].as_slice()) {
                *acc += f64::from(*v);
            }
        }
        let centroid = Embedding::normalized(&sum)?;
        let member_embeddings = members.iter().map(|&m| faces[m].clone()).collect();
        Ok(Self {
            members,
            member_embeddings,
            centroid,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Groups the faces of one clip.
pub trait LocalClusterer: Send + Sync {
    fn cluster(&self, faces: &[Embedding]) -> Result<Vec<LocalCluster>, IdentityError>;
}

/// Single-linkage agglomeration: any pair with cosine at or above the
/// threshold ends up in the same cluster, transitively.
///
/// Clusters are ordered by their smallest member index and members keep input
/// order, so the output is a pure function of the input sequence.
#[derive(Debug, Clone)]
pub struct SingleLinkage {
    pub threshold: f64,
    pub execution: Execution,
}

impl SingleLinkage {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            execution: Execution::default(),
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }
}

impl Default for SingleLinkage {
    fn default() -> Self {
        Self::new(DEFAULT_LOCAL_THRESHOLD)
    }
}

impl LocalClusterer for SingleLinkage {
    fn cluster(&self, faces: &[Embedding]) -> Result<Vec<LocalCluster>, IdentityError> {
        let Some(first) = faces.first() else {
            return Ok(Vec::new());
        };
        let dim = first.dim();
        if let Some(bad) = faces.iter().find(|f| f.dim() != dim) {
            return Err(IdentityError::DimensionMismatch {
                expected: dim,
                actual: bad.dim(),
            });
        }
        let n = faces.len();
        let threshold = self.threshold;
        // row i holds the partners j > i that are close enough
        let edges = exec::map_range(self.execution, n, |i| {
            ((i + 1)..n)
                .filter(|&j| cosine(faces[i].as_slice(), faces[j].as_slice()) >= threshold)
                .collect::<Vec<_>>()
        });
        let mut parent: Vec<usize> = (0..n).collect();
        for (i, row) in edges.iter().enumerate() {
            for &j in row {
                union(&mut parent, i, j);
            }
        }
        let mut groups: IndexMap<usize, Vec<usize>> = IndexMap::new();
        for i in 0..n {
            let root = find(&mut parent, i);
            groups.entry(root).or_default().push(i);
        }
        groups
            .into_values()
            .map(|members| LocalCluster::from_members(faces, members).map_err(Into::into))
            .collect()
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // keep the smaller index as root so group order follows first appearance
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// Where one local cluster ended up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub cluster: usize,
    pub person_id: String,
    pub created: bool,
    pub similarity: Option<f64>,
}

/// A character-level fact attributed to a person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterFact {
    pub node: NodeId,
    pub text: String,
}

/// All known persons, in creation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdentityBank {
    persons: IndexMap<String, PersonEntity>,
    next_id: u64,
}

impl IdentityBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_persons(persons: Vec<PersonEntity>) -> Self {
        let next_id = persons
            .iter()
            .filter_map(|p| p.person_id.strip_prefix("p-")?.parse::<u64>().ok())
            .max()
            .unwrap_or(0);
        Self {
            persons: persons.into_iter().map(|p| (p.person_id.clone(), p)).collect(),
            next_id,
        }
    }

    pub fn len(&self) -> usize {
        self.persons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.persons.is_empty()
    }

    pub fn get(&self, person_id: &str) -> Option<&PersonEntity> {
        self.persons.get(person_id)
    }

    pub fn persons(&self) -> impl Iterator<Item = &PersonEntity> {
        self.persons.values()
    }

    pub fn dim(&self) -> Option<usize> {
        self.persons.values().next().map(|p| p.face_centroid.dim())
    }

    pub fn total_observations(&self) -> u64 {
        self.persons.values().map(|p| p.observation_count).sum()
    }

    /// Folds local clusters into the bank, in input order.
    pub fn merge_global(
        &mut self,
        locals: &[LocalCluster],
        threshold: f64,
    ) -> Result<Vec<Assignment>, IdentityError> {
        if let (Some(expected), Some(bad)) = (
            self.dim(),
            locals.iter().find(|l| Some(l.centroid.dim()) != self.dim()),
        ) {
            return Err(IdentityError::DimensionMismatch {
                expected,
                actual: bad.centroid.dim(),
            });
        }
        let mut out = Vec::with_capacity(locals.len());
        for (cluster, local) in locals.iter().enumerate() {
            // first maximum wins, i.e. the oldest person on exact ties
            let mut best: Option<(String, f64)> = None;
            for p in self.persons.values() {
                let sim = p.face_centroid.cosine(&local.centroid);
                if best.as_ref().is_none_or(|(_, b)| sim > *b) {
                    best = Some((p.person_id.clone(), sim));
                }
            }
            match best {
                Some((id, sim)) if sim >= threshold => {
                    let person = self.persons.get_mut(&id).expect("person just found");
                    absorb(person, local)?;
                    out.push(Assignment {
                        cluster,
                        person_id: id,
                        created: false,
                        similarity: Some(sim),
                    });
                }
                best => {
                    self.next_id += 1;
                    let person_id = format!("p-{}", self.next_id);
                    self.persons.insert(
                        person_id.clone(),
                        PersonEntity {
                            person_id: person_id.clone(),
                            face_centroid: local.centroid.clone(),
                            observation_count: local.len() as u64,
                            voice_refs: Vec::new(),
                            profile: String::new(),
                            evidence: Vec::new(),
                        },
                    );
                    out.push(Assignment {
                        cluster,
                        person_id,
                        created: true,
                        similarity: best.map(|(_, s)| s),
                    });
                }
            }
        }
        Ok(out)
    }

    /// Merges new character-level facts into a person's profile.
    ///
    /// On profiler failure the person is left untouched.
    pub fn update_profile(
        &mut self,
        person_id: &str,
        facts: &[CharacterFact],
        profiler: &dyn Profiler,
    ) -> Result<&PersonEntity, IdentityError> {
        let person = self
            .persons
            .get_mut(person_id)
            .ok_or_else(|| IdentityError::UnknownPerson(person_id.to_string()))?;
        let texts: Vec<String> = facts.iter().map(|f| f.text.clone()).collect();
        let profile = profiler.update_profile(person_id, &person.profile, &texts)?;
        person.profile = profile;
        for f in facts {
            if !person.evidence.contains(&f.node) {
                person.evidence.push(f.node.clone());
            }
        }
        Ok(person)
    }

    pub fn add_voice_ref(&mut self, person_id: &str, voice: &str) -> Result<(), IdentityError> {
        let person = self
            .persons
            .get_mut(person_id)
            .ok_or_else(|| IdentityError::UnknownPerson(person_id.to_string()))?;
        if !person.voice_refs.iter().any(|v| v == voice) {
            person.voice_refs.push(voice.to_string());
        }
        Ok(())
    }

    pub(crate) fn upsert(&mut self, person: PersonEntity) {
        if let Some(n) = person
            .person_id
            .strip_prefix("p-")
            .and_then(|n| n.parse::<u64>().ok())
        {
            self.next_id = self.next_id.max(n);
        }
        self.persons.insert(person.person_id.clone(), person);
    }
}

/// Centroid becomes the count-weighted mean of the old centroid and the
/// cluster centroid, renormalized.
fn absorb(person: &mut PersonEntity, local: &LocalCluster) -> Result<(), IndexError> {
    let old_w = person.observation_count as f64;
    let new_w = local.len() as f64;
    let merged: Vec<f64> = person
        .face_centroid
        .as_slice()
        .iter()
        .zip(local.centroid.as_slice())
        .map(|(a, b)| old_w * f64::from(*a) + new_w * f64::from(*b))
        .collect();
    person.face_centroid = Embedding::normalized(&merged)?;
    person.observation_count += local.len() as u64;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::scripted::AppendingProfiler;

    fn e(v: &[f64]) -> Embedding {
        Embedding::normalized(v).unwrap()
    }

    #[test]
    fn empty_input() {
        assert!(SingleLinkage::default().cluster(&[]).unwrap().is_empty());
    }

    #[test]
    fn identical_vectors_share_a_cluster() {
        let faces = vec![e(&[1.0, 0.0, 0.0]), e(&[1.0, 0.0, 0.0])];
        let clusters = SingleLinkage::new(0.6).cluster(&faces).unwrap();
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].members, vec![0, 1]);
    }

    #[test]
    fn single_linkage_is_transitive() {
        // a~b and b~c above threshold, a~c below it: still one cluster
        let a = e(&[1.0, 0.0]);
        let b = e(&[1.0, 1.0]);
        let c = e(&[0.0, 1.0]);
        assert!(a.cosine(&c) < 0.7);
        let clusters = SingleLinkage::new(0.7).cluster(&[a, c, b]).unwrap();
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].members, vec![0, 1, 2]);
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let faces = vec![e(&[1.0, 0.0]), e(&[1.0, 0.0, 0.0])];
        assert!(matches!(
            SingleLinkage::default().cluster(&faces),
            Err(IdentityError::DimensionMismatch { expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn first_cluster_creates_person() {
        let mut bank = IdentityBank::new();
        let local = LocalCluster::from_members(&[e(&[1.0, 0.0])], vec![0]).unwrap();
        let out = bank.merge_global(&[local], 0.5).unwrap();
        assert_eq!(out[0].person_id, "p-1");
        assert!(out[0].created);
        assert_eq!(bank.len(), 1);
    }

    #[test]
    fn identical_centroid_merges() {
        let mut bank = IdentityBank::new();
        let faces = [e(&[1.0, 0.0]), e(&[1.0, 0.0])];
        let l1 = LocalCluster::from_members(&faces, vec![0]).unwrap();
        let l2 = LocalCluster::from_members(&faces, vec![0, 1]).unwrap();
        bank.merge_global(&[l1], 0.5).unwrap();
        let out = bank.merge_global(&[l2], 0.5).unwrap();
        assert_eq!(out[0].person_id, "p-1");
        assert!(!out[0].created);
        assert_eq!(bank.get("p-1").unwrap().observation_count, 3);
    }

    #[test]
    fn weighted_centroid_update() {
        let mut bank = IdentityBank::new();
        let faces = [e(&[1.0, 0.0]), e(&[0.0, 1.0])];
        let heavy = LocalCluster::from_members(&vec![faces[0].clone(); 3], vec![0, 1, 2]).unwrap();
        bank.merge_global(&[heavy], 0.0).unwrap();
        let light = LocalCluster::from_members(&faces, vec![1]).unwrap();
        bank.merge_global(&[light], -1.0).unwrap();
        let p = bank.get("p-1").unwrap();
        // (3*(1,0) + 1*(0,1)) normalized
        let expect = e(&[3.0, 1.0]);
        assert!(p.face_centroid.cosine(&expect) > 1.0 - 1e-6);
        assert!((p.face_centroid.norm() - 1.0).abs() < 1e-6);
        assert_eq!(p.observation_count, 4);
    }

    #[test]
    fn bank_dimension_guard() {
        let mut bank = IdentityBank::new();
        let l = LocalCluster::from_members(&[e(&[1.0, 0.0])], vec![0]).unwrap();
        bank.merge_global(&[l], 0.5).unwrap();
        let l3 = LocalCluster::from_members(&[e(&[1.0, 0.0, 0.0])], vec![0]).unwrap();
        assert!(matches!(
            bank.merge_global(&[l3], 0.5),
            Err(IdentityError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn profile_updates_fold_in_order() {
        let mut bank = IdentityBank::new();
        let l = LocalCluster::from_members(&[e(&[1.0, 0.0])], vec![0]).unwrap();
        bank.merge_global(&[l], 0.5).unwrap();
        let facts = |texts: &[&str]| -> Vec<CharacterFact> {
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| CharacterFact {
                    node: NodeId::fact(i as u64 + 1),
                    text: t.to_string(),
                })
                .collect()
        };
        let profiler = AppendingProfiler;
        bank.update_profile("p-1", &facts(&["a", "b"]), &profiler).unwrap();
        assert_eq!(bank.get("p-1").unwrap().profile, "a\nb");
        bank.update_profile("p-1", &facts(&["c"]), &profiler).unwrap();
        assert_eq!(bank.get("p-1").unwrap().profile, "a\nb\nc");
        assert_eq!(bank.get("p-1").unwrap().evidence.len(), 2);
        assert!(matches!(
            bank.update_profile("p-9", &[], &profiler),
            Err(IdentityError::UnknownPerson(_))
        ));
    }

    #[test]
    fn failing_profiler_leaves_profile() {
        struct Down;
        impl Profiler for Down {
            fn update_profile(&self, _: &str, _: &str, _: &[String]) -> Result<String, AdapterError> {
                Err(AdapterError::Unavailable("down".into()))
            }
        }
        let mut bank = IdentityBank::new();
        let l = LocalCluster::from_members(&[e(&[1.0, 0.0])], vec![0]).unwrap();
        bank.merge_global(&[l], 0.5).unwrap();
        let before = bank.clone();
        let facts = [CharacterFact { node: NodeId::fact(1), text: "x".into() }];
        assert!(bank.update_profile("p-1", &facts, &Down).is_err());
        assert_eq!(bank, before);
    }
}
