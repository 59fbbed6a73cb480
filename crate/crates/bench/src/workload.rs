//! Synthetic multi-hop workloads with planted evidence chains.
//!
//! Every task is an independent event stream. A seed fact carries all the
//! query words; `evidence_hops` further facts, each in its own earlier clip,
//! form a chain of `#link-N` tags ending at the decisive fact, which carries
//! `key:<gold>`. Consecutive chain facts share a bridge word so each is among
//! the other's nearest link candidates. Topic distractors share two of the
//! three query words and crowd the seed set, so the decisive fact of a
//! multi-hop task is never retrieved directly.

use std::collections::HashSet;
use std::path::Path;

use pyramem_core::StreamEvent;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::BenchError;

pub const EVIDENCE_TAG: &str = "#evidence";
pub const LINK_PREFIX: &str = "#link-";
pub const KEY_PREFIX: &str = "key:";

const CLIP_LEN: f64 = 30.0;
const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "tr"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub tasks: usize,
    /// Relative weight of each hop count; index is the number of hops.
    pub hop_weights: Vec<f64>,
    pub seed: u64,
    pub clips: usize,
    pub filler_per_clip: usize,
    pub distractors: usize,
    /// Distractors sharing one clip.
    pub distractors_per_clip: usize,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            tasks: 200,
            hop_weights: vec![1.0, 1.0, 2.0],
            seed: 7,
            clips: 16,
            filler_per_clip: 4,
            distractors: 24,
            distractors_per_clip: 4,
        }
    }
}

impl WorkloadSpec {
    /// Named presets: `hop2` mixes 0, 1 and 2 hop tasks, `distractor` is all
    /// two-hop with a doubled distractor load, `mixed` spreads over 0..=3
    /// hops (three hops exceed the default turn budget).
    pub fn preset(name: &str) -> Option<Self> {
        let base = Self::default();
        Some(match name {
            "hop2" => base,
            "distractor" => Self {
                tasks: 40,
                hop_weights: vec![0.0, 0.0, 1.0],
                distractors: 48,
                distractors_per_clip: 6,
                ..base
            },
            "mixed" => Self {
                hop_weights: vec![1.0; 4],
                ..base
            },
            _ => return None,
        })
    }

    /// A preset name, or a path to a JSON spec.
    pub fn resolve(name_or_path: &str) -> Result<Self, BenchError> {
        if let Some(spec) = Self::preset(name_or_path) {
            return Ok(spec);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Err(BenchError::UnknownWorkload(name_or_path.to_string()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BenchError::InvalidWorkload(format!("{}: {e}", path.display())))
    }

    fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidWorkload(m.to_string()));
        if self.hop_weights.is_empty() || self.hop_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("hop_weights must be non-negative and non-empty");
        }
        if self.hop_weights.iter().sum::<f64>() <= 0.0 {
            return bad("hop_weights sum to zero");
        }
        if self.distractors_per_clip == 0 {
            return bad("distractors_per_clip must be positive");
        }
        let max_hops = self.hop_weights.len() - 1;
        if self.clips < max_hops + 1 {
            return bad("fewer clips than chain facts");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub stream: Vec<StreamEvent>,
    pub question: String,
    pub gold: String,
    pub evidence_hops: u32,
    /// Stream positions of the seed fact and the decisive fact.
    pub seed_event: usize,
    pub decisive_event: usize,
}

/// Deterministic pseudo-word vocabulary.
fn vocabulary() -> Vec<String> {
    let mut words = Vec::with_capacity(ONSETS.len().pow(2) * VOWELS.len().pow(2));
    for a in ONSETS {
        for v in VOWELS {
            for b in ONSETS {
                for w in VOWELS {
                    words.push(format!("{a}{v}{b}{w}"));
                }
            }
        }
    }
    words
}

struct Words<'v> {
    pool: &'v [String],
    reserved: HashSet<&'v str>,
}

impl<'v> Words<'v> {
    fn fresh(&mut self, rng: &mut ChaCha8Rng) -> &'v str {
        loop {
            let w = self.pool.choose(rng).expect("non-empty vocabulary").as_str();
            if self.reserved.insert(w) {
                return w;
            }
        }
    }

    /// A word not reserved by this task; fillers may repeat each other.
    fn filler(&self, rng: &mut ChaCha8Rng) -> &'v str {
        loop {
            let w = self.pool.choose(rng).expect("non-empty vocabulary").as_str();
            if !self.reserved.contains(w) {
                return w;
            }
        }
    }
}

pub fn generate_workload(spec: &WorkloadSpec) -> Result<Vec<SyntheticTask>, BenchError> {
    spec.validate()?;
    let vocab = vocabulary();
    let hops = WeightedIndex::new(&spec.hop_weights).map_err(|e| BenchError::InvalidWorkload(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.tasks)
        .map(|_| {
            let h = hops.sample(&mut rng) as u32;
            let task_seed = rng.random();
            Ok(generate_task(spec, h, &vocab, &mut ChaCha8Rng::seed_from_u64(task_seed)))
        })
        .collect()
}

fn generate_task(spec: &WorkloadSpec, hops: u32, vocab: &[String], rng: &mut ChaCha8Rng) -> SyntheticTask {
    let mut words = Words {
        pool: vocab,
        reserved: HashSet::new(),
    };
    let query: Vec<&str> = (0..3).map(|_| words.fresh(rng)).collect();
    let gold = words.fresh(rng).to_string();
    let bridges: Vec<&str> = (0..hops).map(|_| words.fresh(rng)).collect();
    let h = hops as usize;

    // chain[0] is the seed, chain[h] the decisive fact
    let chain: Vec<String> = (0..=h)
        .map(|i| {
            let mut parts: Vec<String> = Vec::new();
            if i == 0 {
                parts.extend(query.iter().map(|w| w.to_string()));
            }
            if i > 0 {
                parts.push(bridges[i - 1].to_string());
            }
            if i < h {
                parts.push(bridges[i].to_string());
            }
            if i == h {
                parts.push(format!("{KEY_PREFIX}{gold}"));
            }
            parts.push(EVIDENCE_TAG.to_string());
            if i > 0 {
                parts.push(format!("{LINK_PREFIX}{i}"));
            }
            if i < h {
                parts.push(format!("{LINK_PREFIX}{}", i + 1));
            }
            parts.join(" ")
        })
        .collect();

    // chain facts occupy distinct clips in the first half, decisive earliest;
    // distractor clips follow the seed
    let distractor_clips = spec.distractors.div_ceil(spec.distractors_per_clip);
    let chain_span = (spec.clips / 2).max(h + 1);
    let mut slots: Vec<usize> = (0..chain_span).collect();
    slots.shuffle(rng);
    let mut chain_slots: Vec<usize> = slots[..=h].to_vec();
    chain_slots.sort_unstable();
    chain_slots.reverse();
    let total_clips = spec.clips.max(chain_span) + distractor_clips;

    let mut clips: Vec<Vec<(String, bool)>> = (0..total_clips)
        .map(|_| {
            (0..spec.filler_per_clip)
                .map(|_| {
                    let n = rng.random_range(3..=5);
                    ((0..n).map(|_| words.filler(rng)).collect::<Vec<_>>().join(" "), false)
                })
                .collect()
        })
        .collect();
    let mut marks = vec![None; total_clips];
    for (i, text) in chain.iter().enumerate() {
        let slot = chain_slots[i];
        let pos = rng.random_range(0..=clips[slot].len());
        clips[slot].insert(pos, (text.clone(), true));
        marks[slot] = Some((i, pos));
    }
    let first_distractor_clip = total_clips - distractor_clips;
    for d in 0..spec.distractors {
        let mut pair = query.clone();
        pair.shuffle(rng);
        let fill: Vec<&str> = (0..2).map(|_| words.filler(rng)).collect();
        let text = format!("{} {} {}", pair[0], pair[1], fill.join(" "));
        let slot = first_distractor_clip + d / spec.distractors_per_clip;
        let pos = rng.random_range(0..=clips[slot].len());
        clips[slot].insert(pos, (text, false));
    }

    let mut stream = Vec::new();
    let (mut seed_event, mut decisive_event) = (0, 0);
    for (slot, facts) in clips.iter().enumerate() {
        let step = CLIP_LEN / (facts.len() + 1) as f64;
        for (k, (text, _)) in facts.iter().enumerate() {
            if let Some((i, pos)) = marks[slot] {
                if pos == k {
                    if i == 0 {
                        seed_event = stream.len();
                    }
                    if i == h {
                        decisive_event = stream.len();
                    }
                }
            }
            stream.push(StreamEvent::new(slot as f64 * CLIP_LEN + (k + 1) as f64 * step, text.clone()));
        }
    }
    SyntheticTask {
        stream,
        question: query.join(" "),
        gold,
        evidence_hops: hops,
        seed_event,
        decisive_event,
    }
}

/// Observations of `identities` people on orthogonal axes, each jittered in
/// the orthogonal complement with norm `jitter`, spread over `clips` clips in
/// a shuffled arrival order. Returns the stream and each event's identity.
pub fn planted_identity_stream<R: Rng>(
    rng: &mut R,
    identities: usize,
    clips: usize,
    dim: usize,
    jitter: f32,
) -> (Vec<StreamEvent>, Vec<usize>) {
    assert!(identities > 0 && dim > identities, "need a free axis for jitter");
    let mut arrival: Vec<usize> = (0..clips).collect();
    arrival.shuffle(rng);
    let mut events = Vec::new();
    let mut labels = Vec::new();
    for (slot, clip) in arrival.into_iter().enumerate() {
        let mut present: Vec<usize> = (0..identities).filter(|i| (clip + i) % 3 != 0 || *i == clip % identities).collect();
        present.shuffle(rng);
        let mut k = 0;
        for identity in present {
            for _ in 0..rng.random_range(1..=3) {
                let mut face = vec![0.0f32; dim];
                let mut noise: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                noise[..identities].fill(0.0);
                let norm = noise.iter().map(|x| x * x).sum::<f32>().sqrt().max(f32::MIN_POSITIVE);
                for (f, n) in face.iter_mut().zip(&noise) {
                    *f = jitter * n / norm;
                }
                face[identity] = 1.0;
                let mut e = StreamEvent::new(slot as f64 * CLIP_LEN + k as f64, format!("someone appears in clip {clip}"));
                e.faces = vec![face];
                events.push(e);
                labels.push(identity);
                k += 1;
            }
        }
    }
    (events, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(hops: Vec<f64>) -> WorkloadSpec {
        WorkloadSpec {
            tasks: 12,
            hop_weights: hops,
            ..WorkloadSpec::default()
        }
    }

    #[test]
    fn same_seed_same_workload() {
        let spec = small(vec![1.0, 1.0, 1.0]);
        assert_eq!(generate_workload(&spec).unwrap(), generate_workload(&spec).unwrap());
        let other = WorkloadSpec { seed: 8, ..spec.clone() };
        assert_ne!(generate_workload(&spec).unwrap(), generate_workload(&other).unwrap());
    }

    #[test]
    fn streams_are_time_ordered_and_marked() {
        for task in generate_workload(&small(vec![1.0, 1.0, 1.0, 1.0])).unwrap() {
            assert!(task.stream.windows(2).all(|w| w[0].t < w[1].t));
            let seed = &task.stream[task.seed_event].text;
            let decisive = &task.stream[task.decisive_event].text;
            assert!(task.question.split(' ').all(|w| seed.contains(w)));
            assert!(decisive.contains(&format!("{KEY_PREFIX}{}", task.gold)));
            let keys = task.stream.iter().filter(|e| e.text.contains(KEY_PREFIX)).count();
            assert_eq!(keys, 1);
            let evidence = task.stream.iter().filter(|e| e.text.contains(EVIDENCE_TAG)).count();
            assert_eq!(evidence as u32, task.evidence_hops + 1);
            if task.evidence_hops == 0 {
                assert_eq!(task.seed_event, task.decisive_event);
            } else {
                assert!(task.decisive_event < task.seed_event);
            }
        }
    }

    #[test]
    fn zero_weight_hops_never_drawn() {
        let tasks = generate_workload(&small(vec![0.0, 0.0, 1.0])).unwrap();
        assert!(tasks.iter().all(|t| t.evidence_hops == 2));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate_workload(&small(vec![])).is_err());
        assert!(generate_workload(&small(vec![0.0, 0.0])).is_err());
        assert!(generate_workload(&small(vec![-1.0, 2.0])).is_err());
        assert!(matches!(WorkloadSpec::resolve("nope"), Err(BenchError::UnknownWorkload(_))));
    }

    #[test]
    fn planted_stream_labels_match_faces() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (events, labels) = planted_identity_stream(&mut rng, 4, 20, 16, 0.3);
        assert_eq!(events.len(), labels.len());
        for (e, l) in events.iter().zip(&labels) {
            let f = &e.faces[0];
            let argmax = (0..4).max_by(|a, b| f[*a].total_cmp(&f[*b])).unwrap();
            assert_eq!(argmax, *l);
        }
        assert!(events.windows(2).all(|w| w[0].t < w[1].t));
    }
}
