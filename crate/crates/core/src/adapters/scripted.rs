//! Deterministic adapters.
//!
//! These stand in for models in tests and benchmarks. Each one is a pure
//! function of its inputs (and seed), so repeated calls are byte-identical.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, RwLock};
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{
    AdapterError, Answerer, AssessRequest, Embedder, Extractor, GlobalUpdater, LinkFact,
    LinkJudge, Profiler, PruneRequest, Pruner,
};
use crate::index::Embedding;
use crate::ingest::{ClipObservation, ExtractedFact, ExtractionResult, VoiceObservation};
use crate::types::{KeyframeRef, TimeSpan};

/// Lowercased word tokens. `#`, `:`, `-`, `_`, `<`, `>` count as word
/// characters so tags like `#link-3`, `key:gold` and `<p-1>` stay whole.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || "#:-_<>".contains(c)))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Feature-hashing embedder: each token maps to a seeded Gaussian vector,
/// a text maps to the normalized sum of its token vectors.
///
/// Texts sharing tokens get correlated vectors; unrelated texts are close to
/// orthogonal for large dimensions.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
    cache: Arc<RwLock<HashMap<String, Arc<[f64]>>>>,
}

/// Token vectors kept per embedder; later tokens are generated on the fly.
const TOKEN_CACHE_LIMIT: usize = 1 << 15;

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            seed,
            cache: Arc::default(),
        }
    }

    fn token_vector(&self, token: &str, acc: &mut [f64]) {
        if let Some(v) = self.cache.read().unwrap_or_else(|e| e.into_inner()).get(token) {
            acc.iter_mut().zip(v.iter()).for_each(|(a, x)| *a += x);
            return;
        }
        let v = self.generate(token);
        acc.iter_mut().zip(v.iter()).for_each(|(a, x)| *a += x);
        let mut cache = self.cache.write().unwrap_or_else(|e| e.into_inner());
        if cache.len() < TOKEN_CACHE_LIMIT {
            cache.insert(token.to_string(), v);
        }
    }

    fn generate(&self, token: &str) -> Arc<[f64]> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, AdapterError> {
        let mut acc = vec![0.0f64; self.dim];
        let toks = tokens(text);
        if toks.is_empty() {
            self.token_vector("\u{0}empty", &mut acc);
        }
        for t in &toks {
            self.token_vector(t, &mut acc);
        }
        Embedding::normalized(&acc).map_err(|e| AdapterError::InvalidOutput(e.to_string()))
    }
}

/// One fact per non-empty event; the clip summary is the event texts with
/// `#` tags removed.
#[derive(Debug, Clone, Copy, Default)]
pub struct EventExtractor;

pub fn strip_tags(text: &str) -> String {
    text.split_whitespace()
        .filter(|w| !w.starts_with('#'))
        .collect::<Vec<_>>()
        .join(" ")
}

impl Extractor for EventExtractor {
    fn extract(&self, obs: &ClipObservation) -> Result<ExtractionResult, AdapterError> {
        let mut result = ExtractionResult::default();
        let mut summary = Vec::new();
        for ev in &obs.events {
            let text = ev.text.trim();
            if text.is_empty() {
                continue;
            }
            let mut face_ids = Vec::new();
            for f in &ev.faces {
                let emb = Embedding::new(f.clone())
                    .map_err(|e| AdapterError::InvalidOutput(format!("face at t={}: {e}", ev.t)))?;
                face_ids.push(result.faces.len());
                result.faces.push(emb);
            }
            if let Some(voice) = &ev.speaker {
                result.voices.push(VoiceObservation {
                    voice_id: voice.clone(),
                    face: face_ids.first().copied(),
                });
            }
            let character_text = (!face_ids.is_empty()).then(|| {
                let tags: Vec<String> = face_ids.iter().map(|i| format!("<face_{i}>")).collect();
                format!("{text} [{}]", tags.join(" "))
            });
            let asr = ev.asr.clone().unwrap_or_default();
            result.facts.push(ExtractedFact {
                span: TimeSpan::point(ev.t),
                text: text.to_string(),
                scene: String::new(),
                asr_periods: if asr.is_empty() { vec![] } else { vec![TimeSpan::point(ev.t)] },
                asr,
                name_mentions: ev.names.clone(),
                keyframes: ev.media.iter().map(|m| KeyframeRef::from_uri(m.clone(), ev.t)).collect(),
                character_text,
                faces: face_ids,
            });
            let stripped = strip_tags(text);
            if !stripped.is_empty() {
                summary.push(stripped);
            }
        }
        result.clip_summary = summary.join(" ");
        Ok(result)
    }
}

/// Links a fact to every candidate sharing at least one keyword.
///
/// Keywords are tokens starting with a prefix (`#` by default), or an explicit
/// set. The weight is the Jaccard overlap of the two keyword sets.
#[derive(Debug, Clone)]
pub struct KeywordLinkJudge {
    prefix: String,
    keywords: Option<BTreeSet<String>>,
}

impl KeywordLinkJudge {
    pub fn tags() -> Self {
        Self::with_prefix("#")
    }

    pub fn with_prefix(prefix: impl Into<String>) -> Self {
        Self {
            prefix: prefix.into().to_lowercase(),
            keywords: None,
        }
    }

    pub fn with_keywords<I, S>(keywords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            prefix: String::new(),
            keywords: Some(keywords.into_iter().map(|k| k.as_ref().to_lowercase()).collect()),
        }
    }

    pub fn keywords_of(&self, text: &str) -> BTreeSet<String> {
        tokens(text)
            .into_iter()
            .filter(|t| match &self.keywords {
                Some(set) => set.contains(t),
                None => t.starts_with(&self.prefix) && t.len() > self.prefix.len(),
            })
            .collect()
    }
}

impl LinkJudge for KeywordLinkJudge {
    fn judge(&self, query: &LinkFact, candidates: &[LinkFact]) -> Result<String, AdapterError> {
        let q = self.keywords_of(&query.text);
        let links: Vec<_> = candidates
            .iter()
            .filter_map(|c| {
                let k = self.keywords_of(&c.text);
                let shared: Vec<&String> = q.intersection(&k).collect();
                if shared.is_empty() {
                    return None;
                }
                let union = q.union(&k).count();
                let names: Vec<&str> = shared.iter().map(|s| s.as_str()).collect();
                Some(json!({
                    "target": c.node_id,
                    "description": format!("both mention {}", names.join(", ")),
                    "weight": shared.len() as f64 / union as f64,
                }))
            })
            .collect();
        Ok(json!({ "links": links }).to_string())
    }
}

fn selection_output(indices: &[usize]) -> String {
    let parts: Vec<String> = indices.iter().map(usize::to_string).collect();
    format!("[{}]", parts.join(", "))
}

/// Keeps passages whose text contains any of the keywords.
#[derive(Debug, Clone)]
pub struct KeywordPruner {
    keywords: BTreeSet<String>,
}

impl KeywordPruner {
    pub fn new<I, S>(keywords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            keywords: keywords.into_iter().map(|k| k.as_ref().to_lowercase()).collect(),
        }
    }
}

impl Pruner for KeywordPruner {
    fn select(&self, request: &PruneRequest) -> Result<String, AdapterError> {
        let keep: Vec<usize> = request
            .passages
            .iter()
            .enumerate()
            .filter(|(_, p)| tokens(&p.text).iter().any(|t| self.keywords.contains(t)))
            .map(|(i, _)| i)
            .collect();
        Ok(selection_output(&keep))
    }
}

/// Selects every passage.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeepAllPruner;

impl Pruner for KeepAllPruner {
    fn select(&self, request: &PruneRequest) -> Result<String, AdapterError> {
        let all: Vec<usize> = (0..request.passages.len()).collect();
        Ok(selection_output(&all))
    }
}

/// Answers as soon as a passage carries a `key:<answer>` word, otherwise
/// asks to expand.
#[derive(Debug, Clone)]
pub struct KeyFactAnswerer {
    pub prefix: String,
}

impl Default for KeyFactAnswerer {
    fn default() -> Self {
        Self {
            prefix: "key:".to_string(),
        }
    }
}

impl KeyFactAnswerer {
    pub fn find_key<'a>(&self, request: &'a AssessRequest) -> Option<&'a str> {
        request.passages.iter().find_map(|p| {
            p.text.split_whitespace().find_map(|w| {
                let w = w.trim_end_matches(|c: char| c.is_ascii_punctuation());
                w.strip_prefix(self.prefix.as_str()).filter(|rest| !rest.is_empty())
            })
        })
    }
}

impl Answerer for KeyFactAnswerer {
    fn assess(&self, request: &AssessRequest) -> Result<String, AdapterError> {
        Ok(match self.find_key(request) {
            Some(answer) => format!("The decisive passage is in context. [ANSWER] {answer}"),
            None => "[Expand]".to_string(),
        })
    }
}

/// Wraps an answerer with a fixed delay plus a delay per context passage,
/// emulating generation cost that grows with context length.
#[derive(Debug, Clone)]
pub struct Delayed<A> {
    pub inner: A,
    pub base: Duration,
    pub per_passage: Duration,
}

impl<A> Delayed<A> {
    pub fn new(inner: A, base: Duration, per_passage: Duration) -> Self {
        Self {
            inner,
            base,
            per_passage,
        }
    }
}

impl<A: Answerer> Answerer for Delayed<A> {
    fn assess(&self, request: &AssessRequest) -> Result<String, AdapterError> {
        let n = u32::try_from(request.passages.len()).unwrap_or(u32::MAX);
        let wait = self.base + self.per_passage.saturating_mul(n);
        if !wait.is_zero() {
            thread::sleep(wait);
        }
        self.inner.assess(request)
    }
}

/// Global summary as a running concatenation of clip summaries.
#[derive(Debug, Clone)]
pub struct ConcatUpdater {
    pub separator: String,
}

impl Default for ConcatUpdater {
    fn default() -> Self {
        Self {
            separator: " | ".to_string(),
        }
    }
}

impl GlobalUpdater for ConcatUpdater {
    fn update(&self, previous: &str, clip_summary: &str) -> Result<String, AdapterError> {
        Ok(if previous.is_empty() {
            clip_summary.to_string()
        } else {
            format!("{previous}{}{clip_summary}", self.separator)
        })
    }
}

/// Profile as the list of all character facts, one per line.
#[derive(Debug, Clone, Copy, Default)]
pub struct AppendingProfiler;

impl Profiler for AppendingProfiler {
    fn update_profile(
        &self,
        _person_id: &str,
        profile: &str,
        new_facts: &[String],
    ) -> Result<String, AdapterError> {
        let mut lines: Vec<&str> = Vec::new();
        if !profile.is_empty() {
            lines.push(profile);
        }
        lines.extend(new_facts.iter().map(String::as_str));
        Ok(lines.join("\n"))
    }
}

/// An adapter that always fails, for degradation tests.
#[derive(Debug, Clone, Default)]
pub struct Failing {
    pub message: String,
}

impl Failing {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }

    fn err(&self) -> AdapterError {
        AdapterError::Unavailable(self.message.clone())
    }
}

impl LinkJudge for Failing {
    fn judge(&self, _: &LinkFact, _: &[LinkFact]) -> Result<String, AdapterError> {
        Err(self.err())
    }
}

impl Pruner for Failing {
    fn select(&self, _: &PruneRequest) -> Result<String, AdapterError> {
        Err(self.err())
    }
}

impl Answerer for Failing {
    fn assess(&self, _: &AssessRequest) -> Result<String, AdapterError> {
        Err(self.err())
    }
}

impl GlobalUpdater for Failing {
    fn update(&self, _: &str, _: &str) -> Result<String, AdapterError> {
        Err(self.err())
    }
}

impl Profiler for Failing {
    fn update_profile(&self, _: &str, _: &str, _: &[String]) -> Result<String, AdapterError> {
        Err(self.err())
    }
}

impl Extractor for Failing {
    fn extract(&self, _: &ClipObservation) -> Result<ExtractionResult, AdapterError> {
        Err(self.err())
    }
}
