//! Contracts for every model-dependent judgment.
//!
//! The engine never talks to a model directly. Each role below is a trait;
//! [`scripted`] holds deterministic implementations used by tests and the
//! benchmark, [`remote`] a generic HTTP implementation for hosted models.
//! Roles that produce free text (link judge, pruner, answerer) return the raw
//! model output so that parsing, and its failure handling, stays in the engine.

pub mod parse;
pub mod remote;
pub mod scripted;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::{LocalClusterer, SingleLinkage};
use crate::index::Embedding;
use crate::ingest::{ClipObservation, ExtractionResult};
use crate::types::{format_timestamp, KeyframeRef, Level, NodeId};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AdapterError {
    #[error("adapter unavailable: {0}")]
    Unavailable(String),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("endpoint returned status {status} after {attempts} attempt(s)")]
    Status { status: u16, attempts: u32 },
    #[error("unusable adapter output: {0}")]
    InvalidOutput(String),
    #[error("adapter misconfigured: {0}")]
    Config(String),
}

impl AdapterError {
    /// Whether another attempt could plausibly succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            AdapterError::Timeout { .. } | AdapterError::Transport { .. } => true,
            AdapterError::Status { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

/// Maps text to a fixed-dimension vector; must be deterministic.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding, AdapterError>;
}

/// Turns one clip of the stream into facts plus a clip summary.
pub trait Extractor: Send + Sync {
    fn extract(&self, obs: &ClipObservation) -> Result<ExtractionResult, AdapterError>;
}

/// Fact as shown to the link judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkFact {
    pub node_id: NodeId,
    pub text: String,
    pub timestamp: String,
}

/// Decides which retrieved candidates a new fact should link to.
///
/// Output must follow the link-generation JSON format:
/// `{"links": [{"target", "description", "weight"}]}`.
pub trait LinkJudge: Send + Sync {
    fn judge(&self, query: &LinkFact, candidates: &[LinkFact]) -> Result<String, AdapterError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PassageTime {
    Instant { timestamp: f64 },
    Range { start: f64, end: f64 },
}

/// One context node rendered for a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub node: NodeId,
    pub level: Level,
    pub text: String,
    pub time: PassageTime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub character_text: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keyframes: Vec<KeyframeRef>,
}

impl Passage {
    pub fn fact(node: NodeId, text: impl Into<String>, timestamp: f64) -> Self {
        Self {
            node,
            level: Level::Fact,
            text: text.into(),
            time: PassageTime::Instant { timestamp },
            character_text: None,
            keyframes: Vec::new(),
        }
    }

    pub fn clip(node: NodeId, text: impl Into<String>, start: f64, end: f64) -> Self {
        Self {
            node,
            level: Level::Clip,
            text: text.into(),
            time: PassageTime::Range { start, end },
            character_text: None,
            keyframes: Vec::new(),
        }
    }

    pub fn time_label(&self) -> String {
        match self.time {
            PassageTime::Instant { timestamp } => format_timestamp(timestamp),
            PassageTime::Range { start, end } => {
                format!("{}-{}", format_timestamp(start), format_timestamp(end))
            }
        }
    }
}

/// Input to the pruning model: candidates are referred to by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneRequest {
    pub question: String,
    pub context_summary: String,
    pub passages: Vec<Passage>,
    #[serde(default)]
    pub character_profiles: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
}

/// Selects helpful passages; output is a list of passage numbers such as `[1, 3, 5]`.
pub trait Pruner: Send + Sync {
    fn select(&self, request: &PruneRequest) -> Result<String, AdapterError>;
}

/// Input to the answering model for one assessment turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessRequest {
    pub question: String,
    pub context_summary: String,
    pub passages: Vec<Passage>,
    #[serde(default)]
    pub character_profiles: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    pub turn: u32,
}

impl AssessRequest {
    pub fn keyframes(&self) -> impl Iterator<Item = &KeyframeRef> {
        self.passages.iter().flat_map(|p| p.keyframes.iter())
    }
}

/// Answers or asks for more evidence; output ends in `[ANSWER] ...` or `[Expand]`.
pub trait Answerer: Send + Sync {
    fn assess(&self, request: &AssessRequest) -> Result<String, AdapterError>;
}

/// Folds a new clip summary into the running global summary.
pub trait GlobalUpdater: Send + Sync {
    fn update(&self, previous: &str, clip_summary: &str) -> Result<String, AdapterError>;
}

/// Merges new character-level facts into a person profile.
pub trait Profiler: Send + Sync {
    fn update_profile(
        &self,
        person_id: &str,
        profile: &str,
        new_facts: &[String],
    ) -> Result<String, AdapterError>;
}

impl<F> Pruner for F
where
    F: Fn(&PruneRequest) -> Result<String, AdapterError> + Send + Sync,
{
    fn select(&self, request: &PruneRequest) -> Result<String, AdapterError> {
        self(request)
    }
}

impl<F> Answerer for F
where
    F: Fn(&AssessRequest) -> Result<String, AdapterError> + Send + Sync,
{
    fn assess(&self, request: &AssessRequest) -> Result<String, AdapterError> {
        self(request)
    }
}

impl<F> LinkJudge for F
where
    F: Fn(&LinkFact, &[LinkFact]) -> Result<String, AdapterError> + Send + Sync,
{
    fn judge(&self, query: &LinkFact, candidates: &[LinkFact]) -> Result<String, AdapterError> {
        self(query, candidates)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    #[default]
    Scripted,
    Remote,
}

/// Binding of one adapter role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    pub kind: AdapterKind,
    pub endpoint: Option<String>,
    /// Per-request timeout in seconds.
    pub timeout: f64,
    pub max_retries: u32,
    /// Resource name of the prompt template (remote adapters only).
    pub prompt_template: Option<String>,
    pub max_in_flight: usize,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            kind: AdapterKind::Scripted,
            endpoint: None,
            timeout: 30.0,
            max_retries: 2,
            prompt_template: None,
            max_in_flight: 8,
        }
    }
}

impl AdapterConfig {
    pub fn remote(endpoint: impl Into<String>) -> Self {
        Self {
            kind: AdapterKind::Remote,
            endpoint: Some(endpoint.into()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AdapterError> {
        if self.kind == AdapterKind::Remote && self.endpoint.as_deref().is_none_or(str::is_empty) {
            return Err(AdapterError::Config("remote adapter requires an endpoint".into()));
        }
        if !(self.timeout.is_finite() && self.timeout > 0.0) {
            return Err(AdapterError::Config(format!("timeout must be positive, got {}", self.timeout)));
        }
        if self.max_in_flight == 0 {
            return Err(AdapterError::Config("max_in_flight must be at least 1".into()));
        }
        if let Some(name) = &self.prompt_template {
            if crate::prompts::template(name).is_none() {
                return Err(AdapterError::Config(format!("unknown prompt template {name:?}")));
            }
        }
        Ok(())
    }

    pub fn timeout_duration(&self) -> Duration {
        Duration::from_secs_f64(self.timeout)
    }
}

/// One implementation per role, shared across sessions.
#[derive(Clone)]
pub struct Adapters {
    pub embedder: Arc<dyn Embedder>,
    pub extractor: Arc<dyn Extractor>,
    pub judge: Arc<dyn LinkJudge>,
    pub pruner: Arc<dyn Pruner>,
    pub answerer: Arc<dyn Answerer>,
    pub updater: Arc<dyn GlobalUpdater>,
    pub profiler: Arc<dyn Profiler>,
    pub clusterer: Arc<dyn LocalClusterer>,
}

impl Adapters {
    /// Deterministic adapters: hashed embeddings, one fact per event, `#tag`
    /// link judging, keyword-free pruning (keep all) and `key:` answering.
    pub fn scripted(dim: usize, seed: u64) -> Self {
        use scripted::*;
        Self {
            embedder: Arc::new(HashEmbedder::new(dim, seed)),
            extractor: Arc::new(EventExtractor),
            judge: Arc::new(KeywordLinkJudge::tags()),
            pruner: Arc::new(KeepAllPruner),
            answerer: Arc::new(KeyFactAnswerer::default()),
            updater: Arc::new(ConcatUpdater::default()),
            profiler: Arc::new(AppendingProfiler),
            clusterer: Arc::new(SingleLinkage::default()),
        }
    }
}

impl std::fmt::Debug for Adapters {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Adapters").field("embedder_dim", &self.embedder.dim()).finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remote_requires_endpoint() {
        let mut cfg = AdapterConfig {
            kind: AdapterKind::Remote,
            ..AdapterConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.endpoint = Some("http://localhost:9/complete".into());
        assert!(cfg.validate().is_ok());
        cfg.prompt_template = Some("missing".into());
        assert!(cfg.validate().is_err());
        assert!(AdapterConfig::default().validate().is_ok());
    }

    #[test]
    fn retryable_classes() {
        assert!(AdapterError::Timeout { attempts: 1 }.is_retryable());
        assert!(AdapterError::Status { status: 503, attempts: 1 }.is_retryable());
        assert!(!AdapterError::Status { status: 400, attempts: 1 }.is_retryable());
        assert!(!AdapterError::InvalidOutput("x".into()).is_retryable());
    }
}
