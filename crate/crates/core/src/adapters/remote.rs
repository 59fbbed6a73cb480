//! Generic HTTP adapters.
//!
//! Text roles send `POST {prompt, images?}` and expect `{text}` back; the
//! embedder sends `POST {text}` and expects `{embedding: [f32]}`. Requests
//! are retried on timeouts, transport errors, 429 and 5xx, up to
//! `max_retries` extra attempts. A bearer token is read from
//! [`TOKEN_ENV`] when set.

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    AdapterConfig, AdapterError, Answerer, AssessRequest, Embedder, Extractor, GlobalUpdater, LinkFact, LinkJudge,
    Profiler, PruneRequest, Pruner,
};
use crate::index::Embedding;
use crate::ingest::{ClipObservation, ExtractedFact, ExtractionResult};
use crate::prompts::{self, render_link_fact, render_link_facts, render_passages, render_profiles};
use crate::types::{KeyframeRef, TimeSpan};

pub const TOKEN_ENV: &str = "PYRAMEM_ADAPTER_TOKEN";
const BACKOFF_BASE: Duration = Duration::from_millis(50);

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    images: &'a [String],
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    text: String,
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    embedding: Vec<f32>,
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// One endpoint with its timeout, retry budget and concurrency limit.
#[derive(Clone)]
pub struct RemoteModel {
    agent: ureq::Agent,
    endpoint: String,
    max_retries: u32,
    token: Option<String>,
    gate: Arc<Gate>,
}

impl std::fmt::Debug for RemoteModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteModel")
            .field("endpoint", &self.endpoint)
            .field("max_retries", &self.max_retries)
            .finish_non_exhaustive()
    }
}

impl RemoteModel {
    pub fn new(config: &AdapterConfig) -> Result<Self, AdapterError> {
        let config = AdapterConfig {
            kind: super::AdapterKind::Remote,
            ..config.clone()
        };
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout_duration()))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint: config.endpoint.clone().expect("validated"),
            max_retries: config.max_retries,
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            gate: Arc::new(Gate::new(config.max_in_flight)),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn post_once<B: Serialize, R: DeserializeOwned>(&self, body: &B, attempts: u32) -> Result<R, AdapterError> {
        let _permit = self.gate.acquire();
        let mut req = self.agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => AdapterError::Timeout { attempts },
            other => AdapterError::Transport {
                message: other.to_string(),
                attempts,
            },
        })?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(AdapterError::Status { status, attempts });
        }
        resp.body_mut().read_json::<R>().map_err(|e| match e {
            ureq::Error::Timeout(_) => AdapterError::Timeout { attempts },
            other => AdapterError::InvalidOutput(format!("response body: {other}")),
        })
    }

    /// Posts `body`, retrying retryable failures with exponential backoff.
    pub fn post<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R, AdapterError> {
        let mut attempt = 1;
        loop {
            match self.post_once(body, attempt) {
                Ok(r) => return Ok(r),
                Err(e) if e.is_retryable() && attempt <= self.max_retries => {
                    std::thread::sleep(BACKOFF_BASE * 2u32.pow((attempt - 1).min(6)));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    pub fn complete(&self, prompt: &str, images: &[String]) -> Result<String, AdapterError> {
        self.post::<_, CompletionResponse>(&CompletionRequest { prompt, images })
            .map(|r| r.text)
    }
}

fn render(name: &str, slots: BTreeMap<&str, String>) -> Result<String, AdapterError> {
    prompts::render_named(name, &slots).map_err(|e| AdapterError::Config(e.to_string()))
}

fn options_block(options: &[String]) -> String {
    options.join("\n")
}

pub struct RemoteEmbedder {
    model: RemoteModel,
    dim: usize,
}

impl RemoteEmbedder {
    pub fn new(model: RemoteModel, dim: usize) -> Self {
        Self { model, dim }
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, AdapterError> {
        let r: EmbedResponse = self.model.post(&EmbedRequest { text })?;
        if r.embedding.len() != self.dim {
            return Err(AdapterError::InvalidOutput(format!(
                "embedding has {} dimensions, expected {}",
                r.embedding.len(),
                self.dim
            )));
        }
        Embedding::new(r.embedding).map_err(|e| AdapterError::InvalidOutput(e.to_string()))
    }
}

/// Extraction through the extraction prompt. Face vectors are not produced
/// remotely, so remote extraction yields no identity observations.
pub struct RemoteExtractor {
    model: RemoteModel,
}

impl RemoteExtractor {
    pub fn new(model: RemoteModel) -> Self {
        Self { model }
    }
}

#[derive(Debug, Deserialize)]
struct WireFact {
    description: String,
    #[serde(default)]
    scene_description: String,
    #[serde(default)]
    asr: String,
    #[serde(default)]
    asr_periods: Vec<(f64, f64)>,
    #[serde(default)]
    name_mentions: Vec<String>,
    timestamp: Value,
    #[serde(default)]
    key_frames: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct WireExtraction {
    facts: Vec<WireFact>,
    clip_summary: String,
    #[serde(default)]
    clip_scene: String,
}

fn json_payload(raw: &str) -> &str {
    match (raw.find('{'), raw.rfind('}')) {
        (Some(a), Some(b)) if a < b => &raw[a..=b],
        _ => raw,
    }
}

/// Parses extraction output, clamping timestamps into the clip window.
pub fn parse_extraction(raw: &str, window: TimeSpan) -> Result<ExtractionResult, AdapterError> {
    let wire: WireExtraction = serde_json::from_str(json_payload(raw))
        .map_err(|e| AdapterError::InvalidOutput(format!("extraction output: {e}")))?;
    let clamp = |t: f64| t.clamp(window.start, window.end);
    let facts = wire
        .facts
        .into_iter()
        .filter(|f| !f.description.trim().is_empty())
        .map(|f| {
            let t = match &f.timestamp {
                Value::Number(n) => n.as_f64().unwrap_or(window.start),
                Value::String(s) => crate::types::parse_timestamp(s).unwrap_or(window.start),
                _ => window.start,
            };
            let t = clamp(t);
            ExtractedFact {
                span: TimeSpan::point(t),
                text: f.description,
                scene: f.scene_description,
                asr_periods: f
                    .asr_periods
                    .into_iter()
                    .map(|(a, b)| TimeSpan::new(clamp(a), clamp(b.max(a))))
                    .collect(),
                asr: f.asr,
                name_mentions: f.name_mentions,
                keyframes: f.key_frames.into_iter().map(|u| KeyframeRef::from_uri(u, t)).collect(),
                character_text: None,
                faces: Vec::new(),
            }
        })
        .collect();
    Ok(ExtractionResult {
        facts,
        clip_summary: wire.clip_summary,
        clip_scene: wire.clip_scene,
        faces: Vec::new(),
        voices: Vec::new(),
    })
}

impl Extractor for RemoteExtractor {
    fn extract(&self, obs: &ClipObservation) -> Result<ExtractionResult, AdapterError> {
        let events = serde_json::to_string_pretty(&obs.events).expect("events serialize");
        let prompt = render(
            "extraction",
            BTreeMap::from([
                ("clip_start", obs.span.start.to_string()),
                ("clip_end", obs.span.end.to_string()),
                ("events_json", events),
            ]),
        )?;
        let images: Vec<String> = obs.media_refs.iter().map(|k| k.uri.clone()).collect();
        parse_extraction(&self.model.complete(&prompt, &images)?, obs.span)
    }
}

pub struct RemoteLinkJudge {
    model: RemoteModel,
}

impl RemoteLinkJudge {
    pub fn new(model: RemoteModel) -> Self {
        Self { model }
    }
}

impl LinkJudge for RemoteLinkJudge {
    fn judge(&self, query: &LinkFact, candidates: &[LinkFact]) -> Result<String, AdapterError> {
        let prompt = render(
            "link_generation",
            BTreeMap::from([
                ("query_fact_json", render_link_fact(query)),
                ("facts_list_json", render_link_facts(candidates)),
            ]),
        )?;
        self.model.complete(&prompt, &[])
    }
}

/// Node selection; picks the multiple-choice template when options are given.
pub struct RemotePruner {
    model: RemoteModel,
}

impl RemotePruner {
    pub fn new(model: RemoteModel) -> Self {
        Self { model }
    }
}

impl Pruner for RemotePruner {
    fn select(&self, r: &PruneRequest) -> Result<String, AdapterError> {
        let mut slots = BTreeMap::from([
            ("question", r.question.clone()),
            ("context_summary", r.context_summary.clone()),
            ("passages", render_passages(&r.passages)),
        ]);
        let name = match &r.options {
            Some(_) => "mc_node_selection",
            None => {
                slots.insert("character_profiles", render_profiles(&r.character_profiles));
                "open_node_selection"
            }
        };
        self.model.complete(&render(name, slots)?, &[])
    }
}

/// Answering with keyframes of the context passages attached as images.
pub struct RemoteAnswerer {
    model: RemoteModel,
}

impl RemoteAnswerer {
    pub fn new(model: RemoteModel) -> Self {
        Self { model }
    }
}

impl Answerer for RemoteAnswerer {
    fn assess(&self, r: &AssessRequest) -> Result<String, AdapterError> {
        let mut slots = BTreeMap::from([
            ("question", r.question.clone()),
            ("context_summary", r.context_summary.clone()),
            ("passages", render_passages(&r.passages)),
        ]);
        let name = match &r.options {
            Some(options) => {
                slots.insert("options", options_block(options));
                "mc_answering"
            }
            None => {
                slots.insert("character_profiles", render_profiles(&r.character_profiles));
                "open_answering"
            }
        };
        let images: Vec<String> = r.keyframes().map(|k| k.uri.clone()).collect();
        self.model.complete(&render(name, slots)?, &images)
    }
}

pub struct RemoteUpdater {
    model: RemoteModel,
}

impl RemoteUpdater {
    pub fn new(model: RemoteModel) -> Self {
        Self { model }
    }
}

impl GlobalUpdater for RemoteUpdater {
    fn update(&self, previous: &str, clip_summary: &str) -> Result<String, AdapterError> {
        let prompt = render(
            "global_update",
            BTreeMap::from([
                ("previous_summary", previous.to_string()),
                ("clip_summary", clip_summary.to_string()),
            ]),
        )?;
        let text = self.model.complete(&prompt, &[])?;
        Ok(text.trim().to_string())
    }
}

pub struct RemoteProfiler {
    model: RemoteModel,
}

impl RemoteProfiler {
    pub fn new(model: RemoteModel) -> Self {
        Self { model }
    }
}

impl Profiler for RemoteProfiler {
    fn update_profile(&self, person_id: &str, profile: &str, new_facts: &[String]) -> Result<String, AdapterError> {
        let prompt = render(
            "profile_update",
            BTreeMap::from([
                ("person_id", person_id.to_string()),
                ("profile", profile.to_string()),
                ("facts", new_facts.join("\n")),
            ]),
        )?;
        Ok(self.model.complete(&prompt, &[])?.trim().to_string())
    }
}
