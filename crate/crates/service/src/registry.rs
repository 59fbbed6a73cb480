//! Named stores on disk and the operations shared by the CLI and the HTTP
//! service.
//!
//! Layout under the data directory:
//!
//! ```text
//! <data>/<id>/store.toml     engine configuration
//! <data>/<id>/snapshot.json  last full snapshot
//! <data>/<id>/events.log     append log of mutations since creation
//! <data>/<id>/traces.log     one JSON line per answered query
//! <data>/<id>/media/         files served read-only under /media/
//! ```

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use pyramem_core::config::EngineConfig;
use pyramem_core::ingest::parse_event;
use pyramem_core::store::log::EventLog;
use pyramem_core::store::GraphStats;
use pyramem_core::types::{Level, NodeId};
use pyramem_core::{
    Adapters, AnswerResult, IngestError, IngestPipeline, IngestReport, PersonEntity, PyramidStore, Query, Reasoner,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{info, warn};

use crate::error::{decode_json, ServiceError};

const CONFIG_FILE: &str = "store.toml";
const SNAPSHOT_FILE: &str = "snapshot.json";
const LOG_FILE: &str = "events.log";
const TRACE_FILE: &str = "traces.log";
const MEDIA_DIR: &str = "media";

/// Engine defaults for new stores: library defaults with per-turn timing
/// off, so answers are reproducible byte for byte.
pub fn service_defaults() -> EngineConfig {
    let mut c = EngineConfig::default();
    c.reasoner.record_timing = false;
    c
}

pub fn validate_store_id(id: &str) -> Result<(), ServiceError> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        && !id.starts_with('-');
    if ok {
        Ok(())
    } else {
        Err(ServiceError::invalid(
            "store id",
            "id",
            "1 to 64 characters from [A-Za-z0-9_-], not starting with '-'",
        ))
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Io(format!("{}: {e}", path.display()))
}

/// Recursively overlays `patch` onto `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    #[serde(default)]
    pub id: Option<String>,
    /// Partial engine configuration overlaid on the service defaults.
    #[serde(default)]
    pub config: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreInfo {
    pub id: String,
    pub config: EngineConfig,
    pub stats: GraphStats,
}

/// Totals over one ingest request.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestSummary {
    pub events: usize,
    /// Events falling in windows the store already held; a resent upload
    /// skips them instead of duplicating facts.
    pub skipped: usize,
    pub clips: usize,
    pub facts: usize,
    pub links: usize,
    pub cross_clip_links: usize,
    pub persons_created: usize,
    /// Last clip window committed to the store, for resuming an upload.
    pub last_window: Option<u64>,
    pub global_version: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl IngestSummary {
    fn add(&mut self, reports: &[IngestReport]) {
        for r in reports {
            self.clips += r.clips;
            self.facts += r.facts;
            self.links += r.links;
            self.cross_clip_links += r.cross_clip_links;
            self.persons_created += r.persons_created;
            self.warnings.extend(r.warnings.iter().cloned());
        }
    }
}

/// Result of an ingest request. Clips committed before a failure are kept.
#[derive(Debug)]
pub struct IngestOutcome {
    pub summary: IngestSummary,
    pub error: Option<ServiceError>,
}

#[derive(Debug, Serialize)]
struct TraceLine<'a> {
    at: f64,
    latency: f64,
    query: &'a Query,
    result: &'a AnswerResult,
}

pub struct StoreHandle {
    id: String,
    dir: PathBuf,
    config: EngineConfig,
    adapters: Adapters,
    store: RwLock<Arc<PyramidStore>>,
    ingesting: AtomicBool,
    traces: Mutex<()>,
    trace_max_bytes: Option<u64>,
}

impl std::fmt::Debug for StoreHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StoreHandle").field("id", &self.id).field("dir", &self.dir).finish_non_exhaustive()
    }
}

/// Marks a store busy for the lifetime of an ingest.
pub struct IngestGuard {
    handle: Arc<StoreHandle>,
}

impl Drop for IngestGuard {
    fn drop(&mut self) {
        self.handle.ingesting.store(false, Ordering::Release);
    }
}

impl IngestGuard {
    /// Feeds NDJSON lines through a streaming ingest session. Stops at the
    /// first bad line or read error; closed clips stay committed.
    pub fn run<I>(self, lines: I) -> IngestOutcome
    where
        I: IntoIterator<Item = Result<String, ServiceError>>,
    {
        let h = &self.handle;
        let mut store = PyramidStore::clone(&h.current());
        store.enable_journal();
        let mut summary = IngestSummary::default();
        let mut error = None;
        let pipeline = IngestPipeline::new(&h.adapters, h.config.ingest);
        let done = pipeline.last_window(&store);
        let clip_len = h.config.ingest.clip_len;
        let reports = match pipeline.session(&mut store) {
            Err(e) => {
                error = Some(e.into());
                Vec::new()
            }
            Ok(mut session) => {
                for (n, line) in lines.into_iter().enumerate() {
                    let pushed = line.and_then(|line| {
                        if line.trim().is_empty() {
                            return Ok(());
                        }
                        let event = parse_event(&line).map_err(|message| IngestError::InvalidEvent { line: n + 1, message })?;
                        summary.events += 1;
                        if done.is_some_and(|d| ((event.t / clip_len).floor() as u64) <= d) {
                            summary.skipped += 1;
                        }
                        session.push(event)?;
                        Ok(())
                    });
                    if let Err(e) = pushed {
                        error = Some(e);
                        break;
                    }
                }
                if error.is_some() {
                    session.abandon()
                } else {
                    let so_far = session.reports().to_vec();
                    session.finish().unwrap_or_else(|e| {
                        error = Some(e.into());
                        so_far
                    })
                }
            }
        };
        summary.add(&reports);
        if summary.skipped > 0 {
            summary.warnings.push(format!(
                "{} event(s) fall in windows up to {} that were already committed; skipped",
                summary.skipped,
                done.unwrap_or_default()
            ));
        }
        if let Err(e) = h.commit(store, &mut summary) {
            error.get_or_insert(e);
        }
        IngestOutcome { summary, error }
    }
}

impl StoreHandle {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn current(&self) -> Arc<PyramidStore> {
        self.store.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Claims the store for ingestion; a second concurrent claim conflicts.
    pub fn begin_ingest(self: &Arc<Self>) -> Result<IngestGuard, ServiceError> {
        if self.ingesting.swap(true, Ordering::AcqRel) {
            return Err(ServiceError::Conflict(format!("store {} is already ingesting", self.id)));
        }
        Ok(IngestGuard { handle: self.clone() })
    }

    /// Journals, snapshots and publishes an ingested store.
    fn commit(&self, mut store: PyramidStore, summary: &mut IngestSummary) -> Result<(), ServiceError> {
        summary.last_window = IngestPipeline::new(&self.adapters, self.config.ingest).last_window(&store);
        summary.global_version = store.global().version;
        let events = store.drain_events();
        if events.is_empty() {
            return Ok(());
        }
        let log_path = self.dir.join(LOG_FILE);
        let mut log = EventLog::open(&log_path)?;
        log.append(&events)?;
        store.save(self.dir.join(SNAPSHOT_FILE))?;
        info!(store = %self.id, clips = summary.clips, facts = summary.facts, "ingest committed");
        *self.store.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(store);
        Ok(())
    }

    pub fn query(&self, query: &Query) -> Result<AnswerResult, ServiceError> {
        if query.question.trim().is_empty() {
            return Err(ServiceError::invalid("query", "question", "must not be empty"));
        }
        if query.k == Some(0) {
            return Err(ServiceError::invalid("query", "k", "must be at least 1"));
        }
        if query.max_turns == Some(0) {
            return Err(ServiceError::invalid("query", "max_turns", "must be at least 1"));
        }
        let store = self.current();
        let started = Instant::now();
        let result = Reasoner::new(&store, &self.adapters, self.config.reasoner).answer(query)?;
        self.append_trace(query, &result, started.elapsed().as_secs_f64());
        Ok(result)
    }

    fn append_trace(&self, query: &Query, result: &AnswerResult, latency: f64) {
        let at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        let line = match serde_json::to_string(&TraceLine {
            at,
            latency,
            query,
            result,
        }) {
            Ok(l) => l,
            Err(e) => return warn!("trace not serialized: {e}"),
        };
        let _lock = self.traces.lock().unwrap_or_else(|e| e.into_inner());
        let path = self.dir.join(TRACE_FILE);
        if let (Some(max), Ok(meta)) = (self.trace_max_bytes, fs::metadata(&path)) {
            if meta.len() + line.len() as u64 > max {
                let _ = fs::rename(&path, self.dir.join(format!("{TRACE_FILE}.1")));
            }
        }
        let written = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .and_then(|mut f| writeln!(f, "{line}").and_then(|_| f.flush()));
        if let Err(e) = written {
            warn!("trace not written to {}: {e}", path.display());
        }
    }

    pub fn stats(&self) -> GraphStats {
        self.current().stats()
    }

    pub fn persons(&self) -> Vec<PersonEntity> {
        self.current().persons().persons().cloned().collect()
    }

    /// A node with its outgoing links (inside the node) and incoming sources.
    pub fn node(&self, raw: &str) -> Result<Value, ServiceError> {
        let store = self.current();
        let id = NodeId::new(raw);
        let missing = || ServiceError::NotFound(format!("node {raw}"));
        let (level, node) = match id.level() {
            Some(Level::Fact) => ("fact", serde_json::to_value(store.fact(&id).ok_or_else(missing)?)),
            Some(Level::Clip) => ("clip", serde_json::to_value(store.clip(&id).ok_or_else(missing)?)),
            Some(Level::Global) if store.global().id == id => ("global", serde_json::to_value(store.global())),
            _ => return Err(missing()),
        };
        let node = node.map_err(|e| ServiceError::Internal(e.to_string()))?;
        Ok(json!({ "id": id, "level": level, "node": node, "incoming": store.incoming(&id) }))
    }

    /// Resolves a media request to a local file: a file under the store's
    /// media directory, or a keyframe URI the store references.
    pub fn media_file(&self, rel: &str) -> Result<PathBuf, ServiceError> {
        let missing = || ServiceError::NotFound(format!("media {rel}"));
        let rel_path = Path::new(rel);
        if rel.is_empty() || !rel_path.components().all(|c| matches!(c, Component::Normal(_))) {
            return Err(missing());
        }
        let local = self.dir.join(MEDIA_DIR).join(rel_path);
        if local.is_file() {
            return Ok(local);
        }
        let store = self.current();
        let wanted = [rel.to_string(), format!("/{rel}"), format!("file:///{rel}")];
        let referenced = store
            .facts()
            .flat_map(|f| f.keyframes.iter())
            .find(|k| wanted.contains(&k.uri))
            .map(|k| PathBuf::from(k.uri.strip_prefix("file://").unwrap_or(&k.uri)));
        match referenced {
            Some(p) if p.is_file() => Ok(p),
            _ => Err(missing()),
        }
    }

    pub fn info(&self) -> StoreInfo {
        StoreInfo {
            id: self.id.clone(),
            config: self.config.clone(),
            stats: self.stats(),
        }
    }
}

pub struct Registry {
    root: PathBuf,
    defaults: EngineConfig,
    trace_max_bytes: Option<u64>,
    open: RwLock<BTreeMap<String, Arc<StoreHandle>>>,
    /// Serializes store creation.
    creating: Mutex<()>,
}

impl Registry {
    pub fn new(root: impl Into<PathBuf>, defaults: EngineConfig) -> Result<Self, ServiceError> {
        let root = root.into();
        defaults.validate()?;
        fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
        Ok(Self {
            root,
            defaults,
            trace_max_bytes: None,
            open: RwLock::default(),
            creating: Mutex::default(),
        })
    }

    /// Rotates a store's trace log to `traces.log.1` past this size.
    pub fn with_trace_limit(mut self, max_bytes: Option<u64>) -> Self {
        self.trace_max_bytes = max_bytes;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn defaults(&self) -> &EngineConfig {
        &self.defaults
    }

    pub fn list(&self) -> Result<Vec<String>, ServiceError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(|e| io_err(&self.root, e))? {
            let entry = entry.map_err(|e| io_err(&self.root, e))?;
            if entry.path().join(CONFIG_FILE).is_file() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn create(&self, request: CreateRequest) -> Result<Arc<StoreHandle>, ServiceError> {
        let mut config = serde_json::to_value(&self.defaults).map_err(|e| ServiceError::Internal(e.to_string()))?;
        if let Some(patch) = request.config {
            if !patch.is_object() {
                return Err(ServiceError::invalid("config", "config", "expected an object"));
            }
            merge(&mut config, patch);
        }
        let config: EngineConfig = decode_json("config", config.to_string().as_bytes())?;
        config.validate()?;

        let _lock = self.creating.lock().unwrap_or_else(|e| e.into_inner());
        let id = match request.id {
            Some(id) => id,
            None => self.next_free_id()?,
        };
        validate_store_id(&id)?;
        let dir = self.root.join(&id);
        if dir.exists() {
            return Err(ServiceError::Conflict(format!("store {id} already exists")));
        }
        fs::create_dir_all(dir.join(MEDIA_DIR)).map_err(|e| io_err(&dir, e))?;
        let text = toml::to_string(&config).map_err(|e| ServiceError::Internal(format!("config: {e}")))?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        PyramidStore::new(config.dim)?.save(dir.join(SNAPSHOT_FILE))?;
        info!(store = %id, "created");
        self.open(&id)
    }

    fn next_free_id(&self) -> Result<String, ServiceError> {
        let taken = self.list()?;
        Ok((1..)
            .map(|n| format!("store-{n}"))
            .find(|id| !taken.contains(id) && !self.root.join(id).exists())
            .expect("unbounded search"))
    }

    /// The open handle for `id`, loading it from disk on first use.
    pub fn open(&self, id: &str) -> Result<Arc<StoreHandle>, ServiceError> {
        if let Some(h) = self.open.read().unwrap_or_else(|e| e.into_inner()).get(id) {
            return Ok(h.clone());
        }
        validate_store_id(id).map_err(|_| ServiceError::NotFound(format!("store {id}")))?;
        let mut open = self.open.write().unwrap_or_else(|e| e.into_inner());
        if let Some(h) = open.get(id) {
            return Ok(h.clone());
        }
        let dir = self.root.join(id);
        let config_path = dir.join(CONFIG_FILE);
        if !config_path.is_file() {
            return Err(ServiceError::NotFound(format!("store {id}")));
        }
        let text = fs::read_to_string(&config_path).map_err(|e| io_err(&config_path, e))?;
        let mut config: EngineConfig =
            toml::from_str(&text).map_err(|e| ServiceError::invalid("config", CONFIG_FILE, e.to_string()))?;
        config.apply_env(|k| std::env::var(k).ok())?;
        let adapters = config.build_adapters()?;
        let store = PyramidStore::recover(Some(&dir.join(SNAPSHOT_FILE)), &dir.join(LOG_FILE), config.dim)?;
        if store.dim() != config.dim {
            return Err(ServiceError::invalid(
                "config",
                "dim",
                format!("store holds {}-d embeddings, config says {}", store.dim(), config.dim),
            ));
        }
        let handle = Arc::new(StoreHandle {
            id: id.to_string(),
            dir,
            config,
            adapters,
            store: RwLock::new(Arc::new(store)),
            ingesting: AtomicBool::new(false),
            traces: Mutex::default(),
            trace_max_bytes: self.trace_max_bytes,
        });
        open.insert(id.to_string(), handle.clone());
        Ok(handle)
    }
}
