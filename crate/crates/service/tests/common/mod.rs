#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;
use std::thread::JoinHandle;

use pyramem_service::cli::engine_defaults;
use pyramem_service::http::{self, AppState};
use pyramem_service::registry::Registry;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub const CLIP_LEN: f64 = 30.0;

/// Config for fixture stores: every earlier fact is a link candidate, so
/// the relational link set follows from shared tags alone.
pub fn fixture_config() -> Value {
    json!({ "ingest": { "clip_len": CLIP_LEN, "k_link": 10_000 } })
}

/// An NDJSON stream with its expected graph totals.
pub struct Fixture {
    pub ndjson: String,
    pub facts: usize,
    pub clips: usize,
    pub relational: usize,
    pub cross_clip: usize,
}

/// Events carry `#tags` drawn without repetition inside a clip, so links
/// only ever join facts of different clips.
pub fn fixture(seed: u64, clips: usize, max_events: usize, tag_pool: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<String> = (0..tag_pool).map(|i| format!("#tag{i}")).collect();
    let mut lines = Vec::new();
    // (clip, tags) per fact in arrival order
    let mut facts: Vec<(usize, BTreeSet<String>)> = Vec::new();
    let mut used = 0;
    for clip in 0..clips {
        // skipped windows leave no clip behind
        if clip > 0 && rng.random_bool(0.2) {
            continue;
        }
        used += 1;
        let n = rng.random_range(1..=max_events);
        let mut tags = pool.clone();
        tags.shuffle(&mut rng);
        let mut tags = tags.into_iter();
        for j in 0..n {
            let t = clip as f64 * CLIP_LEN + j as f64 * (CLIP_LEN / max_events as f64);
            let mine: BTreeSet<String> = tags.by_ref().take(rng.random_range(0..=1)).collect();
            let text = format!("event {clip}-{j} happens {}", mine.iter().cloned().collect::<Vec<_>>().join(" "));
            lines.push(json!({ "t": t, "text": text.trim_end() }).to_string());
            facts.push((clip, mine));
        }
    }
    let mut relational = 0;
    let mut pairs = BTreeSet::new();
    for (i, (ci, ti)) in facts.iter().enumerate() {
        for (cj, tj) in &facts[..i] {
            if !ti.is_disjoint(tj) {
                relational += 1;
                pairs.insert((*ci, *cj));
            }
        }
    }
    Fixture {
        ndjson: lines.join("\n") + "\n",
        facts: facts.len(),
        clips: used,
        relational,
        cross_clip: pairs.len(),
    }
}

/// Link histogram the fixture implies, hierarchical links counted both ways.
pub fn expected_links(f: &Fixture) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    m.insert("hier-up".to_string(), f.facts + f.clips);
    m.insert("hier-down".to_string(), f.facts + f.clips);
    m.insert("relational".to_string(), f.relational);
    m.insert("cross-clip".to_string(), f.cross_clip);
    m.retain(|_, v| *v > 0);
    m
}

pub fn links_of(stats: &Value) -> BTreeMap<String, usize> {
    let mut m: BTreeMap<String, usize> = serde_json::from_value(stats["links"].clone()).unwrap();
    m.retain(|_, v| *v > 0);
    m
}

pub struct Server {
    pub base: String,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Server {
    pub fn start(data: &Path, token: Option<&str>) -> Self {
        let registry = Arc::new(Registry::new(data, engine_defaults(None).unwrap()).unwrap());
        let state = AppState {
            registry,
            token: token.map(str::to_string),
        };
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let listener = http::bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                http::serve(state, listener, async {
                    let _ = rx.await;
                })
                .await
                .unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        Self {
            base: format!("http://{addr}"),
            shutdown: Some(tx),
            thread: Some(thread),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            t.join().unwrap();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.halt();
    }
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

/// (status, body text)
pub fn get(agent: &ureq::Agent, url: &str) -> (u16, String) {
    let mut r = agent.get(url).call().unwrap();
    (r.status().as_u16(), r.body_mut().read_to_string().unwrap())
}

pub fn post(agent: &ureq::Agent, url: &str, body: &str) -> (u16, String) {
    let mut r = agent.post(url).header("content-type", "application/json").send(body).unwrap();
    (r.status().as_u16(), r.body_mut().read_to_string().unwrap())
}

pub fn json_of(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|e| panic!("{e}: {text}"))
}

pub fn cli(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pyramem"))
        .arg("--data-dir")
        .arg(data)
        .args(args)
        .env_remove("PYRAMEM_DATA")
        .env_remove("PYRAMEM_TOKEN")
        .output()
        .unwrap()
}

pub fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}
