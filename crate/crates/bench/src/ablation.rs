//! Runs every variant over a workload with the oracle adapters.
//!
//! Each task is ingested once into its own store; every variant then queries
//! that store. Latency is wall-clock time around one `answer()` call,
//! including the injected answerer delay.

use std::sync::Arc;
use std::time::{Duration, Instant};

use pyramem_core::adapters::scripted::{
    AppendingProfiler, ConcatUpdater, Delayed, EventExtractor, HashEmbedder, KeyFactAnswerer, KeywordLinkJudge,
    KeywordPruner,
};
use pyramem_core::exec::map_slice;
use pyramem_core::identity::SingleLinkage;
use pyramem_core::{
    Adapters, AnswerResult, Execution, IngestOptions, IngestPipeline, PyramidStore, Query, Reasoner, ReasonerConfig,
};
use serde::{Deserialize, Serialize};

use crate::report::{AblationRow, AblationTable, LatencyReport};
use crate::variant::Variant;
use crate::workload::{SyntheticTask, EVIDENCE_TAG, KEY_PREFIX, LINK_PREFIX};
use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationOptions {
    /// Worker threads; 1 runs everything on the calling thread.
    pub workers: usize,
    /// Fixed answerer delay per assessment.
    pub base_delay: Duration,
    /// Answerer delay per passage in context.
    pub per_node_delay: Duration,
    pub dim: usize,
    pub embed_seed: u64,
    pub reasoner: ReasonerConfig,
}

impl Default for AblationOptions {
    fn default() -> Self {
        Self {
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            base_delay: Duration::ZERO,
            per_node_delay: Duration::ZERO,
            dim: 128,
            embed_seed: 17,
            reasoner: ReasonerConfig {
                record_timing: false,
                ..ReasonerConfig::default()
            },
        }
    }
}

impl AblationOptions {
    fn execution(&self) -> Execution {
        if self.workers > 1 {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Oracle adapters: `#link-N` tags decide links, the pruner keeps
/// `#evidence` facts, and the answerer commits exactly when a passage quotes
/// the `key:` answer.
pub fn oracle_adapters(options: &AblationOptions) -> Adapters {
    Adapters {
        embedder: Arc::new(HashEmbedder::new(options.dim, options.embed_seed)),
        extractor: Arc::new(EventExtractor),
        judge: Arc::new(KeywordLinkJudge::with_prefix(LINK_PREFIX)),
        pruner: Arc::new(KeywordPruner::new([EVIDENCE_TAG])),
        answerer: Arc::new(Delayed::new(
            KeyFactAnswerer {
                prefix: KEY_PREFIX.to_string(),
            },
            options.base_delay,
            options.per_node_delay,
        )),
        updater: Arc::new(ConcatUpdater::default()),
        profiler: Arc::new(AppendingProfiler),
        clusterer: Arc::new(SingleLinkage::default()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task: usize,
    pub correct: bool,
    /// Seconds.
    pub latency: f64,
    pub context_size: usize,
    pub result: AnswerResult,
}

/// Ingests each task's stream into a fresh store.
pub fn ingest_tasks(
    tasks: &[SyntheticTask],
    adapters: &Adapters,
    options: &AblationOptions,
) -> Result<Vec<PyramidStore>, BenchError> {
    let ingest = IngestOptions {
        execution: Execution::Sequential,
        ..IngestOptions::default()
    };
    let pipeline = IngestPipeline::new(adapters, ingest);
    with_workers(options.workers, || {
        map_slice(options.execution(), tasks, |task| {
            let mut store = PyramidStore::new(options.dim)?;
            pipeline.ingest(&mut store, &task.stream)?;
            Ok(store)
        })
        .into_iter()
        .collect()
    })
}

/// Queries every store with one variant.
pub fn run_variant(
    tasks: &[SyntheticTask],
    stores: &[PyramidStore],
    variant: Variant,
    adapters: &Adapters,
    options: &AblationOptions,
) -> Result<Vec<TaskOutcome>, BenchError> {
    assert_eq!(tasks.len(), stores.len(), "one store per task");
    let config = variant.reasoner_config(options.reasoner);
    let indexed: Vec<usize> = (0..tasks.len()).collect();
    with_workers(options.workers, || {
        map_slice(options.execution(), &indexed, |&i| {
            let reasoner = Reasoner::new(&stores[i], adapters, config);
            let started = Instant::now();
            let result = reasoner.answer(&Query::new(tasks[i].question.as_str()))?;
            let latency = started.elapsed().as_secs_f64();
            Ok(TaskOutcome {
                task: i,
                correct: result.answer.as_deref() == Some(tasks[i].gold.as_str()),
                latency,
                context_size: result.context_final.nodes.len(),
                result,
            })
        })
        .into_iter()
        .collect()
    })
}

pub fn summarize(variant: Variant, outcomes: &[TaskOutcome]) -> AblationRow {
    let durations: Vec<f64> = outcomes.iter().map(|o| o.latency).collect();
    let correct = outcomes.iter().filter(|o| o.correct).count();
    let latency = LatencyReport::from_samples(&durations, correct).unwrap_or(LatencyReport {
        accuracy: 0.0,
        p50: 0.0,
        p95: 0.0,
        mean: 0.0,
    });
    let n = outcomes.len().max(1) as f64;
    AblationRow {
        variant: variant.name(),
        tasks: outcomes.len(),
        accuracy: latency.accuracy,
        latency,
        mean_context_size: outcomes.iter().map(|o| o.context_size as f64).sum::<f64>() / n,
    }
}

pub fn run_ablation(
    tasks: &[SyntheticTask],
    variants: &[Variant],
    options: &AblationOptions,
) -> Result<AblationTable, BenchError> {
    let adapters = oracle_adapters(options);
    let stores = ingest_tasks(tasks, &adapters, options)?;
    let mut table = AblationTable::default();
    for &v in variants {
        let outcomes = run_variant(tasks, &stores, v, &adapters, options)?;
        table.rows.push(summarize(v, &outcomes));
    }
    Ok(table)
}

#[cfg(feature = "parallel")]
fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    if workers > 1 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            return pool.install(f);
        }
    }
    f()
}

#[cfg(not(feature = "parallel"))]
fn with_workers<R: Send>(_workers: usize, f: impl FnOnce() -> R + Send) -> R {
    f()
}
