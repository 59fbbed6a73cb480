use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use pyramem_bench::{generate_workload, run_ablation, AblationOptions, Variant, WorkloadSpec};
use pyramem_core::config::EngineConfig;
use pyramem_core::{AnswerResult, Query};
use serde::Serialize;
use serde_json::json;

use crate::error::ServiceError;
use crate::http::{self, AppState};
use crate::registry::{service_defaults, CreateRequest, Registry};

pub const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  internal error
  2  usage error
  3  I/O error (missing or unreadable file, data directory)
  4  store, node, workload or media not found
  5  invalid input (payload, stream line, configuration)
  6  conflict (store exists, ingest already running)
  7  adapter failure (remote model unreachable or malformed output)";

#[derive(Debug, Parser)]
#[command(name = "pyramem", version, about = "Hierarchical memory stores with iterative graph retrieval", after_help = EXIT_CODES)]
pub struct Cli {
    /// Directory holding one subdirectory per store.
    #[arg(long, global = true, env = "PYRAMEM_DATA", default_value = "pyramem-data")]
    pub data_dir: PathBuf,
    /// TOML file with engine defaults for new stores.
    #[arg(long, global = true, env = "PYRAMEM_CONFIG")]
    pub config: Option<PathBuf>,
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create an empty store.
    Create(CreateArgs),
    /// Ingest an NDJSON event stream ({"t": seconds, "text": ..., "media": uri?} per line).
    Ingest(IngestArgs),
    /// Answer a question from a store.
    Query(QueryArgs),
    /// Inspect stored objects.
    Inspect {
        #[command(subcommand)]
        what: Inspect,
    },
    /// Node counts per level and link histogram.
    Stats(StoreArg),
    /// Person entities of a store.
    Persons(StoreArg),
    /// Run the ablation grid on a synthetic workload.
    Bench(BenchArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct StoreArg {
    #[arg(long)]
    pub store: String,
}

#[derive(Debug, Args)]
pub struct CreateArgs {
    /// Store id; a free `store-N` when omitted.
    pub id: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub clip_len: Option<f64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub store: String,
    #[arg(long)]
    pub stream: PathBuf,
    /// Clip length in seconds; creates the store when missing, must match otherwise.
    #[arg(long)]
    pub clip_len: Option<f64>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub store: String,
    #[arg(long)]
    pub question: String,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub max_turns: Option<u32>,
    /// Print every turn (JSON output always carries the trace).
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Subcommand)]
pub enum Inspect {
    /// A node with its links.
    Node {
        #[arg(long)]
        store: String,
        node: String,
    },
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Preset (hop2, distractor, mixed) or a JSON workload spec file.
    #[arg(long, default_value = "hop2")]
    pub workload: String,
    /// `all` or a comma-separated list of variant names.
    #[arg(long, default_value = "all")]
    pub variants: String,
    /// CSV output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Injected answerer delay per context node, in milliseconds.
    #[arg(long, default_value_t = 0.0)]
    pub node_delay_ms: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Static bearer token required on every endpoint except /healthz.
    #[arg(long, env = "PYRAMEM_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    /// Rotate a store's trace log past this many bytes.
    #[arg(long)]
    pub trace_max_bytes: Option<u64>,
}

/// Engine defaults: service defaults, then the config file, then `PYRAMEM_*`
/// environment overrides.
pub fn engine_defaults(config: Option<&PathBuf>) -> Result<EngineConfig, ServiceError> {
    let mut base = service_defaults();
    if let Some(path) = config {
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Io(format!("{}: {e}", path.display())))?;
        let mut merged = toml::Table::try_from(&base).map_err(|e| ServiceError::Internal(e.to_string()))?;
        let patch: toml::Table =
            toml::from_str(&text).map_err(|e| ServiceError::invalid("config", path.display().to_string(), e.to_string()))?;
        overlay(&mut merged, patch);
        base = merged
            .try_into()
            .map_err(|e: toml::de::Error| ServiceError::invalid("config", path.display().to_string(), e.to_string()))?;
    }
    base.apply_env(|k| std::env::var(k).ok())?;
    base.validate()?;
    Ok(base)
}

fn overlay(base: &mut toml::Table, patch: toml::Table) {
    for (k, v) in patch {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(p)) => overlay(b, p),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn emit<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), ServiceError> {
    let text = serde_json::to_string(value).map_err(|e| ServiceError::Internal(e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| ServiceError::Io(e.to_string()))
}

fn say(out: &mut dyn Write, text: impl AsRef<str>) -> Result<(), ServiceError> {
    writeln!(out, "{}", text.as_ref()).map_err(|e| ServiceError::Io(e.to_string()))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), ServiceError> {
    let defaults = engine_defaults(cli.config.as_ref())?;
    let registry = Registry::new(&cli.data_dir, defaults)?;
    match cli.command {
        Command::Create(args) => {
            let mut config = serde_json::Map::new();
            if let Some(d) = args.dim {
                config.insert("dim".into(), json!(d));
            }
            if let Some(s) = args.seed {
                config.insert("seed".into(), json!(s));
            }
            if let Some(c) = args.clip_len {
                config.insert("ingest".into(), json!({ "clip_len": c }));
            }
            let handle = registry.create(CreateRequest {
                id: args.id,
                config: Some(config.into()),
            })?;
            if cli.json {
                emit(out, &handle.info())
            } else {
                say(out, format!("created store {} in {}", handle.id(), registry.root().display()))
            }
        }
        Command::Ingest(args) => ingest(&registry, args, cli.json, out),
        Command::Query(args) => {
            let handle = registry.open(&args.store)?;
            let query = Query {
                question: args.question,
                options: None,
                k: args.k,
                max_turns: args.max_turns,
            };
            let result = handle.query(&query)?;
            if cli.json {
                emit(out, &result)
            } else {
                print_answer(out, &result, args.trace)
            }
        }
        Command::Inspect {
            what: Inspect::Node { store, node },
        } => {
            let view = registry.open(&store)?.node(&node)?;
            if cli.json {
                emit(out, &view)
            } else {
                say(out, serde_json::to_string_pretty(&view).unwrap_or_default())
            }
        }
        Command::Stats(StoreArg { store }) => {
            let stats = registry.open(&store)?.stats();
            if cli.json {
                return emit(out, &stats);
            }
            say(out, format!("facts {}  clips {}  globals {}  persons {}", stats.facts, stats.clips, stats.globals, stats.persons))?;
            say(out, format!("global version {} ({} clips integrated)", stats.global_version, stats.clips_integrated))?;
            for (kind, n) in &stats.links {
                say(out, format!("  {kind:<10} {n}"))?;
            }
            Ok(())
        }
        Command::Persons(StoreArg { store }) => {
            let persons = registry.open(&store)?.persons();
            if cli.json {
                return emit(out, &json!({ "persons": persons }));
            }
            for p in persons {
                say(out, format!("{}  {} observations  {} evidence facts", p.person_id, p.observation_count, p.evidence.len()))?;
            }
            Ok(())
        }
        Command::Bench(args) => bench(args, cli.json, out),
        Command::Serve(args) => serve(registry, args),
    }
}

fn ingest(registry: &Registry, args: IngestArgs, json_out: bool, out: &mut dyn Write) -> Result<(), ServiceError> {
    let file = File::open(&args.stream).map_err(|e| ServiceError::Io(format!("{}: {e}", args.stream.display())))?;
    let handle = match registry.open(&args.store) {
        Ok(h) => h,
        Err(ServiceError::NotFound(_)) => registry.create(CreateRequest {
            id: Some(args.store.clone()),
            config: args.clip_len.map(|c| json!({ "ingest": { "clip_len": c } })),
        })?,
        Err(e) => return Err(e),
    };
    if let Some(c) = args.clip_len {
        let configured = handle.config().ingest.clip_len;
        if c != configured {
            return Err(ServiceError::invalid(
                "arguments",
                "clip-len",
                format!("store {} segments into {configured} s clips", handle.id()),
            ));
        }
    }
    let lines = BufReader::new(file)
        .lines()
        .map(|l| l.map_err(|e| ServiceError::Io(format!("{}: {e}", args.stream.display()))));
    let outcome = handle.begin_ingest()?.run(lines);
    if json_out {
        emit(out, &outcome.summary)?;
    } else {
        let s = &outcome.summary;
        say(
            out,
            format!(
                "{} events -> {} clips, {} facts, {} links ({} cross-clip), {} new persons; last window {}",
                s.events,
                s.clips,
                s.facts,
                s.links,
                s.cross_clip_links,
                s.persons_created,
                s.last_window.map_or("none".into(), |w| w.to_string())
            ),
        )?;
    }
    outcome.error.map_or(Ok(()), Err)
}

fn print_answer(out: &mut dyn Write, r: &AnswerResult, trace: bool) -> Result<(), ServiceError> {
    say(out, format!("answer: {}", r.answer.as_deref().unwrap_or("(none)")))?;
    say(
        out,
        format!(
            "terminated by {} after {} turn(s); {} node(s) in context",
            serde_json::to_value(r.terminated_by).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
            r.turns_used,
            r.context_final.nodes.len()
        ),
    )?;
    if trace {
        for t in &r.context_final.trace {
            say(out, format!("  turn {}: {:?}; expanded {}, kept {}", t.turn, t.verdict, t.expanded.len(), t.pruned_in.len()))?;
            for w in &t.warnings {
                say(out, format!("    warning: {w}"))?;
            }
        }
    }
    Ok(())
}

fn bench(args: BenchArgs, json_out: bool, out: &mut dyn Write) -> Result<(), ServiceError> {
    let mut spec = WorkloadSpec::resolve(&args.workload)?;
    if let Some(n) = args.tasks {
        spec.tasks = n;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let variants = Variant::parse_list(&args.variants)?;
    if !(args.node_delay_ms.is_finite() && args.node_delay_ms >= 0.0) {
        return Err(ServiceError::invalid("arguments", "node-delay-ms", "must be a non-negative number"));
    }
    let mut options = AblationOptions {
        per_node_delay: Duration::from_secs_f64(args.node_delay_ms / 1000.0),
        ..AblationOptions::default()
    };
    if let Some(w) = args.workers {
        options.workers = w.max(1);
    }
    let tasks = generate_workload(&spec)?;
    let table = run_ablation(&tasks, &variants, &options)?;
    if let Some(path) = &args.out {
        let file = File::create(path).map_err(|e| ServiceError::Io(format!("{}: {e}", path.display())))?;
        table.write_csv(file)?;
    }
    if json_out {
        emit(out, &table)
    } else {
        say(out, table.format().trim_end())
    }
}

fn serve(registry: Registry, args: ServeArgs) -> Result<(), ServiceError> {
    let registry = Arc::new(registry.with_trace_limit(args.trace_max_bytes));
    let runtime = tokio::runtime::Runtime::new().map_err(|e| ServiceError::Io(e.to_string()))?;
    runtime.block_on(async move {
        let listener = http::bind(args.addr).await?;
        let state = AppState {
            registry,
            token: args.token.filter(|t| !t.is_empty()),
        };
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        http::serve(state, listener, shutdown).await.map_err(|e| ServiceError::Io(e.to_string()))
    })
}
