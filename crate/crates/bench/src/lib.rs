//! Ablation and latency harness for pyramem.
//!
//! [`workload`] plants multi-hop evidence chains in synthetic streams with
//! known answers, [`variant`] names the memory/search configurations,
//! [`ablation`] runs them with oracle adapters and [`report`] summarizes
//! accuracy, context size and nearest-rank latency percentiles.
//!
//! ```
//! use pyramem_bench::{generate_workload, run_ablation, AblationOptions, Variant, WorkloadSpec};
//!
//! let spec = WorkloadSpec { tasks: 4, hop_weights: vec![0.0, 0.0, 1.0], ..WorkloadSpec::default() };
//! let tasks = generate_workload(&spec).unwrap();
//! let table = run_ablation(&tasks, &[Variant::full(), Variant::no_expand()], &AblationOptions::default()).unwrap();
//! assert_eq!(table.row("full").unwrap().accuracy, 1.0);
//! assert_eq!(table.row("no-expand").unwrap().accuracy, 0.0);
//! ```

pub mod ablation;
pub mod report;
pub mod variant;
pub mod workload;

use thiserror::Error;

pub use ablation::{oracle_adapters, run_ablation, AblationOptions, TaskOutcome};
pub use report::{nearest_rank, AblationRow, AblationTable, LatencyReport};
pub use variant::{Memory, Variant};
pub use workload::{generate_workload, planted_identity_stream, SyntheticTask, WorkloadSpec};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("unknown workload `{0}`: not a preset (hop2, distractor, mixed) or a file")]
    UnknownWorkload(String),
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
    #[error(transparent)]
    Store(#[from] pyramem_core::StoreError),
    #[error(transparent)]
    Ingest(#[from] pyramem_core::IngestError),
    #[error(transparent)]
    Reason(#[from] pyramem_core::ReasonError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(String),
}
