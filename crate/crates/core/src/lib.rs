//! A three-level memory over long video streams (facts, clips, one global
//! summary), built incrementally from a timed event stream and queried by
//! iterative graph-guided retrieval.
//!
//! ```
//! use pyramem_core::{Adapters, IngestOptions, IngestPipeline, PyramidStore, Query, Reasoner, ReasonerConfig, StreamEvent};
//!
//! let adapters = Adapters::scripted(64, 0);
//! let mut store = PyramidStore::new(64).unwrap();
//! let events = vec![
//!     StreamEvent::new(3.0, "a kettle starts to whistle #kitchen"),
//!     StreamEvent::new(41.0, "someone left the stove on #kitchen key:stove"),
//! ];
//! IngestPipeline::new(&adapters, IngestOptions::default()).ingest(&mut store, &events).unwrap();
//! let out = Reasoner::new(&store, &adapters, ReasonerConfig::default())
//!     .answer(&Query::new("why is the kettle whistling"))
//!     .unwrap();
//! assert_eq!(out.answer.as_deref(), Some("stove"));
//! ```

pub mod adapters;
pub mod config;
pub mod exec;
pub mod identity;
pub mod index;
pub mod ingest;
pub mod links;
pub mod prompts;
pub mod reasoner;
pub mod snapshot;
pub mod store;
pub mod types;

pub use adapters::{AdapterConfig, AdapterError, AdapterKind, Adapters};
pub use config::EngineConfig;
pub use exec::Execution;
pub use identity::{IdentityBank, PersonEntity};
pub use index::{Embedding, EmbeddingIndex, ScoredHit};
pub use ingest::{IngestError, IngestOptions, IngestPipeline, IngestReport, StreamEvent};
pub use reasoner::{AnswerResult, EvidenceContext, Query, ReasonError, Reasoner, ReasonerConfig, Termination, TurnRecord};
pub use snapshot::{validate_graph, Snapshot, Violation};
pub use store::{GraphStats, PyramidStore, StoreError};
pub use types::{ClipNode, FactNode, GlobalNode, Level, Link, LinkKind, NodeId, TimeSpan, Verdict};
