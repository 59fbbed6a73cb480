//! Structure-guided iterative retrieval.
//!
//! A session retrieves seed facts by embedding similarity, prunes them, then
//! alternates sufficiency assessment with one-step expansion and pruning
//! until the answerer commits to an answer, expansion finds nothing new, or
//! the turn budget runs out. The evidence context only ever grows.

pub mod expand;

use std::collections::HashSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

pub use self::expand::EdgeRules;
use crate::adapters::parse::{parse_selection, parse_verdict};
use crate::adapters::{AdapterError, Adapters, Answerer, AssessRequest, Embedder, Passage, PruneRequest, Pruner};
use crate::index::ScoredHit;
use crate::store::PyramidStore;
use crate::types::{Level, NodeId, Verdict};

pub const DEFAULT_K_SEED: usize = 20;
pub const DEFAULT_MAX_TURNS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReasonerConfig {
    pub k_seed: usize,
    /// Maximum number of sufficiency assessments per session.
    pub max_turns: u32,
    pub traverse_undirected: bool,
    /// Prune the seed set before the first assessment.
    pub prune_seeds: bool,
    /// Prune expansion candidates; off keeps every candidate.
    pub prune: bool,
    pub hierarchy: bool,
    pub relational: bool,
    /// Pass the global summary to the pruner and answerer.
    pub global_context: bool,
    /// Level seeds are drawn from.
    pub seed_level: Level,
    /// Record wall-clock time per turn; off writes zeros so traces are reproducible.
    pub record_timing: bool,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        Self {
            k_seed: DEFAULT_K_SEED,
            max_turns: DEFAULT_MAX_TURNS,
            traverse_undirected: true,
            prune_seeds: true,
            prune: true,
            hierarchy: true,
            relational: true,
            global_context: true,
            seed_level: Level::Fact,
            record_timing: true,
        }
    }
}

impl ReasonerConfig {
    pub fn edge_rules(&self) -> EdgeRules {
        EdgeRules {
            hierarchy: self.hierarchy,
            relational: self.relational,
            undirected: self.traverse_undirected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_turns: Option<u32>,
}

impl Query {
    pub fn new(question: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            options: None,
            k: None,
            max_turns: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Sufficient,
    MaxTurns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: u32,
    pub verdict: Verdict,
    /// Candidates produced by expansion after this turn's assessment.
    pub expanded: Vec<NodeId>,
    /// The subset of `expanded` kept by pruning.
    pub pruned_in: Vec<NodeId>,
    /// Seconds spent in this turn.
    pub elapsed: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvidenceContext {
    pub nodes: Vec<NodeId>,
    pub frontier: Vec<NodeId>,
    pub turn: u32,
    /// Raw seed hits before pruning.
    pub seeds: Vec<ScoredHit>,
    pub trace: Vec<TurnRecord>,
}

impl EvidenceContext {
    fn extend(&mut self, retained: &[NodeId]) {
        self.nodes.extend(retained.iter().cloned());
        self.frontier = retained.to_vec();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResult {
    pub question: String,
    pub answer: Option<String>,
    pub turns_used: u32,
    pub terminated_by: Termination,
    pub context_final: EvidenceContext,
}

#[derive(Debug, Error)]
pub enum ReasonError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("{stage} adapter failed: {source}")]
    Adapter {
        stage: &'static str,
        source: AdapterError,
        /// Everything recorded before the failure.
        partial: Box<AnswerResult>,
    },
}

pub struct Reasoner<'a> {
    store: &'a PyramidStore,
    embedder: &'a dyn Embedder,
    pruner: &'a dyn Pruner,
    answerer: &'a dyn Answerer,
    config: ReasonerConfig,
}

impl<'a> Reasoner<'a> {
    pub fn new(store: &'a PyramidStore, adapters: &'a Adapters, config: ReasonerConfig) -> Self {
        Self::with_roles(
            store,
            adapters.embedder.as_ref(),
            adapters.pruner.as_ref(),
            adapters.answerer.as_ref(),
            config,
        )
    }

    pub fn with_roles(
        store: &'a PyramidStore,
        embedder: &'a dyn Embedder,
        pruner: &'a dyn Pruner,
        answerer: &'a dyn Answerer,
        config: ReasonerConfig,
    ) -> Self {
        Self {
            store,
            embedder,
            pruner,
            answerer,
            config,
        }
    }

    pub fn config(&self) -> &ReasonerConfig {
        &self.config
    }

    /// Top-`k` nodes of the seed level; the frontier is the whole seed set.
    pub fn seed_retrieve(&self, question: &str, k: usize) -> Result<EvidenceContext, AdapterError> {
        if self.store.index().is_empty() {
            return Ok(EvidenceContext::default());
        }
        let q = self.embedder.embed(question)?;
        let hits = self
            .store
            .index()
            .top_k_level(&q, k, self.config.seed_level)
            .map_err(|e| AdapterError::InvalidOutput(format!("query embedding: {e}")))?;
        let nodes: Vec<NodeId> = hits.iter().map(|h| h.id.clone()).collect();
        Ok(EvidenceContext {
            frontier: nodes.clone(),
            nodes,
            turn: 0,
            seeds: hits,
            trace: Vec::new(),
        })
    }

    fn passages(&self, ids: &[NodeId]) -> Vec<Passage> {
        ids.iter().filter_map(|id| expand::passage(self.store, id)).collect()
    }

    fn context_summary(&self) -> String {
        if self.config.global_context {
            self.store.global().summary.clone()
        } else {
            String::new()
        }
    }

    /// One sufficiency check. Output without a usable marker counts as Expand.
    pub fn assess(
        &self,
        query: &Query,
        ctx: &EvidenceContext,
    ) -> Result<(Verdict, Option<String>), AdapterError> {
        let passages = self.passages(&ctx.nodes);
        let request = AssessRequest {
            question: query.question.clone(),
            context_summary: self.context_summary(),
            character_profiles: expand::matched_profiles(self.store, &passages),
            passages,
            options: query.options.clone(),
            turn: ctx.turn,
        };
        let raw = self.answerer.assess(&request)?;
        Ok(match parse_verdict(&raw) {
            Ok(v) => (v, None),
            Err(e) => (Verdict::Expand, Some(format!("treated answer output as [Expand]: {e}"))),
        })
    }

    /// New candidates one hop from the frontier.
    pub fn expand(&self, ctx: &EvidenceContext) -> Vec<NodeId> {
        let context: HashSet<NodeId> = ctx.nodes.iter().cloned().collect();
        expand::expand(self.store, &context, &ctx.frontier, self.config.edge_rules())
    }

    /// Keeps the candidates the pruner selects. Any failure keeps everything.
    pub fn prune(&self, query: &Query, candidates: &[NodeId]) -> (Vec<NodeId>, Vec<String>) {
        if candidates.is_empty() {
            return (Vec::new(), Vec::new());
        }
        let passages = self.passages(candidates);
        let request = PruneRequest {
            question: query.question.clone(),
            context_summary: self.context_summary(),
            character_profiles: expand::matched_profiles(self.store, &passages),
            passages,
            options: query.options.clone(),
        };
        let raw = match self.pruner.select(&request) {
            Ok(raw) => raw,
            Err(e) => return (candidates.to_vec(), vec![format!("pruner failed, kept all candidates: {e}")]),
        };
        let mut warnings = Vec::new();
        match parse_selection(&raw, candidates.len()) {
            Ok(keep) => {
                let listed = crate::adapters::parse::parse_selection(&raw, usize::MAX).unwrap_or_default();
                if listed.len() > keep.len() {
                    warnings.push(format!(
                        "dropped {} out-of-range selection index(es)",
                        listed.len() - keep.len()
                    ));
                }
                // context order follows candidate order, not selection order
                let mut keep = keep;
                keep.sort_unstable();
                (keep.into_iter().map(|i| candidates[i].clone()).collect(), warnings)
            }
            Err(e) => (candidates.to_vec(), vec![format!("unparseable selection, kept all candidates: {e}")]),
        }
    }

    pub fn answer(&self, query: &Query) -> Result<AnswerResult, ReasonError> {
        let k = query.k.unwrap_or(self.config.k_seed);
        let max_turns = query.max_turns.unwrap_or(self.config.max_turns);
        if k == 0 {
            return Err(ReasonError::InvalidQuery("k must be at least 1".into()));
        }
        if max_turns == 0 {
            return Err(ReasonError::InvalidQuery("max_turns must be at least 1".into()));
        }
        let clock = Clock(self.config.record_timing);
        let mut started = clock.now();
        let fail = |stage: &'static str, source: AdapterError, ctx: EvidenceContext, turns: u32| {
            ReasonError::Adapter {
                stage,
                source,
                partial: Box::new(AnswerResult {
                    question: query.question.clone(),
                    answer: None,
                    turns_used: turns,
                    terminated_by: Termination::MaxTurns,
                    context_final: ctx,
                }),
            }
        };

        let mut ctx = self
            .seed_retrieve(&query.question, k)
            .map_err(|e| fail("embedder", e, EvidenceContext::default(), 0))?;
        let mut pending_warnings = Vec::new();
        if self.config.prune_seeds {
            let seeds = std::mem::take(&mut ctx.nodes);
            let (kept, warnings) = self.prune(query, &seeds);
            pending_warnings = warnings;
            ctx.nodes = kept.clone();
            ctx.frontier = kept;
        }

        let mut answer = None;
        let mut terminated_by = Termination::MaxTurns;
        let mut turns_used = 0;
        for turn in 0..max_turns {
            ctx.turn = turn;
            let assessed = self.assess(query, &ctx);
            turns_used += 1;
            let (verdict, parse_warning) = match assessed {
                Ok(v) => v,
                Err(e) => return Err(fail("answerer", e, ctx, turns_used)),
            };
            let mut record = TurnRecord {
                turn,
                verdict: verdict.clone(),
                expanded: Vec::new(),
                pruned_in: Vec::new(),
                elapsed: 0.0,
                warnings: std::mem::take(&mut pending_warnings),
            };
            record.warnings.extend(parse_warning);
            let mut stop = false;
            if let Verdict::Answer(text) = verdict {
                answer = Some(text);
                terminated_by = Termination::Sufficient;
                stop = true;
            } else if turn + 1 == max_turns {
                stop = true;
            } else {
                let expanded = self.expand(&ctx);
                if expanded.is_empty() {
                    // saturated: nothing new is reachable
                    stop = true;
                } else {
                    let (kept, warnings) = if self.config.prune {
                        self.prune(query, &expanded)
                    } else {
                        (expanded.clone(), Vec::new())
                    };
                    record.warnings.extend(warnings);
                    ctx.extend(&kept);
                    record.expanded = expanded;
                    record.pruned_in = kept;
                }
            }
            for w in &record.warnings {
                warn!(turn, "{w}");
            }
            record.elapsed = clock.since(started);
            started = clock.now();
            ctx.trace.push(record);
            if stop {
                break;
            }
        }
        Ok(AnswerResult {
            question: query.question.clone(),
            answer,
            turns_used,
            terminated_by,
            context_final: ctx,
        })
    }
}

#[derive(Clone, Copy)]
struct Clock(bool);

impl Clock {
    fn now(self) -> Option<Instant> {
        self.0.then(Instant::now)
    }

    fn since(self, start: Option<Instant>) -> f64 {
        start.map_or(0.0, |s| s.elapsed().as_secs_f64())
    }
}
