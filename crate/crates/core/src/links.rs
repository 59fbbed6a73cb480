//! Sparse relational links between facts, and the cross-clip links they induce.
//!
//! For each new fact the most similar *historical* facts (inserted earlier)
//! are retrieved as candidates; a [`LinkJudge`] decides which of them to link.
//! Judge output is treated as untrusted: unknown targets are dropped, weights
//! clamped, and unparseable output yields no links.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::adapters::parse::parse_link_judgement;
use crate::adapters::{LinkFact, LinkJudge};
use crate::exec::{self, Execution};
use crate::index::ScoredHit;
use crate::store::{PyramidStore, StoreError};
use crate::types::{format_timestamp, FactNode, Level, Link, LinkKind, NodeId};

pub const DEFAULT_K_LINK: usize = 10;

/// Candidates retrieved for one fact and the links judged among them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkProposal {
    pub source: NodeId,
    pub candidates: Vec<ScoredHit>,
    pub judged: Vec<Link>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Top-`k_link` facts inserted before `fact`, by cosine similarity.
pub fn propose_candidates(
    store: &PyramidStore,
    fact: &NodeId,
    k_link: usize,
) -> Result<Vec<ScoredHit>, StoreError> {
    let position = store
        .fact_position(fact)
        .ok_or_else(|| StoreError::NotFound(fact.clone()))?;
    let entry = store
        .index()
        .get(fact)
        .ok_or_else(|| StoreError::NotFound(fact.clone()))?;
    let hits = store.index().top_k_filtered(&entry.vector, k_link, |e| {
        e.level == Level::Fact && store.fact_position(&e.id).is_some_and(|p| p < position)
    })?;
    Ok(hits)
}

pub fn link_fact(f: &FactNode) -> LinkFact {
    LinkFact {
        node_id: f.id.clone(),
        text: f.text.clone(),
        timestamp: format_timestamp(f.span.start),
    }
}

/// Asks the judge about `candidates` and keeps only well-formed links to them.
pub fn judge(
    store: &PyramidStore,
    fact: &NodeId,
    candidates: Vec<ScoredHit>,
    judge: &dyn LinkJudge,
) -> Result<LinkProposal, StoreError> {
    let source = store.fact(fact).ok_or_else(|| StoreError::NotFound(fact.clone()))?;
    let mut proposal = LinkProposal {
        source: fact.clone(),
        candidates,
        judged: Vec::new(),
        warnings: Vec::new(),
    };
    if proposal.candidates.is_empty() {
        return Ok(proposal);
    }
    let shown: Vec<LinkFact> = proposal
        .candidates
        .iter()
        .filter_map(|h| store.fact(&h.id).map(link_fact))
        .collect();
    let raw = match judge.judge(&link_fact(source), &shown) {
        Ok(raw) => raw,
        Err(e) => {
            proposal.warnings.push(format!("link judge failed for {fact}: {e}"));
            return Ok(proposal);
        }
    };
    let judged = match parse_link_judgement(&raw) {
        Ok(j) => j,
        Err(e) => {
            proposal.warnings.push(format!("unparseable link judgement for {fact}: {e}"));
            return Ok(proposal);
        }
    };
    let allowed: HashSet<&str> = proposal.candidates.iter().map(|h| h.id.as_str()).collect();
    let mut seen = HashSet::new();
    for j in judged {
        if !allowed.contains(j.target.as_str()) {
            proposal
                .warnings
                .push(format!("dropped link {fact} -> {}: not a candidate", j.target));
            continue;
        }
        if seen.insert(j.target.clone()) {
            proposal.judged.push(Link::new(
                NodeId::new(j.target),
                j.description,
                j.weight,
                LinkKind::Relational,
            ));
        }
    }
    Ok(proposal)
}

/// Creates the clip-level link implied by a relational fact link, unless the
/// facts share a clip or the clip pair is already linked.
pub fn induce_cross_clip_link(
    store: &mut PyramidStore,
    source_fact: &NodeId,
    fact_link: &Link,
) -> Result<Option<Link>, StoreError> {
    if fact_link.kind != LinkKind::Relational {
        return Ok(None);
    }
    let from = &store
        .fact(source_fact)
        .ok_or_else(|| StoreError::NotFound(source_fact.clone()))?
        .clip_id;
    let to = &store
        .fact(&fact_link.target)
        .ok_or_else(|| StoreError::NotFound(fact_link.target.clone()))?
        .clip_id;
    if from == to {
        return Ok(None);
    }
    let (from, to) = (from.clone(), to.clone());
    let link = Link::new(
        to,
        format!("{source_fact} -> {}: {}", fact_link.target, fact_link.description),
        fact_link.weight,
        LinkKind::CrossClip,
    );
    let added = store.attach_links(&from, vec![link.clone()])?;
    Ok((added == 1).then_some(link))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub links: usize,
    pub cross_clip_links: usize,
    pub proposals: Vec<LinkProposal>,
    pub warnings: Vec<String>,
}

/// Links a batch of freshly inserted facts. Retrieval and judging run in
/// parallel; attachment happens in fact order.
pub fn build_links(
    store: &mut PyramidStore,
    facts: &[NodeId],
    link_judge: &dyn LinkJudge,
    k_link: usize,
    execution: Execution,
) -> Result<LinkReport, StoreError> {
    let shared: &PyramidStore = store;
    let proposals = exec::map_slice(execution, facts, |id| {
        let candidates = propose_candidates(shared, id, k_link)?;
        judge(shared, id, candidates, link_judge)
    });
    let mut report = LinkReport::default();
    for proposal in proposals {
        let proposal = proposal?;
        for w in &proposal.warnings {
            warn!("{w}");
        }
        report.warnings.extend(proposal.warnings.iter().cloned());
        report.links += store.attach_links(&proposal.source, proposal.judged.clone())?;
        for link in &proposal.judged {
            if induce_cross_clip_link(store, &proposal.source, link)?.is_some() {
                report.cross_clip_links += 1;
            }
        }
        report.proposals.push(proposal);
    }
    Ok(report)
}
