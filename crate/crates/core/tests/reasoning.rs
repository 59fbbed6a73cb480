mod common;

use std::collections::{BTreeSet, HashSet};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Mutex;

use common::{add_random_links, random_store, sentence, Adjacency};
use pyramem_core::adapters::scripted::{HashEmbedder, KeepAllPruner};
use pyramem_core::adapters::{AdapterError, AssessRequest, PruneRequest};
use pyramem_core::types::{Level, NodeId};
use pyramem_core::{Query, Reasoner, ReasonerConfig, Termination};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 32;

fn always_expand(_: &AssessRequest) -> Result<String, AdapterError> {
    Ok("Not enough yet. [Expand]".into())
}

#[test]
fn expansion_equals_bfs_closure_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xbf5);
    let emb = HashEmbedder::new(DIM, 11);
    let mut mismatches = 0;
    let mut multi_hop = 0;
    for graph in 0..60 {
        let clips = rng.random_range(1..=30);
        let mut store = random_store(&mut rng, clips, 5, DIM);
        let links = rng.random_range(0..=store.facts().len() * 2);
        add_random_links(&mut store, &mut rng, links, clips);
        let snapshot = store.snapshot();
        for rules in 0..8u8 {
            let (hierarchy, relational, undirected) = (rules & 1 != 0, rules & 2 != 0, rules & 4 != 0);
            let r = rng.random_range(1..=4u32);
            let config = ReasonerConfig {
                k_seed: rng.random_range(1..=6),
                max_turns: r + 1,
                hierarchy,
                relational,
                traverse_undirected: undirected,
                seed_level: if rng.random_bool(0.3) { Level::Clip } else { Level::Fact },
                record_timing: false,
                ..ReasonerConfig::default()
            };
            let reasoner = Reasoner::with_roles(&store, &emb, &KeepAllPruner, &always_expand, config);
            let out = reasoner.answer(&Query::new(sentence(&mut rng, 3))).unwrap();
            let seeds: Vec<NodeId> = out.context_final.seeds.iter().map(|h| h.id.clone()).collect();
            let oracle = Adjacency::from_snapshot(&snapshot, hierarchy, relational, undirected);
            let layers = oracle.layers(&seeds, r as usize);
            if layers.len() > 2 {
                multi_hop += 1;
            }
            let closure: BTreeSet<NodeId> = layers.iter().flatten().cloned().collect();
            let got: BTreeSet<NodeId> = out.context_final.nodes.iter().cloned().collect();
            let got_layers: Vec<BTreeSet<NodeId>> = out
                .context_final
                .trace
                .iter()
                .filter(|t| !t.pruned_in.is_empty())
                .map(|t| t.pruned_in.iter().cloned().collect())
                .collect();
            if got != closure || got_layers[..] != layers[1..] {
                mismatches += 1;
                eprintln!("graph {graph} rules {rules:03b} R={r}: got {got:?}, want {closure:?}");
            }
            assert_eq!(got.len(), out.context_final.nodes.len(), "context has duplicates");
        }
    }
    assert_eq!(mismatches, 0);
    assert!(multi_hop > 100, "only {multi_hop} multi-hop cases");
}

/// Verdicts and selections drawn from a seeded stream, including garbage
/// and failures.
struct Adversary {
    rng: Mutex<ChaCha8Rng>,
    assess_calls: AtomicU32,
    mode: u8,
}

impl Adversary {
    fn verdict(&self, request: &AssessRequest) -> Result<String, AdapterError> {
        self.assess_calls.fetch_add(1, Ordering::SeqCst);
        let mut rng = self.rng.lock().unwrap();
        Ok(match self.mode {
            0 => "[Expand]".to_string(),
            1 => "I cannot decide".to_string(),
            2 => ["[ANSWER", "ANSWER] x", "[expand", "", "[[Expand]]]"][rng.random_range(0..5)].to_string(),
            _ => match rng.random_range(0..4) {
                0 => format!("[ANSWER] {}", request.passages.len()),
                1 => "[Expand] then [ANSWER] late".to_string(),
                2 => "[ANSWER] early then [Expand]".to_string(),
                _ => "noise".to_string(),
            },
        })
    }

    fn selection(&self, request: &PruneRequest) -> Result<String, AdapterError> {
        let mut rng = self.rng.lock().unwrap();
        let n = request.passages.len() as i64;
        Ok(match rng.random_range(0..5) {
            0 => return Err(AdapterError::Unavailable("flaky".into())),
            1 => "no list".to_string(),
            2 => "[]".to_string(),
            _ => {
                let picks: Vec<String> = (0..rng.random_range(0..6))
                    .map(|_| rng.random_range(-2..n + 3).to_string())
                    .collect();
                format!("[{}]", picks.join(", "))
            }
        })
    }
}

#[test]
fn fuzzed_sessions_grow_monotonically_and_halt() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x303);
    let emb = HashEmbedder::new(DIM, 11);
    let mut sessions = 0;
    let mut sufficient = 0;
    while sessions < 1200 {
        let clips = rng.random_range(1..=12);
        let mut store = random_store(&mut rng, clips, 4, DIM);
        // dense random links guarantee cycles
        let links = store.facts().len() * 3;
        add_random_links(&mut store, &mut rng, links, clips * 2);
        for _ in 0..20 {
            let adversary = Adversary {
                rng: Mutex::new(ChaCha8Rng::seed_from_u64(rng.random())),
                assess_calls: AtomicU32::new(0),
                mode: rng.random_range(0..4),
            };
            let max_turns = rng.random_range(1..=6u32);
            let config = ReasonerConfig {
                k_seed: rng.random_range(1..=5),
                max_turns,
                traverse_undirected: rng.random_bool(0.5),
                prune_seeds: rng.random_bool(0.5),
                record_timing: false,
                ..ReasonerConfig::default()
            };
            let verdict = |r: &AssessRequest| adversary.verdict(r);
            let select = |r: &PruneRequest| adversary.selection(r);
            let reasoner = Reasoner::with_roles(&store, &emb, &select, &verdict, config);
            let out = reasoner.answer(&Query::new(sentence(&mut rng, 2))).unwrap();
            sessions += 1;

            let calls = adversary.assess_calls.load(Ordering::SeqCst);
            assert!(calls <= max_turns, "{calls} assess calls with R={max_turns}");
            assert_eq!(calls, out.turns_used);
            let ctx = &out.context_final;
            assert_eq!(ctx.trace.len() as u32, out.turns_used);

            // replay the trace: every turn only appends
            let seed_ids: HashSet<&NodeId> = ctx.seeds.iter().map(|h| &h.id).collect();
            let added: usize = ctx.trace.iter().map(|t| t.pruned_in.len()).sum();
            let initial = &ctx.nodes[..ctx.nodes.len() - added];
            assert!(initial.iter().all(|id| seed_ids.contains(id)));
            let mut seen: HashSet<&NodeId> = initial.iter().collect();
            let mut prefix = initial.len();
            for t in &ctx.trace {
                let expanded: HashSet<&NodeId> = t.expanded.iter().collect();
                for id in &t.expanded {
                    assert!(!seen.contains(id), "expansion re-proposed {id}");
                }
                assert!(t.pruned_in.iter().all(|id| expanded.contains(id)));
                assert_eq!(&ctx.nodes[prefix..prefix + t.pruned_in.len()], &t.pruned_in[..]);
                prefix += t.pruned_in.len();
                seen.extend(t.pruned_in.iter());
            }
            assert_eq!(seen.len(), ctx.nodes.len());
            match out.terminated_by {
                Termination::Sufficient => {
                    sufficient += 1;
                    assert!(out.answer.is_some());
                    assert!(ctx.trace.last().unwrap().verdict.is_answer());
                }
                Termination::MaxTurns => assert!(out.answer.is_none()),
            }
        }
    }
    assert!(sufficient > 0 && sufficient < sessions);
}

#[test]
fn empty_store_query_returns_max_turns() {
    let store = pyramem_core::PyramidStore::new(DIM).unwrap();
    let emb = HashEmbedder::new(DIM, 11);
    let reasoner = Reasoner::with_roles(&store, &emb, &KeepAllPruner, &always_expand, ReasonerConfig::default());
    let out = reasoner.answer(&Query::new("anything at all")).unwrap();
    assert_eq!(out.terminated_by, Termination::MaxTurns);
    assert!(out.context_final.nodes.is_empty());
    assert!(out.context_final.seeds.is_empty());
    // saturates after the first assessment instead of spinning
    assert_eq!(out.turns_used, 1);
}
