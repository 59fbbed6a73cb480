use std::fmt;

use pyramem_core::types::Level;
use pyramem_core::ReasonerConfig;
use serde::{Deserialize, Serialize};

use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Memory {
    Hierarchical,
    Plain,
}

/// One memory/search configuration of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub memory: Memory,
    pub links: bool,
    pub global: bool,
    pub expand: bool,
    pub prune: bool,
    /// Clip summaries only, top-20 retrieval, no expansion.
    pub socratic: bool,
}

/// Clips retrieved by the summary-only baseline.
pub const SOCRATIC_K: usize = 20;

impl Variant {
    pub const fn full() -> Self {
        Self {
            memory: Memory::Hierarchical,
            links: true,
            global: true,
            expand: true,
            prune: true,
            socratic: false,
        }
    }

    pub const fn plain(links: bool) -> Self {
        Self {
            memory: Memory::Plain,
            links,
            ..Self::full()
        }
    }

    pub const fn no_global(links: bool) -> Self {
        Self {
            global: false,
            links,
            ..Self::full()
        }
    }

    pub const fn no_expand() -> Self {
        Self {
            expand: false,
            ..Self::full()
        }
    }

    pub const fn no_prune() -> Self {
        Self {
            prune: false,
            ..Self::full()
        }
    }

    pub const fn socratic() -> Self {
        Self {
            links: false,
            global: false,
            expand: false,
            prune: false,
            socratic: true,
            ..Self::full()
        }
    }

    /// Every named variant, `full` first.
    pub fn all() -> Vec<Self> {
        NAMES.iter().map(|(_, v)| *v).collect()
    }

    pub fn name(&self) -> String {
        if let Some((n, _)) = NAMES.iter().find(|(_, v)| v == self) {
            return n.to_string();
        }
        let mut parts = vec![match self.memory {
            Memory::Hierarchical => "hierarchical",
            Memory::Plain => "plain",
        }];
        for (on, flag) in [(self.links, "link"), (self.global, "global"), (self.expand, "expand"), (self.prune, "prune")] {
            if !on {
                parts.push(flag);
            }
        }
        let name = parts.join("-no-");
        if self.socratic {
            format!("socratic-{name}")
        } else {
            name
        }
    }

    pub fn from_name(name: &str) -> Result<Self, BenchError> {
        NAMES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| BenchError::UnknownVariant(name.to_string()))
    }

    /// `all`, or a comma-separated list of names.
    pub fn parse_list(list: &str) -> Result<Vec<Self>, BenchError> {
        if list.trim() == "all" {
            return Ok(Self::all());
        }
        list.split(',').map(|n| Self::from_name(n.trim())).collect()
    }

    /// Reasoner settings realizing this variant on top of `base`.
    pub fn reasoner_config(&self, base: ReasonerConfig) -> ReasonerConfig {
        if self.socratic {
            return ReasonerConfig {
                k_seed: SOCRATIC_K,
                max_turns: 1,
                prune: false,
                prune_seeds: false,
                hierarchy: false,
                relational: false,
                global_context: false,
                seed_level: Level::Clip,
                ..base
            };
        }
        ReasonerConfig {
            hierarchy: self.memory == Memory::Hierarchical,
            relational: self.links,
            global_context: self.global,
            max_turns: if self.expand { base.max_turns } else { 1 },
            prune: self.prune,
            prune_seeds: self.prune,
            seed_level: Level::Fact,
            ..base
        }
    }
}

const NAMES: [(&str, Variant); 8] = [
    ("full", Variant::full()),
    ("plain", Variant::plain(true)),
    ("plain-no-link", Variant::plain(false)),
    ("no-global", Variant::no_global(true)),
    ("no-global-no-link", Variant::no_global(false)),
    ("no-expand", Variant::no_expand()),
    ("no-prune", Variant::no_prune()),
    ("socratic", Variant::socratic()),
];

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}
