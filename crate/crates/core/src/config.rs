//! Per-store engine configuration and adapter construction.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adapters::remote::{
    RemoteAnswerer, RemoteEmbedder, RemoteExtractor, RemoteLinkJudge, RemoteModel, RemoteProfiler, RemotePruner,
    RemoteUpdater,
};
use crate::adapters::{AdapterConfig, AdapterError, AdapterKind, Adapters};
use crate::identity::{SingleLinkage, DEFAULT_LOCAL_THRESHOLD};
use crate::ingest::IngestOptions;
use crate::reasoner::ReasonerConfig;

pub const DEFAULT_DIM: usize = 256;

/// Adapter binding for every role; unset roles are scripted.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterBindings {
    pub embedder: AdapterConfig,
    pub extractor: AdapterConfig,
    pub judge: AdapterConfig,
    pub pruner: AdapterConfig,
    pub answerer: AdapterConfig,
    pub updater: AdapterConfig,
    pub profiler: AdapterConfig,
}

impl AdapterBindings {
    pub const ROLES: [&'static str; 7] = ["embedder", "extractor", "judge", "pruner", "answerer", "updater", "profiler"];

    pub fn role_mut(&mut self, role: &str) -> Option<&mut AdapterConfig> {
        Some(match role {
            "embedder" => &mut self.embedder,
            "extractor" => &mut self.extractor,
            "judge" => &mut self.judge,
            "pruner" => &mut self.pruner,
            "answerer" => &mut self.answerer,
            "updater" => &mut self.updater,
            "profiler" => &mut self.profiler,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub dim: usize,
    /// Seed of the scripted adapters.
    pub seed: u64,
    pub theta_local: f64,
    pub ingest: IngestOptions,
    pub reasoner: ReasonerConfig,
    pub adapters: AdapterBindings,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            seed: 0,
            theta_local: DEFAULT_LOCAL_THRESHOLD,
            ingest: IngestOptions::default(),
            reasoner: ReasonerConfig::default(),
            adapters: AdapterBindings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
    #[error(transparent)]
    Adapter(#[from] AdapterError),
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_env<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T, ConfigError> {
    raw.trim()
        .parse()
        .map_err(|_| invalid(key, format!("cannot parse {raw:?}")))
}

impl EngineConfig {
    /// Applies `PYRAMEM_*` overrides read through `get`.
    ///
    /// Recognized keys: `PYRAMEM_CLIP_LEN`, `PYRAMEM_K_SEED`,
    /// `PYRAMEM_MAX_TURNS`, `PYRAMEM_K_LINK`, `PYRAMEM_THETA_LOCAL`,
    /// `PYRAMEM_THETA_GLOBAL`, `PYRAMEM_SEED`, `PYRAMEM_ENDPOINT` (every
    /// remote role without an endpoint) and `PYRAMEM_<ROLE>_ENDPOINT`, which
    /// also switches that role to remote.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        macro_rules! over {
            ($key:literal, $field:expr) => {
                if let Some(raw) = get($key) {
                    $field = parse_env($key, &raw)?;
                }
            };
        }
        over!("PYRAMEM_CLIP_LEN", self.ingest.clip_len);
        over!("PYRAMEM_K_SEED", self.reasoner.k_seed);
        over!("PYRAMEM_MAX_TURNS", self.reasoner.max_turns);
        over!("PYRAMEM_K_LINK", self.ingest.k_link);
        over!("PYRAMEM_THETA_LOCAL", self.theta_local);
        over!("PYRAMEM_THETA_GLOBAL", self.ingest.theta_global);
        over!("PYRAMEM_SEED", self.seed);
        let shared = get("PYRAMEM_ENDPOINT").filter(|s| !s.is_empty());
        for role in AdapterBindings::ROLES {
            let key = format!("PYRAMEM_{}_ENDPOINT", role.to_ascii_uppercase());
            let binding = self.adapters.role_mut(role).expect("known role");
            if let Some(url) = get(&key).filter(|s| !s.is_empty()) {
                binding.kind = AdapterKind::Remote;
                binding.endpoint = Some(url);
            } else if binding.kind == AdapterKind::Remote && binding.endpoint.is_none() {
                binding.endpoint = shared.clone();
            }
        }
        Ok(())
    }

    pub fn from_env_overrides(mut self) -> Result<Self, ConfigError> {
        self.apply_env(|k| std::env::var(k).ok())?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.dim == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        if !(self.ingest.clip_len.is_finite() && self.ingest.clip_len > 0.0) {
            return Err(invalid("ingest.clip_len", "must be positive"));
        }
        if self.ingest.k_link == 0 {
            return Err(invalid("ingest.k_link", "must be at least 1"));
        }
        for (key, theta) in [("theta_local", self.theta_local), ("ingest.theta_global", self.ingest.theta_global)] {
            if !(-1.0..=1.0).contains(&theta) {
                return Err(invalid(key, "must lie in [-1, 1]"));
            }
        }
        if self.reasoner.k_seed == 0 {
            return Err(invalid("reasoner.k_seed", "must be at least 1"));
        }
        if self.reasoner.max_turns == 0 {
            return Err(invalid("reasoner.max_turns", "must be at least 1"));
        }
        let b = &self.adapters;
        for (role, cfg) in AdapterBindings::ROLES.iter().zip([
            &b.embedder, &b.extractor, &b.judge, &b.pruner, &b.answerer, &b.updater, &b.profiler,
        ]) {
            cfg.validate()
                .map_err(|e| invalid(&format!("adapters.{role}"), e.to_string()))?;
        }
        Ok(())
    }

    /// Scripted adapters, with each remote-bound role replaced.
    pub fn build_adapters(&self) -> Result<Adapters, ConfigError> {
        self.validate()?;
        let mut a = Adapters::scripted(self.dim, self.seed);
        a.clusterer = Arc::new(SingleLinkage::new(self.theta_local).with_execution(self.ingest.execution));
        let b = &self.adapters;
        let remote = |cfg: &AdapterConfig| -> Result<Option<RemoteModel>, ConfigError> {
            match cfg.kind {
                AdapterKind::Scripted => Ok(None),
                AdapterKind::Remote => Ok(Some(RemoteModel::new(cfg)?)),
            }
        };
        if let Some(m) = remote(&b.embedder)? {
            a.embedder = Arc::new(RemoteEmbedder::new(m, self.dim));
        }
        if let Some(m) = remote(&b.extractor)? {
            a.extractor = Arc::new(RemoteExtractor::new(m));
        }
        if let Some(m) = remote(&b.judge)? {
            a.judge = Arc::new(RemoteLinkJudge::new(m));
        }
        if let Some(m) = remote(&b.pruner)? {
            a.pruner = Arc::new(RemotePruner::new(m));
        }
        if let Some(m) = remote(&b.answerer)? {
            a.answerer = Arc::new(RemoteAnswerer::new(m));
        }
        if let Some(m) = remote(&b.updater)? {
            a.updater = Arc::new(RemoteUpdater::new(m));
        }
        if let Some(m) = remote(&b.profiler)? {
            a.profiler = Arc::new(RemoteProfiler::new(m));
        }
        Ok(a)
    }
}
