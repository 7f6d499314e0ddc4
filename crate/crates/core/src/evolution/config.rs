use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::CascadeConfig;
use crate::gateway::DEFAULT_TEMPERATURES;
use crate::proxy::ObjectiveWeights;

/// When the search stops. Evaluation budgets count successful evaluations only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Budget {
    Usd(f64),
    Evals(u64),
    Rollouts(u64),
}

impl Default for Budget {
    fn default() -> Self {
        Budget::Evals(750)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeConfig {
    pub enabled: bool,
    pub interval: u64,
    pub n_clusters: usize,
    pub n_variants: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_s: f64,
    /// Period of the background trigger monitor; 0 disables it.
    pub monitor_poll_s: f64,
}

impl Default for PeConfig {
    fn default() -> Self {
        PeConfig {
            enabled: true,
            interval: 10,
            n_clusters: 3,
            n_variants: 3,
            temperature: 1.0,
            max_tokens: 4096,
            timeout_s: 300.0,
            monitor_poll_s: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaAdviceConfig {
    pub enabled: bool,
    pub interval: u64,
    pub max_tokens: u32,
}

impl Default for MetaAdviceConfig {
    fn default() -> Self {
        MetaAdviceConfig {
            enabled: true,
            interval: 50,
            max_tokens: 400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationMode {
    #[default]
    Full,
    Diff,
    /// Diff for parents longer than `diff_threshold_chars`, full otherwise.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    /// Uniform-grid centroids instead of calibrating them on the seed pass.
    pub no_bootstrapped_seeds: bool,
    /// Two-dimensional descriptor: code length and call count.
    pub weak_dims: bool,
    /// Paradigm shifts and seeds use the cheap mutation model.
    pub no_large_models: bool,
    /// One weighted mutation pool over cheap and strong models; no paradigm shifts.
    pub no_role_routing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxyConfig {
    /// Proxy size. Unset disables proxy selection.
    pub k_proxy: Option<usize>,
    /// Number of Phase-1 candidates used as calibration rows; unset uses all of them.
    pub n_init: Option<usize>,
    pub weights: ObjectiveWeights,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig {
            k_proxy: None,
            n_init: None,
            weights: ObjectiveWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n_diverse_seeds: usize,
    pub n_variants_per_seed: usize,
    pub n_llm_workers: usize,
    pub n_eval_processes: usize,
    pub budget: Budget,
    pub pe: PeConfig,
    pub meta_advice: MetaAdviceConfig,
    pub n_parents: usize,
    pub n_inspirations: usize,
    pub inspiration_drop_prob: f64,
    pub sampler_temperatures: Vec<f64>,
    pub n_centroids: usize,
    pub rng_seed: u64,
    pub mutation_mode: MutationMode,
    pub diff_threshold_chars: usize,
    pub max_tokens: u32,
    pub cascade: CascadeConfig,
    /// Write an archive snapshot every this many successful evaluations; 0 writes only
    /// at the end.
    pub checkpoint_interval: u64,
    /// How many recent failure traces are shown in mutation prompts.
    pub feedback_window: usize,
    /// Abort after this many failed generations or evaluations in a row; 0 never aborts.
    pub max_consecutive_failures: u64,
    pub proxy: ProxyConfig,
    pub ablation: AblationFlags,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_diverse_seeds: 4,
            n_variants_per_seed: 20,
            n_llm_workers: 4,
            n_eval_processes: 4,
            budget: Budget::default(),
            pe: PeConfig::default(),
            meta_advice: MetaAdviceConfig::default(),
            n_parents: 1,
            n_inspirations: 1,
            inspiration_drop_prob: 0.2,
            sampler_temperatures: DEFAULT_TEMPERATURES.to_vec(),
            n_centroids: 50,
            rng_seed: 0,
            mutation_mode: MutationMode::Full,
            diff_threshold_chars: 4000,
            max_tokens: 16_384,
            cascade: CascadeConfig::default(),
            checkpoint_interval: 0,
            feedback_window: 3,
            max_consecutive_failures: 200,
            proxy: ProxyConfig::default(),
            ablation: AblationFlags::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_diverse_seeds", self.n_diverse_seeds),
            ("n_llm_workers", self.n_llm_workers),
            ("n_eval_processes", self.n_eval_processes),
            ("n_centroids", self.n_centroids),
            ("pe.n_clusters", self.pe.n_clusters),
        ];
        for (key, v) in positive {
            if v < 1 {
                return Err(Error::config(format!("{key} must be at least 1")));
            }
        }
        if self.n_parents != 1 {
            return Err(Error::config("n_parents: only a single parent per mutation is supported"));
        }
        if self.pe.interval < 1 || self.meta_advice.interval < 1 {
            return Err(Error::config("pe.interval and meta_advice.interval must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.inspiration_drop_prob) {
            return Err(Error::config("inspiration_drop_prob must lie in [0, 1]"));
        }
        if self.sampler_temperatures.is_empty() || self.sampler_temperatures.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::config("sampler_temperatures must be a non-empty list of positive numbers"));
        }
        if !(self.pe.temperature > 0.0) || !(self.pe.timeout_s > 0.0) || self.pe.max_tokens == 0 {
            return Err(Error::config("pe.temperature, pe.timeout_s and pe.max_tokens must be positive"));
        }
        if self.max_tokens == 0 || self.meta_advice.max_tokens == 0 {
            return Err(Error::config("max_tokens and meta_advice.max_tokens must be positive"));
        }
        if !(self.pe.monitor_poll_s >= 0.0) {
            return Err(Error::config("pe.monitor_poll_s must be non-negative"));
        }
        if !(self.cascade.threshold >= 0.0) || !(self.cascade.fraction > 0.0 && self.cascade.fraction <= 1.0) {
            return Err(Error::config("cascade.threshold must be >= 0 and cascade.fraction in (0, 1]"));
        }
        match self.budget {
            Budget::Usd(v) if !(v > 0.0) => return Err(Error::config("budget.usd must be positive")),
            Budget::Evals(0) | Budget::Rollouts(0) => return Err(Error::config("budget must be positive")),
            _ => {}
        }
        if self.proxy.k_proxy == Some(0) {
            return Err(Error::config("proxy.k_proxy must be at least 1"));
        }
        if matches!(self.proxy.n_init, Some(n) if n < 2) {
            return Err(Error::config("proxy.n_init must be at least 2"));
        }
        Ok(())
    }

    /// Paradigm shifts are off when disabled or under the no-role-routing ablation.
    pub fn pe_active(&self) -> bool {
        self.pe.enabled && !self.ablation.no_role_routing
    }
}
