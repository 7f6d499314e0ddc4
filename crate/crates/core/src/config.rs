//! Run configuration files.
//!
//! A config is one TOML document: the problem package path, the models, an optional
//! descriptor list and a `[run]` table holding [`RunConfig`]. Every key except
//! `problem` has a default, and unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::descriptors::{DescriptorSpec, Feature};
use crate::error::{Error, Result};
use crate::evaluation::ArtifactKind;
use crate::evolution::RunConfig;
use crate::gateway::{
    ModelRoute, ModelSpec, Registry, RegistryPlan, RetryPolicy, DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL, GEMINI_3_FLASH, QWEN3_30B,
};

/// A model given either by id (priced from the built-in tariff table) or with explicit
/// prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelEntry {
    Known(String),
    Priced(ModelSpec),
}

impl ModelEntry {
    pub fn spec(&self) -> Result<ModelSpec> {
        match self {
            ModelEntry::Known(id) => ModelSpec::known(id),
            ModelEntry::Priced(spec) => Ok(spec.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    /// Cheap models for mutations and seed variants.
    pub mutation: Vec<ModelEntry>,
    /// Strong model for diverse seeds and paradigm shifts.
    pub paradigm: ModelEntry,
    /// Model that executes candidate prompts; required for rollout problems.
    pub task: Option<ModelEntry>,
    pub base_url: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_s: f64,
    /// Retries of a failed call after the first attempt.
    pub max_retries: u32,
    /// Sleep in seconds before each retry; the last entry repeats.
    pub backoff_s: Vec<f64>,
    pub task_temperature: f64,
    pub task_max_tokens: u32,
    /// Explicit route table. When set it replaces the generated registry and the
    /// routing ablations no longer apply.
    pub routes: Option<Vec<ModelRoute>>,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        let plan = RegistryPlan::default();
        ModelsConfig {
            mutation: vec![ModelEntry::Known(QWEN3_30B.into())],
            paradigm: ModelEntry::Known(GEMINI_3_FLASH.into()),
            task: None,
            base_url: DEFAULT_BASE_URL.into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_s: plan.timeout_s,
            max_retries: 3,
            backoff_s: vec![1.0, 4.0, 16.0],
            task_temperature: plan.task_temperature,
            task_max_tokens: plan.task_max_tokens,
            routes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    /// Problem package directory or its `problem.toml`. Relative paths are resolved
    /// against the config file's directory on load.
    pub problem: PathBuf,
    #[serde(default)]
    pub models: ModelsConfig,
    /// Descriptor dimensions; unset picks the default for the problem kind.
    #[serde(default)]
    pub descriptors: Option<DescriptorSpec>,
    #[serde(default)]
    pub run: RunConfig,
}

/// Parse, default and validate a config file.
pub fn load_config(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("reading config {}: {e}", path.display())))?;
    let mut cfg = ConfigFile::from_toml(&text).map_err(|e| match e {
        Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    if cfg.problem.is_relative() {
        if let Some(dir) = path.parent() {
            cfg.problem = dir.join(&cfg.problem);
        }
    }
    Ok(cfg)
}

impl ConfigFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ConfigFile = toml::from_str(text).map_err(|e| Error::config(e.message().to_string() + &key_hint(text, &e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("serializing config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        if !(self.models.timeout_s > 0.0) || !(self.models.task_temperature > 0.0) || self.models.task_max_tokens == 0 {
            return Err(Error::config(
                "models.timeout_s, models.task_temperature and models.task_max_tokens must be positive",
            ));
        }
        if self.models.backoff_s.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return Err(Error::config("models.backoff_s entries must be finite and non-negative"));
        }
        if let Some(spec) = &self.descriptors {
            if spec.is_empty() {
                return Err(Error::config("descriptors must list at least one feature"));
            }
        }
        self.registry()?;
        Ok(())
    }

    pub fn registry_plan(&self) -> Result<RegistryPlan> {
        let m = &self.models;
        let mutation_models = m.mutation.iter().map(ModelEntry::spec).collect::<Result<Vec<_>>>()?;
        let paradigm_model = if self.run.ablation.no_large_models {
            mutation_models
                .first()
                .cloned()
                .ok_or_else(|| Error::config("models.mutation must list at least one model"))?
        } else {
            m.paradigm.spec()?
        };
        Ok(RegistryPlan {
            mutation_models,
            paradigm_model,
            task_model: m.task.as_ref().map(ModelEntry::spec).transpose()?,
            temperatures: self.run.sampler_temperatures.clone(),
            max_tokens: self.run.max_tokens,
            timeout_s: m.timeout_s,
            pe_temperature: self.run.pe.temperature,
            pe_max_tokens: self.run.pe.max_tokens,
            pe_timeout_s: self.run.pe.timeout_s,
            meta_advice_max_tokens: self.run.meta_advice.max_tokens,
            task_temperature: m.task_temperature,
            task_max_tokens: m.task_max_tokens,
        })
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.models.max_retries,
            backoff: self.models.backoff_s.iter().map(|s| Duration::from_secs_f64(*s)).collect(),
        }
    }

    pub fn registry(&self) -> Result<Registry> {
        if let Some(routes) = &self.models.routes {
            return Registry::new(routes.clone());
        }
        let plan = self.registry_plan()?;
        if self.run.ablation.no_role_routing {
            Registry::no_role_routing(&plan)
        } else {
            Registry::role_routed(&plan)
        }
    }

    pub fn descriptor_spec(&self, kind: ArtifactKind) -> DescriptorSpec {
        if self.run.ablation.weak_dims {
            return DescriptorSpec::weak();
        }
        match (&self.descriptors, kind) {
            (Some(spec), _) => spec.clone(),
            (None, ArtifactKind::Code) => DescriptorSpec::default_code(),
            (None, ArtifactKind::Prompt) => DescriptorSpec::new(vec![Feature::CodeLength]),
        }
    }
}

/// Dotted path of the key on the line an error points at, e.g. ` (key run.pe.interval)`.
fn key_hint(text: &str, e: &toml::de::Error) -> String {
    let Some(span) = e.span() else {
        return String::new();
    };
    let start = span.start.min(text.len());
    let line_start = text[..start].rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("");
    let Some((key, _)) = line.split_once('=') else {
        return String::new();
    };
    let table = text[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim());
    match table {
        Some(t) => format!(" (key {t}.{})", key.trim()),
        None => format!(" (key {})", key.trim()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::Budget;
    use crate::gateway::Role;

    const MINIMAL: &str = "problem = \"toy\"\n";

    #[test]
    fn minimal_config_is_fully_defaulted() {
        let cfg = ConfigFile::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.run.pe.interval, 10);
        assert_eq!(cfg.run.n_centroids, 50);
        assert_eq!(cfg.run.budget, Budget::Evals(750));
        assert_eq!(cfg.run.sampler_temperatures, vec![0.3, 0.7, 1.0, 1.2]);
        assert!(!cfg.run.cascade.enabled);
        assert_eq!(cfg.descriptor_spec(ArtifactKind::Code), DescriptorSpec::default_code());
        assert_eq!(cfg.retry_policy(), RetryPolicy::default());
        let reg = cfg.registry().unwrap();
        assert_eq!(reg.routes_for(Role::Mutation).count(), 4);
        assert_eq!(reg.routes_for(Role::ParadigmShift).next().unwrap().model_id, GEMINI_3_FLASH);
    }

    #[test]
    fn unknown_keys_are_named() {
        for text in [
            "problem = \"toy\"\nfoo = 1\n",
            "problem = \"toy\"\n[run]\nfoo = 1\n",
            "problem = \"toy\"\n[run.pe]\nfoo = 1\n",
            "problem = \"toy\"\n[models]\nfoo = 1\n",
        ] {
            let err = ConfigFile::from_toml(text).unwrap_err().to_string();
            assert!(err.contains("foo"), "{err}");
        }
        let err = ConfigFile::from_toml("[run]\nn_centroids = 5\n").unwrap_err().to_string();
        assert!(err.contains("problem"), "{err}");
        let err = ConfigFile::from_toml("problem = \"p\"\n[run]\nn_centroids = \"many\"\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("run.n_centroids") && err.contains("expected usize"), "{err}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        let err = ConfigFile::from_toml("problem = \"p\"\n[run.pe]\ninterval = 0\n").unwrap_err();
        assert!(err.to_string().contains("pe.interval"), "{err}");
        let err = ConfigFile::from_toml("problem = \"p\"\n[models]\nmutation = [\"nobody/unknown\"]\n").unwrap_err();
        assert!(err.to_string().contains("nobody/unknown"), "{err}");
    }

    #[test]
    fn serialize_and_reload_is_identity() {
        let text = r#"
problem = "pkg"
descriptors = ["loop_count", { score_key = "a" }, "code_length"]

[models]
mutation = ["qwen/qwen3-30b-a3b-instruct-2507", { id = "local/tiny", input_usd_per_mtok = 0.01, output_usd_per_mtok = 0.02 }]
task = "qwen/qwen3-8b"

[run]
rng_seed = 3
budget = { usd = 4.5 }
mutation_mode = "auto"

[run.pe]
interval = 5

[run.proxy]
k_proxy = 35
n_init = 5

[run.cascade]
enabled = true
subset = ["a"]

[run.ablation]
no_large_models = true
"#;
        let cfg = ConfigFile::from_toml(text).unwrap();
        let again = ConfigFile::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.run.budget, Budget::Usd(4.5));
        let reg = cfg.registry().unwrap();
        assert_eq!(reg.routes_for(Role::ParadigmShift).next().unwrap().model_id, QWEN3_30B);
        assert!(reg.has_role(Role::TaskModel));
        let defaults = ConfigFile::from_toml(MINIMAL).unwrap();
        assert_eq!(ConfigFile::from_toml(&defaults.to_toml().unwrap()).unwrap(), defaults);
    }

    #[test]
    fn ablations_change_registry_and_descriptors() {
        let cfg = ConfigFile::from_toml("problem = \"p\"\n[run.ablation]\nno_role_routing = true\nweak_dims = true\n").unwrap();
        let reg = cfg.registry().unwrap();
        assert!(!reg.has_role(Role::ParadigmShift));
        assert_eq!(reg.routes_for(Role::Mutation).count(), 8);
        assert_eq!(cfg.descriptor_spec(ArtifactKind::Code), DescriptorSpec::weak());
        assert!(!cfg.run.pe_active());
    }

    #[test]
    fn relative_problem_paths_follow_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "problem = \"pkg\"\n").unwrap();
        let cfg = load_config(&path).unwrap();
        assert_eq!(cfg.problem, dir.path().join("pkg"));
        assert!(load_config(&dir.path().join("missing.toml")).is_err());
    }
}
