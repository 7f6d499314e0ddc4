//! Candidate evaluation: problem packages, backends and the cascade pre-filter.

mod rollout;
mod shim;

pub use rollout::{RolloutBackend, RolloutExample, Scorer};
pub use shim::{ShimBackend, ShimRequest, ShimResponse};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::candidate::FAILED_SCORE;
use crate::error::{Error, Result};
use crate::gateway::{Gateway, Registry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Mean per-instance score in maximize orientation, or `FAILED_SCORE`.
    #[serde(with = "crate::candidate::score_serde")]
    pub score: f64,
    pub per_instance_scores: BTreeMap<String, f64>,
    pub runtime_s: f64,
    pub error: Option<String>,
    pub rollouts_used: u64,
}

impl EvalResult {
    pub fn failure(error: impl Into<String>, runtime_s: f64) -> Self {
        let mut error = error.into();
        if error.is_empty() {
            error = "evaluation failed".into();
        }
        EvalResult {
            score: FAILED_SCORE,
            per_instance_scores: BTreeMap::new(),
            runtime_s,
            error: Some(error),
            rollouts_used: 0,
        }
    }

    /// Successful result whose score is the unweighted mean of `scores`.
    pub fn from_scores(scores: BTreeMap<String, f64>, runtime_s: f64) -> Self {
        let score = if scores.is_empty() {
            FAILED_SCORE
        } else {
            scores.values().sum::<f64>() / scores.len() as f64
        };
        EvalResult {
            error: (!score.is_finite()).then(|| "no finite per-instance scores".to_string()),
            score: if score.is_finite() { score } else { FAILED_SCORE },
            per_instance_scores: scores,
            runtime_s,
            rollouts_used: 0,
        }
    }

    pub fn is_failure(&self) -> bool {
        self.error.is_some() || !self.score.is_finite()
    }

    /// Mean over a subset of the already-scored instances.
    pub fn restricted_to(&self, subset: &[String]) -> EvalResult {
        if self.is_failure() {
            return self.clone();
        }
        let mut scores = BTreeMap::new();
        for id in subset {
            match self.per_instance_scores.get(id) {
                Some(v) => {
                    scores.insert(id.clone(), *v);
                }
                None => return EvalResult::failure(format!("no score for example {id}"), self.runtime_s),
            }
        }
        let mut r = EvalResult::from_scores(scores, self.runtime_s);
        r.rollouts_used = self.rollouts_used;
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Maximize,
    Minimize,
}

impl Direction {
    /// Problem-native score to internal maximize orientation.
    pub fn to_canonical(self, v: f64) -> f64 {
        match self {
            Direction::Maximize => v,
            Direction::Minimize => -v,
        }
    }

    /// Internal score back to the problem's own orientation.
    pub fn to_display(self, v: f64) -> f64 {
        self.to_canonical(v)
    }
}

/// Whether candidates are programs run by an external shim or prompts run by a task
/// model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    ProgramExec {
        /// Shim command line; the first entry is the executable.
        command: Vec<String>,
        #[serde(default)]
        problem_id: Option<String>,
    },
    Rollout {
        /// Line-delimited `{"id", "input", "expected"}` records, relative to the package.
        examples: PathBuf,
        #[serde(default)]
        scorer: Scorer,
    },
}

impl BackendConfig {
    pub fn artifact_kind(&self) -> ArtifactKind {
        match self {
            BackendConfig::ProgramExec { .. } => ArtifactKind::Code,
            BackendConfig::Rollout { .. } => ArtifactKind::Prompt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Code,
    Prompt,
}

fn default_timeout() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemPackage {
    pub title: String,
    pub description: String,
    #[serde(default)]
    pub function_signature: String,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default)]
    pub discovery_set: Vec<String>,
    pub backend: BackendConfig,
    #[serde(default = "default_timeout")]
    pub eval_timeout_s: f64,
    /// Stand-in for failed evaluations wherever a number is required (calibration).
    #[serde(default)]
    pub failure_score: f64,
    /// Optional starting artifact, evaluated as the first seed.
    #[serde(default)]
    pub seed_artifact: Option<String>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl ProblemPackage {
    /// Reads `problem.toml` from a package directory (or the file itself).
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join("problem.toml") } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file)
            .map_err(|e| Error::config(format!("reading problem package {}: {e}", file.display())))?;
        let mut p: ProblemPackage =
            toml::from_str(&text).map_err(|e| Error::config(format!("problem package {}: {e}", file.display())))?;
        p.root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eval_timeout_s > 0.0) {
            return Err(Error::config("eval_timeout_s must be positive"));
        }
        if self.discovery_set.is_empty() {
            return Err(Error::config("discovery_set must list at least one example id"));
        }
        let mut seen = BTreeSet::new();
        for id in &self.discovery_set {
            if !seen.insert(id) {
                return Err(Error::config(format!("duplicate example id {id:?} in discovery_set")));
            }
        }
        if !self.failure_score.is_finite() {
            return Err(Error::config("failure_score must be finite"));
        }
        if let BackendConfig::ProgramExec { command, .. } = &self.backend {
            if command.is_empty() {
                return Err(Error::config("program_exec backend needs a command"));
            }
        }
        Ok(())
    }

    pub fn artifact_kind(&self) -> ArtifactKind {
        self.backend.artifact_kind()
    }

    pub fn problem_id(&self) -> String {
        match &self.backend {
            BackendConfig::ProgramExec {
                problem_id: Some(id), ..
            } => id.clone(),
            _ => self.title.clone(),
        }
    }
}

/// Scores an artifact on a list of examples. Scores are in the problem's own
/// orientation. `Err` means the backend itself is unusable; a candidate that crashes or
/// times out is an `Ok` failure result.
pub trait EvalBackend: Send + Sync {
    fn evaluate(&self, artifact: &str, examples: &[String], timeout_s: f64) -> Result<EvalResult>;
}

/// In-process backend over a per-example scoring closure. Returning `Err(text)` fails the
/// candidate with that message.
pub struct FnBackend<F> {
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&str, &str) -> std::result::Result<f64, String> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        FnBackend { f }
    }
}

impl<F> EvalBackend for FnBackend<F>
where
    F: Fn(&str, &str) -> std::result::Result<f64, String> + Send + Sync,
{
    fn evaluate(&self, artifact: &str, examples: &[String], _timeout_s: f64) -> Result<EvalResult> {
        let start = std::time::Instant::now();
        let mut scores = BTreeMap::new();
        for ex in examples {
            match (self.f)(artifact, ex) {
                Ok(v) => {
                    scores.insert(ex.clone(), v);
                }
                Err(e) => return Ok(EvalResult::failure(e, start.elapsed().as_secs_f64())),
            }
        }
        Ok(EvalResult::from_scores(scores, start.elapsed().as_secs_f64()))
    }
}

/// Binds a backend to a problem: checks subsets, orients scores for maximization and
/// applies the mean contract.
#[derive(Clone)]
pub struct Evaluator {
    problem: Arc<ProblemPackage>,
    backend: Arc<dyn EvalBackend>,
}

impl Evaluator {
    pub fn new(problem: Arc<ProblemPackage>, backend: Arc<dyn EvalBackend>) -> Self {
        Evaluator { problem, backend }
    }

    /// The backend a package declares: a shim process for programs, task-model rollouts
    /// for prompts. Rollouts go through `gateway` on the registry's task-model route.
    pub fn from_package(
        problem: Arc<ProblemPackage>,
        gateway: Arc<Gateway>,
        registry: &Registry,
        seed: u64,
    ) -> Result<Self> {
        let backend: Arc<dyn EvalBackend> = match &problem.backend {
            BackendConfig::ProgramExec { command, .. } => {
                Arc::new(ShimBackend::new(command.clone(), problem.problem_id())?.with_cwd(problem.root.clone()))
            }
            BackendConfig::Rollout { examples, scorer } => {
                let path = problem.root.join(examples);
                let examples = RolloutExample::read_jsonl(&path)?;
                Arc::new(RolloutBackend::with_builtin(gateway, registry.clone(), examples, *scorer, seed)?)
            }
        };
        Ok(Evaluator::new(problem, backend))
    }

    pub fn problem(&self) -> &ProblemPackage {
        &self.problem
    }

    pub fn evaluate(&self, artifact: &str, subset: &[String]) -> Result<EvalResult> {
        if subset.is_empty() {
            return Err(Error::precondition("evaluation subset is empty"));
        }
        for id in subset {
            if !self.problem.discovery_set.contains(id) {
                return Err(Error::precondition(format!("example {id:?} is not in the discovery set")));
            }
        }
        let raw = self.backend.evaluate(artifact, subset, self.problem.eval_timeout_s)?;
        if raw.is_failure() {
            let mut r = EvalResult::failure(raw.error.unwrap_or_default(), raw.runtime_s);
            r.rollouts_used = raw.rollouts_used;
            return Ok(r);
        }
        let mut scores = BTreeMap::new();
        for id in subset {
            match raw.per_instance_scores.get(id) {
                Some(v) if v.is_finite() => {
                    scores.insert(id.clone(), self.problem.direction.to_canonical(*v));
                }
                Some(v) => {
                    let mut r = EvalResult::failure(format!("non-finite score {v} on example {id}"), raw.runtime_s);
                    r.rollouts_used = raw.rollouts_used;
                    return Ok(r);
                }
                None => {
                    let mut r = EvalResult::failure(format!("backend returned no score for example {id}"), raw.runtime_s);
                    r.rollouts_used = raw.rollouts_used;
                    return Ok(r);
                }
            }
        }
        let mut r = EvalResult::from_scores(scores, raw.runtime_s);
        r.rollouts_used = raw.rollouts_used;
        Ok(r)
    }
}

fn default_fraction() -> f64 {
    0.2
}

fn default_threshold() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeConfig {
    #[serde(default)]
    pub enabled: bool,
    /// Share of the active example set used for screening when `subset` is unset.
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub subset: Option<Vec<String>>,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            enabled: false,
            fraction: default_fraction(),
            threshold: default_threshold(),
            subset: None,
        }
    }
}

impl CascadeConfig {
    /// Screening examples: the explicit subset, else the first ⌈fraction·n⌉ of `active`.
    pub fn screening_set(&self, active: &[String]) -> Vec<String> {
        if let Some(s) = &self.subset {
            return s.clone();
        }
        let n = ((self.fraction * active.len() as f64).ceil() as usize).clamp(1, active.len().max(1));
        active.iter().take(n).cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CascadeOutcome {
    /// Screening skipped (disabled or no finite incumbent).
    Pass,
    Passed { subset_score: f64, rollouts_used: u64 },
    Rejected { subset_score: f64, threshold: f64, result: EvalResult },
}

impl CascadeOutcome {
    pub fn rejected(&self) -> bool {
        matches!(self, CascadeOutcome::Rejected { .. })
    }
}

/// Screen a candidate on a small subset: reject iff its score is strictly below
/// `threshold × current_best`. For a negative best (minimized costs) the same relative
/// slack is applied to its magnitude, so the bar sits below the best rather than above it.
pub fn cascade_prefilter(
    evaluator: &Evaluator,
    artifact: &str,
    active: &[String],
    current_best: f64,
    config: &CascadeConfig,
) -> Result<CascadeOutcome> {
    if !config.enabled || !current_best.is_finite() {
        return Ok(CascadeOutcome::Pass);
    }
    let subset = config.screening_set(active);
    let result = evaluator.evaluate(artifact, &subset)?;
    let threshold = if current_best >= 0.0 {
        config.threshold * current_best
    } else {
        (2.0 - config.threshold) * current_best
    };
    if result.score < threshold {
        return Ok(CascadeOutcome::Rejected {
            subset_score: result.score,
            threshold,
            result,
        });
    }
    Ok(CascadeOutcome::Passed {
        subset_score: result.score,
        rollouts_used: result.rollouts_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(direction: Direction) -> Arc<ProblemPackage> {
        Arc::new(ProblemPackage {
            title: "t".into(),
            description: "d".into(),
            function_signature: String::new(),
            direction,
            discovery_set: vec!["a".into(), "b".into(), "c".into(), "d".into(), "e".into()],
            backend: BackendConfig::ProgramExec {
                command: vec!["true".into()],
                problem_id: None,
            },
            eval_timeout_s: 60.0,
            failure_score: 0.0,
            seed_artifact: None,
            root: PathBuf::new(),
        })
    }

    fn table_backend() -> Arc<dyn EvalBackend> {
        Arc::new(FnBackend::new(|artifact: &str, ex: &str| {
            let v: f64 = artifact.parse().map_err(|_| "unparseable".to_string())?;
            Ok(if ex == "a" { v } else { 1.0 - v })
        }))
    }

    #[test]
    fn mean_contract() {
        let ev = Evaluator::new(problem(Direction::Maximize), table_backend());
        let r = ev.evaluate("1.0", &["a".into(), "b".into()]).unwrap();
        assert_eq!(r.score, 0.5);
        assert_eq!(r.per_instance_scores["a"], 1.0);
        let f = ev.evaluate("x", &["a".into()]).unwrap();
        assert!(f.is_failure());
        assert_eq!(f.error.as_deref(), Some("unparseable"));
        assert!(ev.evaluate("1", &["zz".into()]).is_err());
    }

    #[test]
    fn minimize_round_trip() {
        let ev = Evaluator::new(problem(Direction::Minimize), table_backend());
        let r = ev.evaluate("0.25", &["a".into()]).unwrap();
        assert_eq!(r.score, -0.25);
        assert_eq!(Direction::Minimize.to_display(r.score), 0.25);
    }

    #[test]
    fn cascade_boundary() {
        let ev = Evaluator::new(problem(Direction::Maximize), table_backend());
        let active: Vec<String> = ev.problem().discovery_set.clone();
        let cfg = CascadeConfig {
            enabled: true,
            ..Default::default()
        };
        assert_eq!(cfg.screening_set(&active), vec!["a".to_string()]);
        // Subset score equals the artifact value on example "a".
        let out = cascade_prefilter(&ev, "0.79", &active, 1.0, &cfg).unwrap();
        assert!(out.rejected());
        let out = cascade_prefilter(&ev, "0.8", &active, 1.0, &cfg).unwrap();
        assert_eq!(out, CascadeOutcome::Passed { subset_score: 0.8, rollouts_used: 0 });
        let off = CascadeConfig::default();
        assert_eq!(cascade_prefilter(&ev, "0.0", &active, 1.0, &off).unwrap(), CascadeOutcome::Pass);
    }

    #[test]
    fn cascade_on_minimized_costs() {
        let ev = Evaluator::new(problem(Direction::Minimize), table_backend());
        let active: Vec<String> = ev.problem().discovery_set.clone();
        let cfg = CascadeConfig {
            enabled: true,
            ..Default::default()
        };
        // Best cost 10 (canonical -10): costs up to 12 pass, anything worse is screened out.
        let out = cascade_prefilter(&ev, "12", &active, -10.0, &cfg).unwrap();
        assert_eq!(out, CascadeOutcome::Passed { subset_score: -12.0, rollouts_used: 0 });
        assert!(!cascade_prefilter(&ev, "9", &active, -10.0, &cfg).unwrap().rejected());
        assert!(cascade_prefilter(&ev, "12.5", &active, -10.0, &cfg).unwrap().rejected());
    }

    #[test]
    fn restricted_result() {
        let r = EvalResult::from_scores([("a".to_string(), 1.0), ("b".to_string(), 0.0)].into(), 0.1);
        assert_eq!(r.restricted_to(&["a".into()]).score, 1.0);
        assert!(r.restricted_to(&["q".into()]).is_failure());
    }
}
