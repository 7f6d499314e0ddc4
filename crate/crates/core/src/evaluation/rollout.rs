use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalBackend, EvalResult};
use crate::error::{Error, Result};
use crate::gateway::{Gateway, Message, Registry, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutExample {
    pub id: String,
    pub input: String,
    #[serde(default)]
    pub expected: String,
}

impl RolloutExample {
    /// Reads one JSON object per non-empty line.
    pub fn read_jsonl(path: &Path) -> Result<Vec<RolloutExample>> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::config(format!("opening examples {}: {e}", path.display())))?;
        let mut out = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(
                serde_json::from_str(&line)
                    .map_err(|e| Error::config(format!("{} line {}: {e}", path.display(), i + 1)))?,
            );
        }
        Ok(out)
    }
}

/// Built-in per-example scorers for task-model outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    /// 1 when the trimmed output equals the trimmed expected answer.
    #[default]
    ExactMatch,
    /// 1 when the expected answer occurs in the output, ignoring case.
    Contains,
}

impl Scorer {
    pub fn score(self, example: &RolloutExample, output: &str) -> f64 {
        let hit = match self {
            Scorer::ExactMatch => output.trim() == example.expected.trim(),
            Scorer::Contains => output
                .to_lowercase()
                .contains(&example.expected.trim().to_lowercase()),
        };
        if hit {
            1.0
        } else {
            0.0
        }
    }
}

type ScoreFn = dyn Fn(&RolloutExample, &str) -> f64 + Send + Sync;

/// Treats the artifact as a system prompt and runs the task model once per example.
pub struct RolloutBackend {
    gateway: Arc<Gateway>,
    registry: Registry,
    examples: BTreeMap<String, RolloutExample>,
    scorer: Arc<ScoreFn>,
    rng: Mutex<ChaCha8Rng>,
}

impl RolloutBackend {
    pub fn new(
        gateway: Arc<Gateway>,
        registry: Registry,
        examples: Vec<RolloutExample>,
        scorer: Arc<ScoreFn>,
        seed: u64,
    ) -> Result<Self> {
        if !registry.has_role(Role::TaskModel) {
            return Err(Error::config("rollout evaluation needs a task_model route"));
        }
        Ok(RolloutBackend {
            gateway,
            registry,
            examples: examples.into_iter().map(|e| (e.id.clone(), e)).collect(),
            scorer,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        })
    }

    pub fn with_builtin(
        gateway: Arc<Gateway>,
        registry: Registry,
        examples: Vec<RolloutExample>,
        scorer: Scorer,
        seed: u64,
    ) -> Result<Self> {
        RolloutBackend::new(gateway, registry, examples, Arc::new(move |e, o| scorer.score(e, o)), seed)
    }
}

impl EvalBackend for RolloutBackend {
    fn evaluate(&self, artifact: &str, examples: &[String], _timeout_s: f64) -> Result<EvalResult> {
        let start = std::time::Instant::now();
        let mut scores = BTreeMap::new();
        let mut rollouts = 0u64;
        for id in examples {
            let ex = self
                .examples
                .get(id)
                .ok_or_else(|| Error::config(format!("no rollout data for example {id:?}")))?;
            let route = self.registry.sample_route(Role::TaskModel, &mut *self.rng.lock().unwrap())?.clone();
            let messages = [Message::system(artifact), Message::user(&ex.input)];
            rollouts += 1;
            match self.gateway.complete_chat(&route, &messages, None) {
                Ok(c) => {
                    scores.insert(id.clone(), (self.scorer)(ex, &c.text));
                }
                Err(e @ Error::Budget(_)) => return Err(e),
                Err(e) => {
                    let mut r = EvalResult::failure(format!("rollout on {id} failed: {e}"), start.elapsed().as_secs_f64());
                    r.rollouts_used = rollouts;
                    return Ok(r);
                }
            }
        }
        let mut r = EvalResult::from_scores(scores, start.elapsed().as_secs_f64());
        r.rollouts_used = rollouts;
        Ok(r)
    }
}
