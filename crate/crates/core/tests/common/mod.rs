//! Shared fixtures: a seven-job single-machine scheduling problem and a scripted model.
#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use evoharness_core::descriptors::{DescriptorBuilder, DescriptorSpec};
use evoharness_core::evaluation::{BackendConfig, Direction, Evaluator, FnBackend, ProblemPackage};
use evoharness_core::gateway::{ChatRequest, ChatResponse, Usage};
use evoharness_core::Result;

pub const PROC: [u64; 7] = [3, 1, 4, 2, 5, 2, 3];
pub const WEIGHT: [u64; 7] = [2, 5, 1, 4, 3, 2, 6];

/// Adjacent-swap walk from the worst order to the optimum.
pub const PATH: [[usize; 7]; 22] = [
    [2, 4, 0, 5, 6, 3, 1],
    [4, 2, 0, 5, 6, 3, 1],
    [4, 0, 2, 5, 6, 3, 1],
    [4, 0, 5, 2, 6, 3, 1],
    [4, 0, 5, 6, 2, 3, 1],
    [4, 0, 5, 6, 3, 2, 1],
    [4, 0, 5, 6, 3, 1, 2],
    [0, 4, 5, 6, 3, 1, 2],
    [0, 5, 4, 6, 3, 1, 2],
    [0, 5, 6, 4, 3, 1, 2],
    [0, 5, 6, 3, 4, 1, 2],
    [0, 5, 6, 3, 1, 4, 2],
    [5, 0, 6, 3, 1, 4, 2],
    [5, 6, 0, 3, 1, 4, 2],
    [5, 6, 3, 0, 1, 4, 2],
    [5, 6, 3, 1, 0, 4, 2],
    [6, 5, 3, 1, 0, 4, 2],
    [6, 3, 5, 1, 0, 4, 2],
    [6, 3, 1, 5, 0, 4, 2],
    [3, 6, 1, 5, 0, 4, 2],
    [3, 1, 6, 5, 0, 4, 2],
    [1, 3, 6, 5, 0, 4, 2],
];

/// Total weighted completion time.
pub fn cost(order: &[usize]) -> u64 {
    let mut t = 0;
    let mut total = 0;
    for &j in order {
        t += PROC[j];
        total += WEIGHT[j] * t;
    }
    total
}

fn permutations(prefix: &mut Vec<usize>, left: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if left.is_empty() {
        out.push(prefix.clone());
        return;
    }
    for i in 0..left.len() {
        let x = left.remove(i);
        prefix.push(x);
        permutations(prefix, left, out);
        prefix.pop();
        left.insert(i, x);
    }
}

/// Exhaustive minimum over all orders.
pub fn brute_force_optimum() -> (Vec<usize>, u64) {
    let mut all = Vec::new();
    permutations(&mut Vec::new(), &mut (0..PROC.len()).collect(), &mut all);
    all.into_iter()
        .map(|p| {
            let c = cost(&p);
            (p, c)
        })
        .min_by_key(|(p, c)| (*c, p.clone()))
        .expect("non-empty")
}

/// Order proposed by the k-th usable reply (1-based).
pub fn scripted_order(k: usize) -> [usize; 7] {
    if k % 5 == 0 {
        PATH[0]
    } else {
        PATH[(k / 4).min(PATH.len() - 1)]
    }
}

/// Three source layouts so the structural descriptor varies between replies.
pub fn program(k: usize, order: &[usize]) -> String {
    let list = format!("{order:?}");
    match k % 3 {
        0 => format!("def solve(jobs):\n    return {list}"),
        1 => format!(
            "def solve(jobs):\n    order = {list}\n    if len(order) != len(jobs):\n        return list(range(len(jobs)))\n    return order"
        ),
        _ => format!("def solve(jobs):\n    order = {list}\n    return [i for i in order if i >= 0]"),
    }
}

/// First bracketed integer list in the artifact.
pub fn parse_order(artifact: &str) -> std::result::Result<Vec<usize>, String> {
    let mut rest = artifact;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        let close = after.find(']').ok_or("unbalanced brackets")?;
        let parsed: std::result::Result<Vec<usize>, _> =
            after[..close].split(',').map(|s| s.trim().parse::<usize>()).collect();
        if let Ok(v) = parsed {
            let mut sorted = v.clone();
            sorted.sort_unstable();
            if sorted != (0..PROC.len()).collect::<Vec<_>>() {
                return Err(format!("{v:?} is not a permutation of the jobs"));
            }
            return Ok(v);
        }
        rest = &after[close + 1..];
    }
    Err("no job order found".into())
}

pub fn toy_problem() -> Arc<ProblemPackage> {
    Arc::new(ProblemPackage {
        title: "Weighted Completion Time".into(),
        description: "Order seven jobs on one machine to minimise the weighted sum of completion times.".into(),
        function_signature: "def solve(jobs: list[tuple[int, int]]) -> list[int]:".into(),
        direction: Direction::Minimize,
        discovery_set: vec!["toy".into()],
        backend: BackendConfig::ProgramExec {
            command: vec!["unused".into()],
            problem_id: Some("toy".into()),
        },
        eval_timeout_s: 10.0,
        failure_score: 0.0,
        seed_artifact: None,
        root: Default::default(),
    })
}

pub fn toy_evaluator() -> Evaluator {
    let backend = FnBackend::new(|artifact: &str, _example: &str| parse_order(artifact).map(|o| cost(&o) as f64));
    Evaluator::new(toy_problem(), Arc::new(backend))
}

pub fn toy_descriptors() -> DescriptorBuilder {
    DescriptorBuilder::new(DescriptorSpec::default_code())
}

pub const PROMPT_TOKENS: u64 = 1000;
pub const COMPLETION_TOKENS: u64 = 200;
pub const ADVICE: &str = "Put jobs with a high weight per unit of processing time first.";

#[derive(Default)]
pub struct ScriptLog {
    pub prompts: Vec<String>,
    pub produced: usize,
    pub garbage_sent: bool,
}

/// Model stand-in: the k-th reply that carries code proposes `scripted_order(k)`; one
/// mutation reply after the 25th candidate carries no code at all.
pub fn scripted_model(log: Arc<Mutex<ScriptLog>>) -> impl Fn(&ChatRequest) -> Result<ChatResponse> + Send + Sync {
    move |req: &ChatRequest| {
        let prompt = req.messages.last().map(|m| m.content.clone()).unwrap_or_default();
        let mut s = log.lock().unwrap();
        s.prompts.push(prompt.clone());
        let usage = Some(Usage {
            prompt_tokens: PROMPT_TOKENS,
            completion_tokens: COMPLETION_TOKENS,
        });
        let text = if prompt.starts_with("You are reviewing") {
            ADVICE.to_string()
        } else if !s.garbage_sent && s.produced >= 25 && prompt.contains("Write an improved version") {
            s.garbage_sent = true;
            "I would rather describe the idea in words.".to_string()
        } else {
            s.produced += 1;
            let k = s.produced;
            format!("Here is the program.\n```python\n{}\n```\n", program(k, &scripted_order(k)))
        };
        Ok(ChatResponse { text, usage })
    }
}

use evoharness_core::evolution::{run_search, Budget, RunConfig, RunOutcome, SearchSetup};
use evoharness_core::gateway::{default_tariffs, Gateway, Registry, RegistryPlan, RetryPolicy};

/// Configuration of the scripted end-to-end run: two seeds with three variants each,
/// one worker, 100 evaluations, paradigm shifts every 10.
pub fn toy_config() -> RunConfig {
    let mut cfg = RunConfig {
        n_diverse_seeds: 2,
        n_variants_per_seed: 3,
        n_llm_workers: 1,
        n_eval_processes: 1,
        budget: Budget::Evals(100),
        n_centroids: 10,
        rng_seed: 7,
        ..RunConfig::default()
    };
    cfg.pe.monitor_poll_s = 0.0;
    cfg
}

pub struct ToyRun {
    pub outcome: RunOutcome,
    pub script: Arc<Mutex<ScriptLog>>,
    pub gateway: Gateway,
}

pub fn run_toy(config: RunConfig, registry: Registry, out_dir: Option<std::path::PathBuf>) -> Result<ToyRun> {
    let script = Arc::new(Mutex::new(ScriptLog::default()));
    let gateway = Gateway::new(scripted_model(script.clone()), default_tariffs()).with_retry(RetryPolicy::immediate(0));
    let setup = SearchSetup {
        evaluator: toy_evaluator(),
        gateway: &gateway,
        registry,
        descriptors: toy_descriptors(),
        config,
        out_dir,
    };
    let outcome = run_search(&setup)?;
    drop(setup);
    Ok(ToyRun {
        outcome,
        script,
        gateway,
    })
}

pub fn default_registry() -> Registry {
    Registry::role_routed(&RegistryPlan::default()).unwrap()
}

/// Improvements of the scripted sequence, worked out by hand from `cost` and
/// `scripted_order`: (evaluation count, best cost so far).
pub const HAND_TRAJECTORY: [(u64, u64); 21] = [
    (1, 361),
    (4, 354),
    (8, 349),
    (12, 343),
    (16, 322),
    (21, 308),
    (24, 289),
    (28, 288),
    (32, 284),
    (36, 263),
    (41, 249),
    (44, 227),
    (48, 225),
    (52, 213),
    (56, 205),
    (61, 192),
    (64, 186),
    (68, 182),
    (72, 174),
    (81, 165),
    (84, 159),
];

pub fn hand_best(count: u64) -> f64 {
    let cost = HAND_TRAJECTORY.iter().take_while(|(k, _)| *k <= count).last().unwrap().1;
    -(cost as f64)
}
