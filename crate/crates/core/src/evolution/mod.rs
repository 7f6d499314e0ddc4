//! Two-phase search: seed and calibrate the archive, then run the asynchronous
//! mutate-evaluate loop with periodic paradigm shifts.

mod config;
mod ledger;
mod select;

pub use config::{AblationFlags, Budget, MetaAdviceConfig, MutationMode, PeConfig, ProxyConfig, RunConfig};
pub use ledger::{EvalRecord, EventKind, LedgerEvent, PeEvent, RunLedger};
pub use select::{last_multiple, pe_trigger_check, sample_parent, softmax, truncate_on_whitespace};

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{Archive, ArchiveSnapshot, Centroids, InsertOutcome, PlacementMode, WelfordState};
use crate::candidate::{Candidate, CandidateId, Origin};
use crate::descriptors::DescriptorBuilder;
use crate::error::{Error, Result};
use crate::evaluation::{cascade_prefilter, ArtifactKind, CascadeOutcome, Direction, EvalResult, Evaluator};
use crate::gateway::{Gateway, Message, ModelRoute, ModelUsage, Registry, Role, Usd};
use crate::prompts::{
    parse_code_block, parse_diff_and_apply, parse_prompt_tags, render_template, PromptContext, Scored, TemplateKind,
};
use crate::proxy::{greedy_select, split_seed, CalibrationMatrix, ProxySubset};

/// Everything a run needs. The gateway must already carry the dollar budget when
/// `config.budget` is in USD.
pub struct SearchSetup<'a> {
    pub evaluator: Evaluator,
    pub gateway: &'a Gateway,
    pub registry: Registry,
    pub descriptors: DescriptorBuilder,
    pub config: RunConfig,
    /// Where `events.jsonl`, archive snapshots and `summary.json` are written.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EvalBudget,
    RolloutBudget,
    UsdBudget,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub best: Option<Candidate>,
    pub eval_count: u64,
    pub total_usd: Usd,
    pub stop_reason: StopReason,
    pub pe_events: Vec<PeEvent>,
    pub events: Vec<LedgerEvent>,
    pub snapshot: ArchiveSnapshot,
    pub proxy: Option<ProxySubset>,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub problem: String,
    pub direction: Direction,
    pub rng_seed: u64,
    pub eval_count: u64,
    /// Canonical (maximize) orientation.
    pub best_score: Option<f64>,
    /// In the problem's own orientation.
    pub best_display_score: Option<f64>,
    pub best_candidate_id: Option<CandidateId>,
    pub best_artifact: Option<String>,
    pub total_usd: Usd,
    pub stop_reason: StopReason,
    pub per_model: BTreeMap<String, ModelUsage>,
    pub pe_events: Vec<PeEvent>,
    pub proxy_ids: Option<Vec<String>>,
    pub occupied_cells: usize,
    pub n_cells: usize,
}

struct Generated {
    artifact: String,
    origin: Origin,
    parent_id: Option<CandidateId>,
    model: Option<String>,
    input_tokens: u64,
    output_tokens: u64,
    usd: Usd,
}

enum Gen {
    Artifact(Generated),
    Failed { usd: Usd, reason: String },
    Stopped,
}

struct Committed {
    accepted: bool,
    candidate: Candidate,
}

struct Pending {
    gen: Generated,
    parent: Option<usize>,
    result: EvalResult,
}

struct State {
    archive: Option<Archive>,
    ledger: RunLedger,
    successes: u64,
    in_flight: u64,
    rollouts_used: u64,
    rollouts_reserved: u64,
    best: f64,
    stop: Option<StopReason>,
    fatal: Option<Error>,
    feedback: VecDeque<String>,
    meta_advice: Option<String>,
    pe_fired: BTreeSet<u64>,
    meta_fired: BTreeSet<u64>,
    active: Vec<String>,
    phase1_end: u64,
    failure_streak: u64,
}

impl State {
    fn halted(&self) -> bool {
        self.stop.is_some() || self.fatal.is_some()
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'s>(&'s Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// A reserved unit of evaluation budget. Dropping it unused gives the budget back.
struct Slot<'e, 'a> {
    engine: &'e Engine<'a>,
    rollouts: u64,
    open: bool,
}

impl Slot<'_, '_> {
    fn close(&mut self, st: &mut State, result: Option<&EvalResult>) {
        if !self.open {
            return;
        }
        self.open = false;
        st.in_flight -= 1;
        st.rollouts_reserved -= self.rollouts;
        if let Some(r) = result {
            st.rollouts_used += r.rollouts_used;
            if !r.is_failure() {
                st.successes += 1;
            }
        }
    }
}

impl Drop for Slot<'_, '_> {
    fn drop(&mut self) {
        if self.open {
            let mut st = self.engine.lock();
            self.close(&mut st, None);
            drop(st);
            self.engine.changed.notify_all();
        }
    }
}

const FEEDBACK_KEEP: usize = 64;
const FEEDBACK_CHARS: usize = 2000;
const META_RECENT: usize = 20;

fn tail(text: &str, max_chars: usize) -> String {
    let n = text.chars().count();
    if n <= max_chars {
        return text.to_string();
    }
    text.chars().skip(n - max_chars).collect()
}

struct Engine<'a> {
    setup: &'a SearchSetup<'a>,
    kind: ArtifactKind,
    state: Mutex<State>,
    changed: Condvar,
    evals: Semaphore,
    next_id: AtomicU64,
}

impl<'a> Engine<'a> {
    fn cfg(&self) -> &RunConfig {
        &self.setup.config
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap()
    }

    fn prompt_mode(&self) -> bool {
        self.kind == ArtifactKind::Prompt
    }

    fn halt(&self, reason: StopReason) {
        let mut st = self.lock();
        st.stop.get_or_insert(reason);
        drop(st);
        self.changed.notify_all();
    }

    fn fail(&self, e: Error) {
        let mut st = self.lock();
        st.fatal.get_or_insert(e);
        drop(st);
        self.changed.notify_all();
    }

    fn halted(&self) -> bool {
        self.lock().halted()
    }

    fn rollouts_per_eval(&self, active: &[String]) -> u64 {
        if self.kind != ArtifactKind::Prompt {
            return 0;
        }
        let screen = if self.cfg().cascade.enabled {
            self.cfg().cascade.screening_set(active).len()
        } else {
            0
        };
        (active.len() + screen) as u64
    }

    fn budget_left(&self, st: &State) -> bool {
        match self.cfg().budget {
            Budget::Evals(n) => st.successes + st.in_flight < n,
            Budget::Rollouts(n) => {
                st.rollouts_used + st.rollouts_reserved + self.rollouts_per_eval(&st.active) <= n
            }
            Budget::Usd(_) => !self.setup.gateway.budget_exhausted(),
        }
    }

    /// Claim budget for one evaluation, waiting while in-flight work might still use up
    /// the remainder. `None` once the run is over.
    fn reserve(&self) -> Option<Slot<'_, 'a>> {
        let mut st = self.lock();
        loop {
            if st.halted() {
                return None;
            }
            let need = self.rollouts_per_eval(&st.active);
            let stop = match self.cfg().budget {
                Budget::Evals(n) if st.successes >= n => Some(StopReason::EvalBudget),
                Budget::Rollouts(n) if st.rollouts_used + need > n && st.in_flight == 0 => {
                    Some(StopReason::RolloutBudget)
                }
                Budget::Usd(_) if self.setup.gateway.budget_exhausted() => Some(StopReason::UsdBudget),
                _ => None,
            };
            if let Some(reason) = stop {
                st.stop = Some(reason);
                drop(st);
                self.changed.notify_all();
                return None;
            }
            if self.budget_left(&st) {
                st.in_flight += 1;
                st.rollouts_reserved += need;
                return Some(Slot {
                    engine: self,
                    rollouts: need,
                    open: true,
                });
            }
            st = self.changed.wait(st).unwrap();
        }
    }

    fn base_context(&self) -> PromptContext {
        let p = self.setup.evaluator.problem();
        PromptContext {
            problem_title: p.title.clone(),
            problem_description: p.description.clone(),
            function_signature: p.function_signature.clone(),
            ..Default::default()
        }
    }

    fn note_failure(&self, st: &mut State) {
        st.failure_streak += 1;
        let limit = self.cfg().max_consecutive_failures;
        if limit > 0 && st.failure_streak >= limit && st.fatal.is_none() {
            st.fatal = Some(Error::Fatal(format!(
                "{limit} consecutive generations or evaluations failed; last feedback: {}",
                st.feedback.back().map_or("none", String::as_str)
            )));
            self.changed.notify_all();
        }
    }

    fn push_feedback(st: &mut State, text: String) {
        st.feedback.push_back(tail(&text, FEEDBACK_CHARS));
        while st.feedback.len() > FEEDBACK_KEEP {
            st.feedback.pop_front();
        }
    }

    fn recent_feedback(&self, st: &State) -> Vec<String> {
        let n = self.cfg().feedback_window.min(st.feedback.len());
        st.feedback.iter().skip(st.feedback.len() - n).cloned().collect()
    }

    /// Render, call the model and parse its reply.
    fn generate(
        &self,
        kind: TemplateKind,
        ctx: &PromptContext,
        route: &ModelRoute,
        origin: Origin,
        parent: Option<(&str, CandidateId)>,
    ) -> Result<Gen> {
        let prompt = render_template(kind, ctx)?;
        let completion = match self.setup.gateway.complete_chat(route, &[Message::user(prompt)], None) {
            Ok(c) => c,
            Err(Error::Budget(msg)) => {
                log::info!("stopping: {msg}");
                self.halt(StopReason::UsdBudget);
                return Ok(Gen::Stopped);
            }
            Err(e @ (Error::Transport { .. } | Error::Http { .. })) => {
                let reason = e.to_string();
                let mut st = self.lock();
                st.ledger.append(EventKind::GenerationFailed {
                    origin,
                    model: Some(route.model_id.clone()),
                    usd: Usd::ZERO,
                    error: reason.clone(),
                })?;
                self.note_failure(&mut st);
                return Ok(Gen::Failed { usd: Usd::ZERO, reason });
            }
            Err(e) => return Err(e),
        };
        let parsed = if kind.is_prompt_mode() {
            parse_prompt_tags(&completion.text)
        } else if kind == TemplateKind::MutationDiff {
            parse_diff_and_apply(parent.map_or("", |p| p.0), &completion.text)
        } else {
            parse_code_block(&completion.text)
        };
        match parsed {
            Ok(artifact) => Ok(Gen::Artifact(Generated {
                artifact,
                origin,
                parent_id: parent.map(|p| p.1),
                model: Some(completion.model),
                input_tokens: completion.input_tokens,
                output_tokens: completion.output_tokens,
                usd: completion.usd,
            })),
            Err(pf) => {
                let reason = pf.to_string();
                let mut st = self.lock();
                st.ledger.append(EventKind::GenerationFailed {
                    origin,
                    model: Some(completion.model),
                    usd: completion.usd,
                    error: reason.clone(),
                })?;
                Self::push_feedback(
                    &mut st,
                    format!("The response could not be used ({reason}). End of the response:\n{}", tail(&pf.raw, 600)),
                );
                self.note_failure(&mut st);
                Ok(Gen::Failed {
                    usd: completion.usd,
                    reason,
                })
            }
        }
    }

    /// Screen (when enabled) and evaluate on `subset`, or on the active set.
    /// `None` when the dollar budget ran out mid-evaluation.
    fn evaluate(&self, artifact: &str, subset: Option<&[String]>) -> Result<Option<(EvalResult, bool)>> {
        let (active, best) = {
            let st = self.lock();
            (subset.map_or_else(|| st.active.clone(), <[String]>::to_vec), st.best)
        };
        let _permit = self.evals.acquire();
        let evaluator = &self.setup.evaluator;
        let run = || -> Result<(EvalResult, bool)> {
            let screened = match cascade_prefilter(evaluator, artifact, &active, best, &self.cfg().cascade)? {
                CascadeOutcome::Rejected { result, .. } => return Ok((result, true)),
                CascadeOutcome::Passed { rollouts_used, .. } => rollouts_used,
                CascadeOutcome::Pass => 0,
            };
            let mut r = evaluator.evaluate(artifact, &active)?;
            r.rollouts_used += screened;
            Ok((r, false))
        };
        match run() {
            Ok(x) => Ok(Some(x)),
            Err(Error::Budget(msg)) => {
                log::info!("stopping during evaluation: {msg}");
                self.halt(StopReason::UsdBudget);
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    fn candidate(&self, id: CandidateId, gen: &Generated, result: &EvalResult) -> Result<Candidate> {
        let mut c = Candidate::new(id, gen.artifact.clone(), gen.origin);
        c.parent_id = gen.parent_id;
        c.cost_usd = gen.usd.as_dollars();
        c.runtime_s = Some(result.runtime_s);
        if result.is_failure() {
            c.error = Some(result.error.clone().unwrap_or_else(|| "evaluation failed".into()));
            return Ok(c);
        }
        let built = self.setup.descriptors.build(&c.artifact, result)?;
        if built.descriptor.raw.iter().all(|v| v.is_finite()) {
            c.descriptor = built.descriptor;
            c.score = result.score;
            c.per_instance_scores = Some(result.per_instance_scores.clone());
        } else {
            c.error = Some(format!("non-finite descriptor {:?}", built.descriptor.raw));
        }
        Ok(c)
    }

    fn record(gen: &Generated, cand: &Candidate, result: &EvalResult, cascade_rejected: bool) -> EvalRecord {
        EvalRecord {
            candidate_id: cand.id,
            origin: gen.origin,
            parent_id: gen.parent_id,
            model: gen.model.clone(),
            input_tokens: gen.input_tokens,
            output_tokens: gen.output_tokens,
            usd: gen.usd,
            score: (!result.is_failure()).then_some(result.score),
            success: !result.is_failure() && !cascade_rejected,
            cascade_rejected,
            accepted: false,
            cell: None,
            eval_count: 0,
            best_so_far: None,
            error: cand.error.clone().or_else(|| result.error.clone()),
            rollouts: result.rollouts_used,
        }
    }

    fn write_checkpoint(&self, st: &State) -> Result<()> {
        let (Some(dir), Some(archive)) = (&self.setup.out_dir, &st.archive) else {
            return Ok(());
        };
        let dir = dir.join("checkpoints");
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("archive_{:06}.json", st.successes));
        std::fs::write(path, serde_json::to_vec_pretty(&archive.snapshot())?)?;
        Ok(())
    }

    /// Count, insert and log one Phase-2 evaluation in a single critical section.
    fn commit(&self, mut slot: Slot<'_, 'a>, gen: Generated, result: EvalResult, cascade_rejected: bool) -> Result<Committed> {
        let id = CandidateId(self.next_id.fetch_add(1, Ordering::SeqCst));
        let mut cand = self.candidate(id, &gen, &result)?;
        if cascade_rejected {
            cand.score = crate::candidate::FAILED_SCORE;
            cand.error.get_or_insert_with(|| "screened out by the cascade filter".into());
        }
        let mut rec = Self::record(&gen, &cand, &result, cascade_rejected);
        if cascade_rejected {
            rec.error = None;
        }
        let mut st = self.lock();
        let counted = if cascade_rejected {
            slot.close(&mut st, None);
            st.rollouts_used += result.rollouts_used;
            false
        } else {
            slot.close(&mut st, Some(&result));
            !result.is_failure()
        };
        if counted {
            st.best = st.best.max(result.score);
            st.failure_streak = 0;
        }
        let archive = st.archive.as_mut().expect("archive exists in Phase 2");
        let outcome = if cand.is_failed() {
            InsertOutcome::RejectedFailed
        } else {
            archive.try_insert(cand.clone())?
        };
        if !counted && !cascade_rejected {
            let err = rec.error.clone().unwrap_or_default();
            Self::push_feedback(&mut st, format!("Candidate {} ({}) failed: {err}", id, gen.origin.as_str()));
            self.note_failure(&mut st);
        }
        rec.accepted = outcome.accepted();
        rec.cell = outcome.cell();
        rec.eval_count = st.successes;
        rec.best_so_far = st.best.is_finite().then_some(st.best);
        st.ledger.append(EventKind::Evaluation(rec))?;
        let interval = self.cfg().checkpoint_interval;
        if counted && interval > 0 && st.successes % interval == 0 {
            self.write_checkpoint(&st)?;
        }
        drop(st);
        self.changed.notify_all();
        Ok(Committed {
            accepted: outcome.accepted(),
            candidate: cand,
        })
    }

    fn evaluate_and_commit(&self, slot: Slot<'_, 'a>, gen: Generated) -> Result<Option<Committed>> {
        match self.evaluate(&gen.artifact, None)? {
            Some((result, rejected)) => Ok(Some(self.commit(slot, gen, result, rejected)?)),
            None => Ok(None),
        }
    }

    fn seed_route(&self, rng: &mut ChaCha8Rng) -> Result<ModelRoute> {
        let role = if self.setup.registry.has_role(Role::ParadigmShift) {
            Role::ParadigmShift
        } else {
            Role::Mutation
        };
        Ok(self.setup.registry.sample_route(role, rng)?.clone())
    }

    fn variant_kind(&self) -> TemplateKind {
        if self.prompt_mode() {
            TemplateKind::PromptoptMutation
        } else {
            TemplateKind::PeVariant
        }
    }

    fn paradigm_kind(&self) -> TemplateKind {
        if self.prompt_mode() {
            TemplateKind::PromptoptParadigm
        } else {
            TemplateKind::ParadigmShift
        }
    }

    fn mutation_kind(&self, parent_len: usize) -> TemplateKind {
        if self.prompt_mode() {
            return TemplateKind::PromptoptMutation;
        }
        match self.cfg().mutation_mode {
            MutationMode::Full => TemplateKind::MutationFull,
            MutationMode::Diff => TemplateKind::MutationDiff,
            MutationMode::Auto if parent_len > self.cfg().diff_threshold_chars => TemplateKind::MutationDiff,
            MutationMode::Auto => TemplateKind::MutationFull,
        }
    }

    fn phase1_eval(&self, mut slot: Slot<'_, 'a>, artifact: &str, full: &[String]) -> Result<Option<EvalResult>> {
        let Some((result, _)) = self.evaluate(artifact, Some(full))? else {
            return Ok(None);
        };
        let mut st = self.lock();
        slot.close(&mut st, Some(&result));
        drop(st);
        self.changed.notify_all();
        Ok(Some(result))
    }

    fn phase1(&self) -> Result<Option<ProxySubset>> {
        let cfg = self.cfg();
        let problem = self.setup.evaluator.problem();
        let full = problem.discovery_set.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(cfg.rng_seed, 0));
        let mut seeds: Vec<Pending> = Vec::new();
        let mut transcript: Vec<String> = Vec::new();

        for i in 0..cfg.n_diverse_seeds {
            let Some(slot) = self.reserve() else { break };
            let gen = match (i, &problem.seed_artifact) {
                (0, Some(seed)) => Generated {
                    artifact: seed.clone(),
                    origin: Origin::Seed,
                    parent_id: None,
                    model: None,
                    input_tokens: 0,
                    output_tokens: 0,
                    usd: Usd::ZERO,
                },
                _ => {
                    let mut ctx = self.base_context();
                    let shown: Vec<Scored> = seeds
                        .iter()
                        .filter(|p| !p.result.is_failure() || self.prompt_mode())
                        .map(|p| Scored::new(p.gen.artifact.clone(), p.result.score))
                        .collect();
                    let kind = if self.prompt_mode() {
                        ctx.representatives = shown;
                        TemplateKind::PromptoptParadigm
                    } else {
                        ctx.parents = shown;
                        ctx.feedback = transcript.clone();
                        TemplateKind::DiverseSeed
                    };
                    let route = self.seed_route(&mut rng)?;
                    match self.generate(kind, &ctx, &route, Origin::Seed, None)? {
                        Gen::Artifact(g) => g,
                        Gen::Failed { reason, .. } => {
                            transcript.push(format!("seed attempt {}: {reason}", i + 1));
                            continue;
                        }
                        Gen::Stopped => break,
                    }
                }
            };
            let Some(result) = self.phase1_eval(slot, &gen.artifact, &full)? else { break };
            if let Some(err) = &result.error {
                transcript.push(format!("seed {} failed evaluation: {}", seeds.len() + 1, tail(err, FEEDBACK_CHARS)));
            }
            seeds.push(Pending {
                gen,
                parent: None,
                result,
            });
        }
        if seeds.is_empty() {
            return Err(Error::Fatal(format!(
                "no usable seed after {} attempts:\n{}",
                cfg.n_diverse_seeds,
                transcript.join("\n")
            )));
        }

        let jobs: Vec<usize> = (0..seeds.len())
            .flat_map(|s| std::iter::repeat(s).take(cfg.n_variants_per_seed))
            .collect();
        let results: Mutex<Vec<Option<Pending>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        let errors: Mutex<Vec<Error>> = Mutex::new(Vec::new());
        std::thread::scope(|s| {
            for _ in 0..cfg.n_llm_workers.min(jobs.len()) {
                s.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::SeqCst);
                    if k >= jobs.len() {
                        break;
                    }
                    match self.phase1_variant(k as u64, jobs[k], &seeds[jobs[k]], &full) {
                        Ok(Some(p)) => results.lock().unwrap()[k] = Some(p),
                        Ok(None) => {}
                        Err(e) => {
                            errors.lock().unwrap().push(e);
                            break;
                        }
                    }
                });
            }
        });
        if let Some(e) = errors.into_inner().unwrap().into_iter().next() {
            return Err(e);
        }
        let mut all = seeds;
        all.extend(results.into_inner().unwrap().into_iter().flatten());
        self.calibrate(all)
    }

    fn phase1_variant(&self, job: u64, seed_index: usize, seed: &Pending, full: &[String]) -> Result<Option<Pending>> {
        let Some(slot) = self.reserve() else { return Ok(None) };
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(self.cfg().rng_seed, 1_000_000 + job));
        let route = self.setup.registry.sample_route(Role::Mutation, &mut rng)?.clone();
        let mut ctx = self.base_context();
        ctx.parents = vec![Scored::new(seed.gen.artifact.clone(), seed.result.score)];
        let gen = match self.generate(self.variant_kind(), &ctx, &route, Origin::SeedVariant, None)? {
            Gen::Artifact(g) => g,
            Gen::Failed { .. } | Gen::Stopped => return Ok(None),
        };
        let Some(result) = self.phase1_eval(slot, &gen.artifact, full)? else { return Ok(None) };
        Ok(Some(Pending {
            gen,
            parent: Some(seed_index),
            result,
        }))
    }

    /// Optional proxy selection, then statistics, centroids and insertion of every
    /// Phase-1 candidate.
    fn calibrate(&self, mut all: Vec<Pending>) -> Result<Option<ProxySubset>> {
        let cfg = self.cfg();
        let problem = self.setup.evaluator.problem();
        let ids: Vec<CandidateId> = all
            .iter()
            .map(|_| CandidateId(self.next_id.fetch_add(1, Ordering::SeqCst)))
            .collect();
        for p in all.iter_mut() {
            p.gen.parent_id = p.parent.map(|i| ids[i]);
        }

        let proxy = match cfg.proxy.k_proxy {
            None => None,
            Some(k) => {
                let n_init = cfg.proxy.n_init.unwrap_or(all.len()).min(all.len());
                if n_init < 2 {
                    return Err(Error::Fatal(format!(
                        "proxy selection needs at least two Phase-1 candidates, have {n_init}"
                    )));
                }
                let fail = problem.direction.to_canonical(problem.failure_score);
                let values: Vec<Vec<f64>> = all[..n_init]
                    .iter()
                    .map(|p| {
                        problem
                            .discovery_set
                            .iter()
                            .map(|id| p.result.per_instance_scores.get(id).copied().unwrap_or(fail))
                            .collect()
                    })
                    .collect();
                let matrix = CalibrationMatrix::new(
                    ids[..n_init].iter().map(ToString::to_string).collect(),
                    problem.discovery_set.clone(),
                    values,
                )?;
                let subset = greedy_select(&matrix, k, cfg.proxy.weights)?;
                for p in all.iter_mut().filter(|p| !p.result.is_failure()) {
                    p.result = p.result.restricted_to(&subset.selected_ids);
                }
                let mut st = self.lock();
                st.active = subset.selected_ids.clone();
                st.ledger.append(EventKind::ProxySelected {
                    n_init,
                    selected_ids: subset.selected_ids.clone(),
                    rank_faithfulness: subset.rank_faithfulness,
                    separation: subset.separation,
                })?;
                Some(subset)
            }
        };

        let cands: Vec<Candidate> = all
            .iter()
            .zip(&ids)
            .map(|(p, &id)| self.candidate(id, &p.gen, &p.result))
            .collect::<Result<_>>()?;
        let dim = self.setup.descriptors.dim();
        let mut stats = WelfordState::new(dim);
        for c in cands.iter().filter(|c| !c.is_failed()) {
            stats.update(&c.descriptor.raw)?;
        }
        if stats.count() == 0 {
            return Err(Error::Fatal("no Phase-1 candidate evaluated successfully".into()));
        }
        let centroids = if cfg.ablation.no_bootstrapped_seeds {
            Centroids::grid(cfg.n_centroids, dim)?
        } else {
            let points: Vec<Vec<f64>> = cands
                .iter()
                .filter(|c| !c.is_failed())
                .map(|c| stats.normalize(&c.descriptor.raw))
                .collect::<Result<_>>()?;
            Centroids::fit(&points, cfg.n_centroids, PlacementMode::Calibrated, cfg.rng_seed)?
        };
        let mut archive = Archive::new(centroids, stats)?;

        let mut st = self.lock();
        let mut count = 0u64;
        let mut best = f64::NEG_INFINITY;
        for ((p, cand), _) in all.iter().zip(cands).zip(&ids) {
            let mut rec = Self::record(&p.gen, &cand, &p.result, false);
            if !p.result.is_failure() {
                count += 1;
                best = best.max(p.result.score);
            }
            let outcome = if cand.is_failed() {
                if let Some(err) = &rec.error {
                    Self::push_feedback(&mut st, format!("Candidate {} ({}) failed: {err}", cand.id, p.gen.origin.as_str()));
                }
                InsertOutcome::RejectedFailed
            } else {
                archive.try_insert_calibrated(cand)?
            };
            rec.accepted = outcome.accepted();
            rec.cell = outcome.cell();
            rec.eval_count = count;
            rec.best_so_far = best.is_finite().then_some(best);
            st.ledger.append(EventKind::Evaluation(rec))?;
        }
        debug_assert_eq!(count, st.successes);
        st.best = best;
        st.phase1_end = st.successes;
        let occupied = archive.occupied();
        st.archive = Some(archive);
        let eval_count = st.successes;
        st.ledger.append(EventKind::PhaseComplete {
            phase: 1,
            eval_count,
            occupied,
        })?;
        log::info!("phase 1 complete: {eval_count} evaluations, {occupied} cells occupied");
        Ok(proxy)
    }

    fn phase2(&self) -> Result<()> {
        let cfg = self.cfg();
        std::thread::scope(|s| {
            let monitor = (cfg.pe_active() && cfg.pe.monitor_poll_s > 0.0).then(|| {
                s.spawn(|| {
                    if let Err(e) = self.monitor() {
                        self.fail(e);
                    }
                })
            });
            let workers: Vec<_> = (0..cfg.n_llm_workers)
                .map(|w| {
                    s.spawn(move || {
                        if let Err(e) = self.worker(w) {
                            self.fail(e);
                        }
                    })
                })
                .collect();
            for h in workers {
                h.join().expect("worker thread panicked");
            }
            if !self.halted() {
                self.halt(StopReason::EvalBudget);
            }
            if let Some(h) = monitor {
                h.join().expect("monitor thread panicked");
            }
        });
        match self.lock().fatal.take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn monitor(&self) -> Result<()> {
        let poll = Duration::from_secs_f64(self.cfg().pe.monitor_poll_s);
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(self.cfg().rng_seed, u64::MAX));
        loop {
            let deadline = Instant::now() + poll;
            let mut st = self.lock();
            loop {
                if st.halted() {
                    return Ok(());
                }
                let now = Instant::now();
                if now >= deadline {
                    break;
                }
                st = self.changed.wait_timeout(st, deadline - now).unwrap().0;
            }
            drop(st);
            self.maybe_paradigm_shift(&mut rng)?;
        }
    }

    fn worker(&self, w: usize) -> Result<()> {
        let cfg = self.cfg();
        let temperature = cfg.sampler_temperatures[w % cfg.sampler_temperatures.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(cfg.rng_seed, 1 + w as u64));
        loop {
            if self.halted() {
                return Ok(());
            }
            self.maybe_paradigm_shift(&mut rng)?;
            self.maybe_meta_advice()?;
            let Some(slot) = self.reserve() else { return Ok(()) };
            self.mutation_step(slot, temperature, &mut rng)?;
        }
    }

    fn mutation_step(&self, slot: Slot<'_, 'a>, temperature: f64, rng: &mut ChaCha8Rng) -> Result<()> {
        let cfg = self.cfg();
        let mut ctx = self.base_context();
        let (parent_artifact, parent_id) = {
            let st = self.lock();
            let archive = st.archive.as_ref().expect("archive exists in Phase 2");
            let elites: Vec<&Candidate> = archive.elites().map(|(_, c)| c).collect();
            let scores: Vec<f64> = elites.iter().map(|c| c.score).collect();
            let drop_prob = if cfg.n_inspirations == 0 { 1.0 } else { cfg.inspiration_drop_prob };
            let (p, insp) = sample_parent(&scores, temperature, drop_prob, rng)?;
            ctx.parents = vec![Scored::new(elites[p].artifact.clone(), elites[p].score)];
            ctx.inspirations = insp
                .map(|i| Scored::new(elites[i].artifact.clone(), elites[i].score))
                .into_iter()
                .collect();
            ctx.feedback = self.recent_feedback(&st);
            ctx.meta_advice = st.meta_advice.clone();
            (elites[p].artifact.clone(), elites[p].id)
        };
        let route = self.setup.registry.sample_route(Role::Mutation, rng)?.clone();
        let kind = self.mutation_kind(parent_artifact.chars().count());
        if let Gen::Artifact(g) = self.generate(kind, &ctx, &route, Origin::Mutation, Some((&parent_artifact, parent_id)))? {
            self.evaluate_and_commit(slot, g)?;
        }
        Ok(())
    }

    fn maybe_paradigm_shift(&self, rng: &mut ChaCha8Rng) -> Result<()> {
        let cfg = self.cfg();
        if !cfg.pe_active() {
            return Ok(());
        }
        let fire_at = {
            let mut st = self.lock();
            if st.halted() || !self.budget_left(&st) {
                return Ok(());
            }
            let m = last_multiple(st.successes, cfg.pe.interval);
            if m < st.phase1_end || !pe_trigger_check(m, &cfg.pe, &mut st.pe_fired) {
                return Ok(());
            }
            m
        };
        self.run_paradigm_shift(fire_at, rng)
    }

    fn run_paradigm_shift(&self, fire_at: u64, rng: &mut ChaCha8Rng) -> Result<()> {
        let cfg = self.cfg();
        let mut event = PeEvent {
            eval_count_at_fire: fire_at,
            paradigm_generated: false,
            paradigm_accepted: false,
            variants_generated: 0,
            variants_accepted: 0,
            total_cost: Usd::ZERO,
        };
        let mut ctx = self.base_context();
        {
            let st = self.lock();
            let archive = st.archive.as_ref().expect("archive exists in Phase 2");
            let clusters = archive.cluster_occupied(cfg.pe.n_clusters, split_seed(cfg.rng_seed, fire_at))?;
            ctx.representatives = clusters
                .iter()
                .map(|c| Scored::new(c.representative.artifact.clone(), c.representative.score))
                .collect();
            ctx.n_evaluations = fire_at;
            ctx.n_regions = archive.occupied() as u64;
        }
        log::info!("paradigm shift at evaluation {fire_at}");
        let paradigm = 'paradigm: {
            let Some(slot) = self.reserve() else { break 'paradigm None };
            let route = self.setup.registry.sample_route(Role::ParadigmShift, rng)?.clone();
            let gen = match self.generate(self.paradigm_kind(), &ctx, &route, Origin::ParadigmShift, None)? {
                Gen::Artifact(g) => g,
                Gen::Failed { usd, .. } => {
                    event.total_cost += usd;
                    break 'paradigm None;
                }
                Gen::Stopped => break 'paradigm None,
            };
            event.paradigm_generated = true;
            event.total_cost += gen.usd;
            self.evaluate_and_commit(slot, gen)?
        };
        if let Some(p) = paradigm.filter(|p| p.accepted) {
            event.paradigm_accepted = true;
            let mut vctx = self.base_context();
            vctx.parents = vec![Scored::new(p.candidate.artifact.clone(), p.candidate.score)];
            for _ in 0..cfg.pe.n_variants {
                let Some(slot) = self.reserve() else { break };
                let route = self.setup.registry.sample_route(Role::Mutation, rng)?.clone();
                let parent = Some((p.candidate.artifact.as_str(), p.candidate.id));
                match self.generate(self.variant_kind(), &vctx, &route, Origin::PeVariant, parent)? {
                    Gen::Artifact(g) => {
                        event.variants_generated += 1;
                        event.total_cost += g.usd;
                        match self.evaluate_and_commit(slot, g)? {
                            Some(c) if c.accepted => event.variants_accepted += 1,
                            Some(_) => {}
                            None => break,
                        }
                    }
                    Gen::Failed { usd, .. } => event.total_cost += usd,
                    Gen::Stopped => break,
                }
            }
        }
        self.lock().ledger.append(EventKind::ParadigmShift(event))?;
        Ok(())
    }

    fn meta_prompt(&self, st: &State) -> String {
        let p = self.setup.evaluator.problem();
        let what = if self.prompt_mode() { "prompts" } else { "programs" };
        let recent: Vec<&EvalRecord> = st.ledger.evaluations().collect();
        let lines: Vec<String> = recent
            .iter()
            .skip(recent.len().saturating_sub(META_RECENT))
            .map(|r| {
                let outcome = match (&r.score, r.accepted, &r.error) {
                    (_, _, Some(e)) if !r.cascade_rejected => {
                        format!("failed: {}", e.lines().next().unwrap_or_default())
                    }
                    (Some(s), true, _) => format!("score {s}, kept in the archive"),
                    (Some(s), false, _) => format!("score {s}, not kept"),
                    (None, _, _) => "no score".to_string(),
                };
                format!("- {} ({}): {outcome}", r.candidate_id, r.origin.as_str())
            })
            .collect();
        let words = self.cfg().meta_advice.max_tokens as usize * 3 / 4;
        format!(
            "You are reviewing an automated search over candidate {what} for the problem below.\n\n\
             ## Problem\n{}\n{}\n\n## Recent attempts\n{}\n\nBest score so far: {}\n\n\
             In at most {words} words, advise the next attempts: which directions are paying off, \
             which kinds of change keep being discarded, and which errors to avoid. Reply with the advice only.",
            p.title,
            p.description,
            lines.join("\n"),
            crate::prompts::format_repr(st.best),
        )
    }

    fn maybe_meta_advice(&self) -> Result<()> {
        let cfg = self.cfg();
        if !cfg.meta_advice.enabled {
            return Ok(());
        }
        let Some(route) = self.setup.registry.routes_for(Role::MetaAdvice).next().cloned() else {
            return Ok(());
        };
        let (at, prompt) = {
            let mut st = self.lock();
            if st.halted() || !self.budget_left(&st) {
                return Ok(());
            }
            let m = last_multiple(st.successes, cfg.meta_advice.interval);
            if m == 0 || !st.meta_fired.insert(m) {
                return Ok(());
            }
            (m, self.meta_prompt(&st))
        };
        let kind = match self.setup.gateway.complete_chat(&route, &[Message::user(prompt)], None) {
            Ok(c) => {
                let limit = cfg.meta_advice.max_tokens as usize * 4;
                let (text, cut) = truncate_on_whitespace(c.text.trim(), limit);
                let truncated = cut || c.output_tokens > cfg.meta_advice.max_tokens as u64;
                self.lock().meta_advice = Some(text.clone());
                EventKind::MetaAdvice {
                    eval_count: at,
                    model: Some(c.model),
                    usd: c.usd,
                    text: Some(text),
                    truncated,
                    error: None,
                }
            }
            Err(Error::Budget(msg)) => {
                log::info!("stopping: {msg}");
                self.halt(StopReason::UsdBudget);
                return Ok(());
            }
            Err(e @ (Error::Transport { .. } | Error::Http { .. })) => EventKind::MetaAdvice {
                eval_count: at,
                model: Some(route.model_id.clone()),
                usd: Usd::ZERO,
                text: None,
                truncated: false,
                error: Some(e.to_string()),
            },
            Err(e) => return Err(e),
        };
        self.lock().ledger.append(kind)?;
        Ok(())
    }
}

fn check_setup(setup: &SearchSetup<'_>) -> Result<ArtifactKind> {
    let cfg = &setup.config;
    cfg.validate()?;
    let problem = setup.evaluator.problem();
    problem.validate()?;
    setup.descriptors.spec().validate(&problem.discovery_set)?;
    let kind = problem.artifact_kind();
    if !setup.registry.has_role(Role::Mutation) {
        return Err(Error::config("the model registry has no mutation route"));
    }
    if cfg.pe_active() && !setup.registry.has_role(Role::ParadigmShift) {
        return Err(Error::config("paradigm shifts are enabled but no paradigm_shift route is configured"));
    }
    if cfg.n_inspirations > 1 {
        return Err(Error::config("n_inspirations: at most one inspiration per mutation is supported"));
    }
    match cfg.budget {
        Budget::Usd(_) if setup.gateway.budget().is_none() => {
            return Err(Error::config("a USD budget needs a gateway created with that budget"));
        }
        Budget::Rollouts(_) if kind != ArtifactKind::Prompt => {
            return Err(Error::config("a rollout budget only applies to prompt problems"));
        }
        _ => {}
    }
    if kind == ArtifactKind::Prompt && problem.seed_artifact.is_none() {
        return Err(Error::config("prompt problems need a seed_artifact (the starting prompt)"));
    }
    if kind == ArtifactKind::Code && problem.function_signature.trim().is_empty() {
        return Err(Error::config("program problems need a function_signature"));
    }
    Ok(kind)
}

fn write_outputs(dir: &Path, snapshot: &ArchiveSnapshot, summary: &RunSummary) -> Result<()> {
    std::fs::write(dir.join("archive.json"), serde_json::to_vec_pretty(snapshot)?)?;
    std::fs::write(dir.join("summary.json"), serde_json::to_vec_pretty(summary)?)?;
    if let Some(a) = &summary.best_artifact {
        std::fs::write(dir.join("best_artifact.txt"), a)?;
    }
    Ok(())
}

/// Run both phases to budget exhaustion and return the best elite.
pub fn run_search(setup: &SearchSetup<'_>) -> Result<RunOutcome> {
    let kind = check_setup(setup)?;
    let ledger = match &setup.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            RunLedger::create(&dir.join("events.jsonl"))?
        }
        None => RunLedger::in_memory(),
    };
    let problem = setup.evaluator.problem();
    let engine = Engine {
        setup,
        kind,
        state: Mutex::new(State {
            archive: None,
            ledger,
            successes: 0,
            in_flight: 0,
            rollouts_used: 0,
            rollouts_reserved: 0,
            best: f64::NEG_INFINITY,
            stop: None,
            fatal: None,
            feedback: VecDeque::new(),
            meta_advice: None,
            pe_fired: BTreeSet::new(),
            meta_fired: BTreeSet::new(),
            active: problem.discovery_set.clone(),
            phase1_end: 0,
            failure_streak: 0,
        }),
        changed: Condvar::new(),
        evals: Semaphore::new(setup.config.n_eval_processes),
        next_id: AtomicU64::new(0),
    };
    let proxy = engine.phase1()?;
    engine.phase2()?;

    let mut st = engine.state.into_inner().unwrap();
    let archive = st.archive.take().expect("Phase 1 builds the archive");
    let stop_reason = st.stop.unwrap_or(StopReason::EvalBudget);
    let total_usd = setup.gateway.total_usd();
    let best = archive.best().cloned();
    st.ledger.append(EventKind::RunEnd {
        eval_count: st.successes,
        best_score: best.as_ref().map(|b| b.score),
        total_usd,
        stop_reason: format!("{stop_reason:?}"),
    })?;
    let snapshot = archive.snapshot();
    let pe_events: Vec<PeEvent> = st.ledger.pe_events().cloned().collect();
    if let Some(dir) = &setup.out_dir {
        let summary = RunSummary {
            problem: problem.problem_id(),
            direction: problem.direction,
            rng_seed: setup.config.rng_seed,
            eval_count: st.successes,
            best_score: best.as_ref().map(|b| b.score),
            best_display_score: best.as_ref().map(|b| problem.direction.to_display(b.score)),
            best_candidate_id: best.as_ref().map(|b| b.id),
            best_artifact: best.as_ref().map(|b| b.artifact.clone()),
            total_usd,
            stop_reason,
            per_model: setup.gateway.ledger().per_model().clone(),
            pe_events: pe_events.clone(),
            proxy_ids: proxy.as_ref().map(|p| p.selected_ids.clone()),
            occupied_cells: archive.occupied(),
            n_cells: archive.n_cells(),
        };
        write_outputs(dir, &snapshot, &summary)?;
    }
    log::info!(
        "run finished after {} evaluations, {} spent, best {:?}",
        st.successes,
        total_usd,
        best.as_ref().map(|b| b.score)
    );
    Ok(RunOutcome {
        best,
        eval_count: st.successes,
        total_usd,
        stop_reason,
        pe_events,
        events: st.ledger.events().to_vec(),
        snapshot,
        proxy,
    })
}
