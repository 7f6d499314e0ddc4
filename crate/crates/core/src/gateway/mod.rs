//! Model routing, chat completions with retry and budget enforcement, and dollar-cost
//! accounting.

mod cost;
mod transport;

pub use cost::{
    default_tariffs, CostEvent, CostLedger, ModelUsage, Tariff, Usd, GEMINI_3_FLASH, MIMO_V2_FLASH, QWEN3_30B,
    QWEN3_8B,
};
pub use transport::{
    ChatRequest, ChatResponse, ChatTransport, Message, OpenRouterTransport, ScriptedTransport, Usage,
    DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL,
};

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Mutation,
    ParadigmShift,
    TaskModel,
    MetaAdvice,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Mutation => "mutation",
            Role::ParadigmShift => "paradigm_shift",
            Role::TaskModel => "task_model",
            Role::MetaAdvice => "meta_advice",
        }
    }
}

pub const DEFAULT_TEMPERATURES: [f64; 4] = [0.3, 0.7, 1.0, 1.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRoute {
    pub model_id: String,
    pub role: Role,
    pub weight: f64,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_s: f64,
    pub input_usd_per_mtok: f64,
    pub output_usd_per_mtok: f64,
}

impl ModelRoute {
    pub fn tariff(&self) -> Result<Tariff> {
        Tariff::new(self.input_usd_per_mtok, self.output_usd_per_mtok)
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::config(format!("route {} ({}): {what}", self.model_id, self.role.as_str())));
        if self.model_id.is_empty() {
            return bad("empty model id");
        }
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return bad("weight must be a non-negative number");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        if !(self.timeout_s > 0.0) {
            return bad("timeout_s must be positive");
        }
        self.tariff().map(|_| ())
    }
}

/// A model with its list price, as used to build a registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    pub input_usd_per_mtok: f64,
    pub output_usd_per_mtok: f64,
}

impl ModelSpec {
    pub fn new(id: &str, input_usd_per_mtok: f64, output_usd_per_mtok: f64) -> Self {
        ModelSpec {
            id: id.to_string(),
            input_usd_per_mtok,
            output_usd_per_mtok,
        }
    }

    /// Looks `id` up in the reference tariff table.
    pub fn known(id: &str) -> Result<Self> {
        let t = default_tariffs()
            .remove(id)
            .ok_or_else(|| Error::config(format!("model {id:?} has no built-in tariff; give its prices explicitly")))?;
        Ok(ModelSpec::new(id, t.input_usd_per_mtok(), t.output_usd_per_mtok()))
    }

    fn route(&self, role: Role, weight: f64, temperature: f64, max_tokens: u32, timeout_s: f64) -> ModelRoute {
        ModelRoute {
            model_id: self.id.clone(),
            role,
            weight,
            temperature,
            max_tokens,
            timeout_s,
            input_usd_per_mtok: self.input_usd_per_mtok,
            output_usd_per_mtok: self.output_usd_per_mtok,
        }
    }
}

/// Inputs for the generated registries.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistryPlan {
    /// Cheap models that handle ordinary mutations and variants.
    pub mutation_models: Vec<ModelSpec>,
    /// Strong model for diverse seeds and paradigm shifts.
    pub paradigm_model: ModelSpec,
    pub task_model: Option<ModelSpec>,
    pub temperatures: Vec<f64>,
    pub max_tokens: u32,
    pub timeout_s: f64,
    pub pe_temperature: f64,
    pub pe_max_tokens: u32,
    pub pe_timeout_s: f64,
    pub meta_advice_max_tokens: u32,
    pub task_temperature: f64,
    pub task_max_tokens: u32,
}

impl Default for RegistryPlan {
    fn default() -> Self {
        RegistryPlan {
            mutation_models: vec![ModelSpec::known(QWEN3_30B).expect("known")],
            paradigm_model: ModelSpec::known(GEMINI_3_FLASH).expect("known"),
            task_model: None,
            temperatures: DEFAULT_TEMPERATURES.to_vec(),
            max_tokens: 16_384,
            timeout_s: 300.0,
            pe_temperature: 1.0,
            pe_max_tokens: 4096,
            pe_timeout_s: 300.0,
            meta_advice_max_tokens: 400,
            task_temperature: 0.0001,
            task_max_tokens: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Registry {
    routes: Vec<ModelRoute>,
}

impl Registry {
    pub fn new(routes: Vec<ModelRoute>) -> Result<Self> {
        for r in &routes {
            r.validate()?;
        }
        let reg = Registry { routes };
        reg.tariffs()?;
        Ok(reg)
    }

    /// Mutations go to the cheap models, one route per (model, temperature) with equal
    /// weight; seeds and paradigm shifts go to the strong model.
    pub fn role_routed(plan: &RegistryPlan) -> Result<Self> {
        if plan.mutation_models.is_empty() || plan.temperatures.is_empty() {
            return Err(Error::config("at least one mutation model and one temperature are required"));
        }
        let mut routes = Vec::new();
        for m in &plan.mutation_models {
            for &t in &plan.temperatures {
                routes.push(m.route(Role::Mutation, 1.0, t, plan.max_tokens, plan.timeout_s));
            }
        }
        routes.push(plan.paradigm_model.route(
            Role::ParadigmShift,
            1.0,
            plan.pe_temperature,
            plan.pe_max_tokens,
            plan.pe_timeout_s,
        ));
        Self::push_shared(plan, &mut routes);
        Registry::new(routes)
    }

    /// One mixed mutation pool: the cheap models share 90% of the weight and the strong
    /// model 10%, each spread evenly over the temperatures. No paradigm-shift routes.
    pub fn no_role_routing(plan: &RegistryPlan) -> Result<Self> {
        if plan.mutation_models.is_empty() || plan.temperatures.is_empty() {
            return Err(Error::config("at least one mutation model and one temperature are required"));
        }
        let nt = plan.temperatures.len() as f64;
        let small_w = 0.9 / (nt * plan.mutation_models.len() as f64);
        let large_w = 0.1 / nt;
        let mut routes = Vec::new();
        for m in &plan.mutation_models {
            for &t in &plan.temperatures {
                routes.push(m.route(Role::Mutation, small_w, t, plan.max_tokens, plan.timeout_s));
            }
        }
        for &t in &plan.temperatures {
            routes.push(plan.paradigm_model.route(Role::Mutation, large_w, t, plan.max_tokens, plan.timeout_s));
        }
        Self::push_shared(plan, &mut routes);
        Registry::new(routes)
    }

    fn push_shared(plan: &RegistryPlan, routes: &mut Vec<ModelRoute>) {
        let small = &plan.mutation_models[0];
        routes.push(small.route(Role::MetaAdvice, 1.0, 0.7, plan.meta_advice_max_tokens, plan.timeout_s));
        if let Some(task) = &plan.task_model {
            routes.push(task.route(
                Role::TaskModel,
                1.0,
                plan.task_temperature,
                plan.task_max_tokens,
                plan.timeout_s,
            ));
        }
    }

    pub fn routes(&self) -> &[ModelRoute] {
        &self.routes
    }

    pub fn routes_for(&self, role: Role) -> impl Iterator<Item = &ModelRoute> {
        self.routes.iter().filter(move |r| r.role == role)
    }

    pub fn has_role(&self, role: Role) -> bool {
        self.routes_for(role).next().is_some()
    }

    /// Draw a route for `role` with probability proportional to its weight.
    pub fn sample_route<R: Rng + ?Sized>(&self, role: Role, rng: &mut R) -> Result<&ModelRoute> {
        let candidates: Vec<&ModelRoute> = self.routes_for(role).collect();
        if candidates.is_empty() {
            return Err(Error::config(format!("no model route configured for role {}", role.as_str())));
        }
        if candidates.len() == 1 {
            return Ok(candidates[0]);
        }
        let dist = WeightedIndex::new(candidates.iter().map(|r| r.weight))
            .map_err(|e| Error::config(format!("route weights for role {}: {e}", role.as_str())))?;
        Ok(candidates[dist.sample(rng)])
    }

    /// Per-model tariffs. A model listed with two different prices is rejected.
    pub fn tariffs(&self) -> Result<BTreeMap<String, Tariff>> {
        let mut out: BTreeMap<String, Tariff> = BTreeMap::new();
        for r in &self.routes {
            let t = r.tariff()?;
            if let Some(prev) = out.insert(r.model_id.clone(), t) {
                if prev != t {
                    return Err(Error::config(format!("model {} is listed with conflicting tariffs", r.model_id)));
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// Sleep before retry i; the last entry repeats.
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            backoff: [1, 4, 16].into_iter().map(Duration::from_secs).collect(),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            backoff: vec![Duration::ZERO],
        }
    }

    fn delay(&self, retry: usize) -> Duration {
        self.backoff
            .get(retry)
            .or(self.backoff.last())
            .copied()
            .unwrap_or(Duration::ZERO)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub model: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub usd: Usd,
    /// Token counts came from the 4-characters-per-token estimate.
    pub estimated_usage: bool,
    pub attempts: u32,
}

struct GatewayState {
    ledger: CostLedger,
    reserved: Usd,
    failures: u64,
}

/// Thread-safe chat client that accounts every successful call against a shared
/// ledger and refuses to start calls once the dollar budget is committed.
pub struct Gateway {
    transport: Box<dyn ChatTransport>,
    state: Mutex<GatewayState>,
    budget: Option<Usd>,
    retry: RetryPolicy,
    cost_log: Option<Mutex<BufWriter<File>>>,
}

pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

impl Gateway {
    pub fn new(transport: impl ChatTransport + 'static, tariffs: BTreeMap<String, Tariff>) -> Self {
        Gateway {
            transport: Box::new(transport),
            state: Mutex::new(GatewayState {
                ledger: CostLedger::new(tariffs),
                reserved: Usd::ZERO,
                failures: 0,
            }),
            budget: None,
            retry: RetryPolicy::default(),
            cost_log: None,
        }
    }

    pub fn with_budget(mut self, budget: Usd) -> Self {
        self.budget = Some(budget);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Append every cost event to `path` as one JSON object per line.
    pub fn with_cost_log(mut self, path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.cost_log = Some(Mutex::new(BufWriter::new(file)));
        Ok(self)
    }

    pub fn budget(&self) -> Option<Usd> {
        self.budget
    }

    pub fn total_usd(&self) -> Usd {
        self.state.lock().unwrap().ledger.total()
    }

    pub fn ledger(&self) -> CostLedger {
        self.state.lock().unwrap().ledger.clone()
    }

    pub fn failed_attempts(&self) -> u64 {
        self.state.lock().unwrap().failures
    }

    /// Spent plus reserved has reached the budget.
    pub fn budget_exhausted(&self) -> bool {
        let s = self.state.lock().unwrap();
        self.budget.is_some_and(|b| s.ledger.total() + s.reserved >= b)
    }

    /// Send one chat request for `route`, retrying transient failures.
    pub fn complete_chat(&self, route: &ModelRoute, messages: &[Message], seed: Option<u64>) -> Result<Completion> {
        let prompt_tokens: u64 = messages.iter().map(|m| estimate_tokens(&m.content)).sum();
        let reservation = {
            let mut s = self.state.lock().unwrap();
            let tariff = s.ledger.tariff(&route.model_id)?;
            if let Some(budget) = self.budget {
                let committed = s.ledger.total() + s.reserved;
                if committed >= budget {
                    return Err(Error::Budget(format!(
                        "{} spent or reserved of {} budget",
                        committed, budget
                    )));
                }
            }
            let r = tariff.cost(prompt_tokens, route.max_tokens as u64);
            s.reserved += r;
            r
        };
        let request = ChatRequest {
            model: route.model_id.clone(),
            messages: messages.to_vec(),
            temperature: route.temperature,
            max_tokens: route.max_tokens,
            timeout: Duration::from_secs_f64(route.timeout_s),
            seed,
        };
        let mut attempt = 0u32;
        let outcome = loop {
            attempt += 1;
            match self.transport.send(&request) {
                Ok(resp) => break Ok(resp),
                Err(e) => {
                    self.state.lock().unwrap().failures += 1;
                    if e.is_retryable() && attempt <= self.retry.max_retries {
                        log::warn!("{} attempt {attempt} failed, retrying: {e}", route.model_id);
                        std::thread::sleep(self.retry.delay(attempt as usize - 1));
                    } else {
                        log::warn!("{} attempt {attempt} failed: {e}", route.model_id);
                        break Err(e);
                    }
                }
            }
        };
        let mut s = self.state.lock().unwrap();
        s.reserved = s.reserved.saturating_sub(reservation);
        let resp = outcome?;
        let (input_tokens, output_tokens, estimated) = match resp.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens, false),
            None => (prompt_tokens, estimate_tokens(&resp.text), true),
        };
        let event = s
            .ledger
            .record(&route.model_id, route.role, input_tokens, output_tokens, estimated, cost::now())?
            .clone();
        drop(s);
        if let Some(log) = &self.cost_log {
            let mut w = log.lock().unwrap();
            serde_json::to_writer(&mut *w, &event)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Ok(Completion {
            text: resp.text,
            model: route.model_id.clone(),
            input_tokens,
            output_tokens,
            usd: event.usd,
            estimated_usage: estimated,
            attempts: attempt,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn route(model: &str) -> ModelRoute {
        ModelSpec::known(model).unwrap().route(Role::Mutation, 1.0, 0.7, 100, 5.0)
    }

    #[test]
    fn scripted_usage_is_recorded_exactly() {
        let t = ScriptedTransport::new([ScriptedTransport::text("hi", 1_000_000, 500_000)]);
        let g = Gateway::new(t, default_tariffs());
        let c = g.complete_chat(&route(GEMINI_3_FLASH), &[Message::user("x")], None).unwrap();
        assert_eq!((c.input_tokens, c.output_tokens), (1_000_000, 500_000));
        assert_eq!(c.usd, Usd::from_dollars(2.0));
        assert_eq!(g.ledger().events().len(), 1);
    }

    #[test]
    fn retries_then_succeeds() {
        let transient = || {
            Err(Error::Transport {
                message: "reset".into(),
                retryable: true,
            })
        };
        let t = ScriptedTransport::new([transient(), transient(), ScriptedTransport::text("ok", 3, 4)]);
        let g = Gateway::new(t, default_tariffs()).with_retry(RetryPolicy::immediate(3));
        let c = g.complete_chat(&route(QWEN3_30B), &[Message::user("x")], None).unwrap();
        assert_eq!(c.attempts, 3);
        assert_eq!(g.failed_attempts(), 2);
        assert_eq!(g.ledger().events().len(), 1);
    }

    #[test]
    fn non_retryable_http_error_surfaces_body() {
        let t = ScriptedTransport::new([Err(Error::Http {
            status: 400,
            body: "bad model".into(),
        })]);
        let g = Gateway::new(t, default_tariffs()).with_retry(RetryPolicy::immediate(3));
        match g.complete_chat(&route(QWEN3_30B), &[Message::user("x")], None) {
            Err(Error::Http { status: 400, body }) => assert_eq!(body, "bad model"),
            other => panic!("{other:?}"),
        }
        assert_eq!(g.failed_attempts(), 1);
    }

    #[test]
    fn budget_checked_before_call() {
        let t = ScriptedTransport::new([ScriptedTransport::text("a", 1_000_000, 0), ScriptedTransport::text("b", 1, 1)]);
        let g = Gateway::new(t, default_tariffs()).with_budget(Usd::from_dollars(0.05));
        g.complete_chat(&route(QWEN3_30B), &[Message::user("x")], None).unwrap();
        assert!(matches!(
            g.complete_chat(&route(QWEN3_30B), &[Message::user("x")], None),
            Err(Error::Budget(_))
        ));
        assert_eq!(g.total_usd(), Usd::from_dollars(0.09));
    }

    #[test]
    fn missing_usage_is_estimated() {
        let t = ScriptedTransport::new([Ok(ChatResponse {
            text: "abcdefghi".into(),
            usage: None,
        })]);
        let g = Gateway::new(t, default_tariffs());
        let c = g.complete_chat(&route(QWEN3_30B), &[Message::user("12345678")], None).unwrap();
        assert!(c.estimated_usage);
        assert_eq!((c.input_tokens, c.output_tokens), (2, 3));
    }

    #[test]
    fn registries() {
        let plan = RegistryPlan::default();
        let reg = Registry::role_routed(&plan).unwrap();
        assert_eq!(reg.routes_for(Role::Mutation).count(), 4);
        assert!(reg.routes_for(Role::Mutation).all(|r| r.model_id == QWEN3_30B));
        assert_eq!(reg.routes_for(Role::ParadigmShift).next().unwrap().max_tokens, 4096);
        let abl = Registry::no_role_routing(&plan).unwrap();
        let w: Vec<f64> = abl.routes_for(Role::Mutation).map(|r| r.weight).collect();
        assert_eq!(w, vec![0.225, 0.225, 0.225, 0.225, 0.025, 0.025, 0.025, 0.025]);
        assert!(!abl.has_role(Role::ParadigmShift));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(abl.sample_route(Role::TaskModel, &mut rng).is_err());
    }

    #[test]
    fn single_route_always_selected() {
        let reg = Registry::new(vec![route(QWEN3_30B)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            assert_eq!(reg.sample_route(Role::Mutation, &mut rng).unwrap().model_id, QWEN3_30B);
        }
    }

    #[test]
    fn conflicting_tariffs_rejected() {
        let mut a = route(QWEN3_30B);
        a.output_usd_per_mtok = 9.0;
        assert!(Registry::new(vec![route(QWEN3_30B), a]).is_err());
    }
}
