use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use super::Role;
use crate::error::{Error, Result};

/// Dollar amount held as an integer count of 1e-12 USD so sums are exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Usd(pub u64);

impl Usd {
    pub const ZERO: Usd = Usd(0);
    const PER_DOLLAR: u64 = 1_000_000_000_000;

    /// Nearest picodollar to `dollars`. Negative and non-finite inputs clamp to zero.
    pub fn from_dollars(dollars: f64) -> Usd {
        if !(dollars > 0.0) {
            return Usd::ZERO;
        }
        Usd((dollars * Self::PER_DOLLAR as f64).round() as u64)
    }

    pub fn picodollars(self) -> u64 {
        self.0
    }

    pub fn as_dollars(self) -> f64 {
        self.0 as f64 / Self::PER_DOLLAR as f64
    }

    /// Whole cents, rounded half up.
    pub fn cents(self) -> u64 {
        (self.0 + Self::PER_DOLLAR / 200) / (Self::PER_DOLLAR / 100)
    }

    pub fn saturating_sub(self, other: Usd) -> Usd {
        Usd(self.0.saturating_sub(other.0))
    }
}

impl Add for Usd {
    type Output = Usd;
    fn add(self, rhs: Usd) -> Usd {
        Usd(self.0 + rhs.0)
    }
}

impl AddAssign for Usd {
    fn add_assign(&mut self, rhs: Usd) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for Usd {
    fn sum<I: Iterator<Item = Usd>>(iter: I) -> Usd {
        iter.fold(Usd::ZERO, Add::add)
    }
}

impl fmt::Display for Usd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / Self::PER_DOLLAR;
        let frac = (self.0 % Self::PER_DOLLAR) / 1_000_000;
        write!(f, "${whole}.{frac:06}")
    }
}

/// List price in dollars per million tokens, stored in micro-dollars per million
/// tokens. One token then costs exactly that many picodollars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tariff {
    input_micro: u64,
    output_micro: u64,
}

impl Tariff {
    pub fn new(input_usd_per_mtok: f64, output_usd_per_mtok: f64) -> Result<Tariff> {
        let conv = |v: f64, what: &str| -> Result<u64> {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!("{what} tariff must be a non-negative number, got {v}")));
            }
            Ok((v * 1e6).round() as u64)
        };
        Ok(Tariff {
            input_micro: conv(input_usd_per_mtok, "input")?,
            output_micro: conv(output_usd_per_mtok, "output")?,
        })
    }

    pub fn input_usd_per_mtok(&self) -> f64 {
        self.input_micro as f64 / 1e6
    }

    pub fn output_usd_per_mtok(&self) -> f64 {
        self.output_micro as f64 / 1e6
    }

    pub fn cost(&self, input_tokens: u64, output_tokens: u64) -> Usd {
        Usd(input_tokens * self.input_micro + output_tokens * self.output_micro)
    }
}

pub const QWEN3_30B: &str = "qwen/qwen3-30b-a3b-instruct-2507";
pub const QWEN3_8B: &str = "qwen/qwen3-8b";
pub const MIMO_V2_FLASH: &str = "xiaomi/mimo-v2-flash";
pub const GEMINI_3_FLASH: &str = "google/gemini-3-flash-preview";

/// OpenRouter list prices for the four reference models.
pub fn default_tariffs() -> BTreeMap<String, Tariff> {
    [
        (QWEN3_30B, 0.09, 0.30),
        (QWEN3_8B, 0.05, 0.40),
        (MIMO_V2_FLASH, 0.09, 0.29),
        (GEMINI_3_FLASH, 0.50, 3.00),
    ]
    .into_iter()
    .map(|(m, i, o)| (m.to_string(), Tariff::new(i, o).expect("static tariff")))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEvent {
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    pub model: String,
    pub role: Role,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub usd: Usd,
    /// Token counts were estimated from text length, not reported by the provider.
    #[serde(default)]
    pub estimated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelUsage {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub usd: Usd,
}

#[derive(Debug, Clone, Default)]
pub struct CostLedger {
    tariffs: BTreeMap<String, Tariff>,
    per_model: BTreeMap<String, ModelUsage>,
    total: Usd,
    events: Vec<CostEvent>,
}

impl CostLedger {
    pub fn new(tariffs: BTreeMap<String, Tariff>) -> Self {
        CostLedger {
            tariffs,
            ..Default::default()
        }
    }

    pub fn tariff(&self, model: &str) -> Result<Tariff> {
        self.tariffs
            .get(model)
            .copied()
            .ok_or_else(|| Error::config(format!("no tariff configured for model {model:?}")))
    }

    pub fn record_cost(&mut self, model: &str, role: Role, input_tokens: u64, output_tokens: u64) -> Result<&CostEvent> {
        self.record(model, role, input_tokens, output_tokens, false, now())
    }

    pub(crate) fn record(
        &mut self,
        model: &str,
        role: Role,
        input_tokens: u64,
        output_tokens: u64,
        estimated: bool,
        timestamp: f64,
    ) -> Result<&CostEvent> {
        let usd = self.tariff(model)?.cost(input_tokens, output_tokens);
        let usage = self.per_model.entry(model.to_string()).or_default();
        usage.calls += 1;
        usage.input_tokens += input_tokens;
        usage.output_tokens += output_tokens;
        usage.usd += usd;
        self.total += usd;
        self.events.push(CostEvent {
            timestamp,
            model: model.to_string(),
            role,
            input_tokens,
            output_tokens,
            usd,
            estimated,
        });
        Ok(self.events.last().expect("just pushed"))
    }

    /// Rebuild a ledger from event records, recomputing every cost from the tariffs.
    pub fn replay<'a>(tariffs: BTreeMap<String, Tariff>, events: impl IntoIterator<Item = &'a CostEvent>) -> Result<Self> {
        let mut ledger = CostLedger::new(tariffs);
        for e in events {
            ledger.record(&e.model, e.role, e.input_tokens, e.output_tokens, e.estimated, e.timestamp)?;
        }
        Ok(ledger)
    }

    pub fn total(&self) -> Usd {
        self.total
    }

    pub fn per_model(&self) -> &BTreeMap<String, ModelUsage> {
        &self.per_model
    }

    pub fn events(&self) -> &[CostEvent] {
        &self.events
    }

    pub fn calls_with_role(&self, role: Role) -> u64 {
        self.events.iter().filter(|e| e.role == role).count() as u64
    }
}

pub(crate) fn now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_price_examples() {
        let mut l = CostLedger::new(default_tariffs());
        assert_eq!(l.record_cost(QWEN3_30B, Role::Mutation, 1_000_000, 0).unwrap().usd, Usd::from_dollars(0.09));
        assert_eq!(l.record_cost(QWEN3_30B, Role::Mutation, 0, 0).unwrap().usd, Usd::ZERO);
        assert_eq!(
            l.record_cost(GEMINI_3_FLASH, Role::ParadigmShift, 0, 500_000).unwrap().usd,
            Usd::from_dollars(1.5)
        );
        assert_eq!(l.total(), Usd::from_dollars(1.59));
        assert_eq!(l.total().to_string(), "$1.590000");
        assert!(l.record_cost("nope", Role::Mutation, 1, 1).is_err());
    }

    #[test]
    fn cents_round_half_up() {
        assert_eq!(Usd::from_dollars(0.005).cents(), 1);
        assert_eq!(Usd::from_dollars(0.0049).cents(), 0);
        assert_eq!(Usd::from_dollars(12.345).cents(), 1235);
    }
}
