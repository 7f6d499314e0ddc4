//! Append-only run event log.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::candidate::{CandidateId, Origin};
use crate::error::{Error, Result};
use crate::gateway::Usd;

/// Outcome of one punctuated-equilibrium trigger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeEvent {
    pub eval_count_at_fire: u64,
    pub paradigm_generated: bool,
    pub paradigm_accepted: bool,
    pub variants_generated: u32,
    pub variants_accepted: u32,
    /// Spend on the paradigm call and its variants.
    pub total_cost: Usd,
}

/// One evaluated candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub candidate_id: CandidateId,
    pub origin: Origin,
    pub parent_id: Option<CandidateId>,
    pub model: Option<String>,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub usd: Usd,
    /// Canonical score on the active example set; absent on failure.
    pub score: Option<f64>,
    pub success: bool,
    /// Screened out by the cascade filter; `score` is then the screening score.
    #[serde(default)]
    pub cascade_rejected: bool,
    pub accepted: bool,
    pub cell: Option<usize>,
    /// Successful evaluations so far, this one included.
    pub eval_count: u64,
    pub best_so_far: Option<f64>,
    pub error: Option<String>,
    #[serde(default)]
    pub rollouts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Evaluation(EvalRecord),
    /// An LLM call that produced no evaluable artifact.
    GenerationFailed {
        origin: Origin,
        model: Option<String>,
        usd: Usd,
        error: String,
    },
    ParadigmShift(PeEvent),
    MetaAdvice {
        eval_count: u64,
        model: Option<String>,
        usd: Usd,
        text: Option<String>,
        truncated: bool,
        error: Option<String>,
    },
    ProxySelected {
        n_init: usize,
        selected_ids: Vec<String>,
        rank_faithfulness: f64,
        separation: f64,
    },
    PhaseComplete {
        phase: u8,
        eval_count: u64,
        occupied: usize,
    },
    RunEnd {
        eval_count: u64,
        best_score: Option<f64>,
        total_usd: Usd,
        stop_reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub seq: u64,
    /// Seconds since the Unix epoch.
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// In-memory event list with an optional line-delimited JSON mirror on disk.
#[derive(Default)]
pub struct RunLedger {
    events: Vec<LedgerEvent>,
    sink: Option<BufWriter<File>>,
}

impl RunLedger {
    pub fn in_memory() -> Self {
        RunLedger::default()
    }

    pub fn create(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).truncate(true).write(true).open(path)?;
        Ok(RunLedger {
            events: Vec::new(),
            sink: Some(BufWriter::new(file)),
        })
    }

    pub fn append(&mut self, kind: EventKind) -> Result<&LedgerEvent> {
        let event = LedgerEvent {
            seq: self.events.len() as u64,
            t: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
            kind,
        };
        if let Some(w) = self.sink.as_mut() {
            serde_json::to_writer(&mut *w, &event)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        self.events.push(event);
        Ok(self.events.last().expect("just pushed"))
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    pub fn evaluations(&self) -> impl Iterator<Item = &EvalRecord> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::Evaluation(r) => Some(r),
            _ => None,
        })
    }

    pub fn pe_events(&self) -> impl Iterator<Item = &PeEvent> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::ParadigmShift(p) => Some(p),
            _ => None,
        })
    }

    /// `(eval_count, best_so_far)` after each successful evaluation.
    pub fn trajectory(&self) -> Vec<(u64, f64)> {
        self.evaluations()
            .filter(|r| r.success)
            .filter_map(|r| r.best_so_far.map(|b| (r.eval_count, b)))
            .collect()
    }

    pub fn read_jsonl(path: &Path) -> Result<Vec<LedgerEvent>> {
        let file = File::open(path).map_err(|e| Error::config(format!("opening ledger {}: {e}", path.display())))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
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
