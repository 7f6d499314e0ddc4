//! Cross-run reports: best-so-far tables, pooled curves, spend and paradigm-shift
//! summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{EventKind, LedgerEvent, RunLedger, RunSummary};
use crate::gateway::Usd;

/// Pooled value of several best-so-far curves at one grid point. `mean` and `std` are
/// absent when no run covers the point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledPoint {
    pub x: f64,
    pub n_runs: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

/// Step-function value of `run` at `x`: the last observation at or before `x`. `None`
/// before the first observation and beyond the last one.
pub fn forward_fill(run: &[(f64, f64)], x: f64) -> Option<f64> {
    let (first, last) = (run.first()?, run.last()?);
    if x < first.0 || x > last.0 {
        return None;
    }
    let i = run.partition_point(|p| p.0 <= x);
    Some(run[i - 1].1)
}

/// Mean and sample standard deviation across runs at every grid point. Each run is a
/// list of `(x, value)` pairs with non-decreasing `x`.
pub fn pool_curves(runs: &[Vec<(f64, f64)>], grid: &[f64]) -> Result<Vec<PooledPoint>> {
    if grid.is_empty() {
        return Err(Error::precondition("pooling grid is empty"));
    }
    if runs.is_empty() {
        return Err(Error::precondition("pooling needs at least one run"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::precondition("pooling grid must be strictly increasing"));
    }
    for run in runs {
        if run.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::precondition("run x values must be non-decreasing"));
        }
    }
    Ok(grid
        .iter()
        .map(|&x| {
            let vals: Vec<f64> = runs.iter().filter_map(|r| forward_fill(r, x)).collect();
            let n = vals.len();
            let (mean, std) = match n {
                0 => (None, None),
                1 => (Some(vals[0]), Some(0.0)),
                _ => {
                    let mean = vals.iter().sum::<f64>() / n as f64;
                    let ss: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum();
                    (Some(mean), Some((ss / (n - 1) as f64).sqrt()))
                }
            };
            PooledPoint { x, n_runs: n, mean, std }
        })
        .collect())
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Grid resolution of cost-axis curves.
pub const COST_GRID_POINTS: usize = 401;

/// A finished run read back from its output directory.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub name: String,
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub events: Vec<LedgerEvent>,
}

impl RunRecord {
    pub fn load(dir: &Path) -> Result<Self> {
        let summary_path = dir.join("summary.json");
        let bytes = std::fs::read(&summary_path)
            .map_err(|e| Error::config(format!("reading {}: {e}", summary_path.display())))?;
        let summary: RunSummary = serde_json::from_slice(&bytes)
            .map_err(|e| Error::config(format!("{}: {e}", summary_path.display())))?;
        let events = RunLedger::read_jsonl(&dir.join("events.jsonl"))?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        Ok(RunRecord {
            name,
            dir: dir.to_path_buf(),
            summary,
            events,
        })
    }

    fn display(&self, canonical: f64) -> f64 {
        self.summary.direction.to_display(canonical)
    }

    /// `(eval_count, best)` after each successful evaluation, in the problem's
    /// orientation.
    pub fn eval_curve(&self) -> Vec<(f64, f64)> {
        self.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Evaluation(r) if r.success => r.best_so_far.map(|b| (r.eval_count as f64, self.display(b))),
                _ => None,
            })
            .collect()
    }

    /// `(cumulative generation spend in dollars, best)` after each successful
    /// evaluation. Spend counts every logged LLM call up to that point.
    pub fn cost_curve(&self) -> Vec<(f64, f64)> {
        let mut spent = Usd::ZERO;
        let mut out = Vec::new();
        for e in &self.events {
            match &e.kind {
                EventKind::Evaluation(r) => {
                    spent += r.usd;
                    if let (true, Some(b)) = (r.success, r.best_so_far) {
                        out.push((spent.as_dollars(), self.display(b)));
                    }
                }
                EventKind::GenerationFailed { usd, .. } | EventKind::MetaAdvice { usd, .. } => spent += *usd,
                _ => {}
            }
        }
        out
    }

    pub fn final_score(&self) -> Option<f64> {
        self.summary.best_display_score
    }
}

/// Runs grouped under one experimental condition.
#[derive(Debug, Clone)]
pub struct Condition {
    pub name: String,
    pub runs: Vec<RunRecord>,
}

/// What [`emit_report`] produced.
#[derive(Debug, Clone)]
pub struct Report {
    pub markdown: String,
    pub files: Vec<PathBuf>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn mean_std(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::config(format!("creating {}: {e}", path.display())))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Write the delimited tables and `report.md` into `out_dir`.
pub fn emit_report(conditions: &[Condition], out_dir: &Path) -> Result<Report> {
    if conditions.iter().all(|c| c.runs.is_empty()) {
        return Err(Error::precondition("a report needs at least one completed run"));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();

    let path = out_dir.join("best_so_far.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["condition", "run", "eval_count", "usd", "best_score"]).map_err(csv_err)?;
    for c in conditions {
        for r in &c.runs {
            for ((count, best), (usd, _)) in r.eval_curve().into_iter().zip(r.cost_curve()) {
                w.write_record([&c.name, &r.name, &count.to_string(), &usd.to_string(), &best.to_string()])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    files.push(path);

    for (file, axis) in [("pooled_evals.csv", "eval_count"), ("pooled_cost.csv", "usd")] {
        let path = out_dir.join(file);
        let mut w = csv_writer(&path)?;
        w.write_record(["condition", axis, "n_runs", "mean", "std"]).map_err(csv_err)?;
        for c in conditions.iter().filter(|c| !c.runs.is_empty()) {
            let (curves, grid) = if axis == "usd" {
                let curves: Vec<Vec<(f64, f64)>> = c.runs.iter().map(RunRecord::cost_curve).collect();
                let hi = curves.iter().filter_map(|r| r.last().map(|p| p.0)).fold(0.0, f64::max);
                (curves, uniform_grid(0.0, hi, if hi > 0.0 { COST_GRID_POINTS } else { 1 }))
            } else {
                let curves: Vec<Vec<(f64, f64)>> = c.runs.iter().map(RunRecord::eval_curve).collect();
                let hi = curves.iter().filter_map(|r| r.last().map(|p| p.0)).fold(1.0, f64::max);
                (curves, (1..=hi as u64).map(|x| x as f64).collect())
            };
            for p in pool_curves(&curves, &grid)? {
                w.write_record([
                    c.name.clone(),
                    p.x.to_string(),
                    p.n_runs.to_string(),
                    fmt_opt(p.mean),
                    fmt_opt(p.std),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        files.push(path);
    }

    let path = out_dir.join("spend.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["condition", "run", "model", "calls", "input_tokens", "output_tokens", "usd"])
        .map_err(csv_err)?;
    for c in conditions {
        for r in &c.runs {
            for (model, u) in &r.summary.per_model {
                w.write_record([
                    c.name.clone(),
                    r.name.clone(),
                    model.clone(),
                    u.calls.to_string(),
                    u.input_tokens.to_string(),
                    u.output_tokens.to_string(),
                    u.usd.as_dollars().to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    files.push(path);

    let path = out_dir.join("pe_events.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "condition",
        "run",
        "eval_count_at_fire",
        "paradigm_generated",
        "paradigm_accepted",
        "variants_generated",
        "variants_accepted",
        "usd",
    ])
    .map_err(csv_err)?;
    for c in conditions {
        for r in &c.runs {
            for p in &r.summary.pe_events {
                w.write_record([
                    c.name.clone(),
                    r.name.clone(),
                    p.eval_count_at_fire.to_string(),
                    p.paradigm_generated.to_string(),
                    p.paradigm_accepted.to_string(),
                    p.variants_generated.to_string(),
                    p.variants_accepted.to_string(),
                    p.total_cost.as_dollars().to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    files.push(path);

    let markdown = render_markdown(conditions);
    let path = out_dir.join("report.md");
    std::fs::write(&path, &markdown)?;
    files.push(path);
    Ok(Report { markdown, files })
}

fn render_markdown(conditions: &[Condition]) -> String {
    let mut md = String::from("# Run report\n\n## Final scores\n\n");
    md.push_str("| condition | runs | final best (mean ± std) | per seed |\n|---|---|---|---|\n");
    for c in conditions {
        let finals: Vec<f64> = c.runs.iter().filter_map(RunRecord::final_score).collect();
        let per_seed: Vec<String> = c
            .runs
            .iter()
            .map(|r| r.final_score().map_or_else(|| "none".into(), |v| v.to_string()))
            .collect();
        let pooled = if finals.is_empty() {
            "none".to_string()
        } else {
            let (m, s) = mean_std(&finals);
            format!("{m} ± {s}")
        };
        let _ = writeln!(md, "| {} | {} | {pooled} | [{}] |", c.name, c.runs.len(), per_seed.join(", "));
    }

    md.push_str("\n## Spend\n\n| condition | run | model | calls | input tokens | output tokens | usd |\n|---|---|---|---|---|---|---|\n");
    for c in conditions {
        for r in &c.runs {
            let mut total = Usd::ZERO;
            for (model, u) in &r.summary.per_model {
                total += u.usd;
                let _ = writeln!(
                    md,
                    "| {} | {} | {model} | {} | {} | {} | {} |",
                    c.name, r.name, u.calls, u.input_tokens, u.output_tokens, u.usd
                );
            }
            let _ = writeln!(md, "| {} | {} | total | | | | {} |", c.name, r.name, total);
        }
    }

    md.push_str("\n## Paradigm shifts\n\n");
    let mut any = false;
    for c in conditions {
        for r in &c.runs {
            let pe = &r.summary.pe_events;
            if pe.is_empty() {
                continue;
            }
            any = true;
            let accepted = pe.iter().filter(|p| p.paradigm_accepted).count();
            let generated: u32 = pe.iter().map(|p| p.variants_generated).sum();
            let kept: u32 = pe.iter().map(|p| p.variants_accepted).sum();
            let cost: Usd = pe.iter().map(|p| p.total_cost).sum();
            let fired: Vec<String> = pe.iter().map(|p| p.eval_count_at_fire.to_string()).collect();
            let _ = writeln!(
                md,
                "- {} / {}: {} fired at [{}]; {accepted} paradigms accepted; {kept} of {generated} variants accepted; {cost} spent",
                c.name,
                r.name,
                pe.len(),
                fired.join(", ")
            );
        }
    }
    if !any {
        md.push_str("No paradigm-shift events.\n");
    }

    md.push_str("\n## Final elites\n");
    for c in conditions {
        for r in &c.runs {
            let _ = write!(md, "\n### {} / {}", c.name, r.name);
            match (&r.summary.best_artifact, r.final_score()) {
                (Some(a), Some(s)) => {
                    let _ = write!(md, " (score {s}, {} of {} cells occupied)\n\n```\n{a}\n```\n", r.summary.occupied_cells, r.summary.n_cells);
                }
                _ => md.push_str("\n\nNo successful candidate.\n"),
            }
        }
    }
    md
}

/// Runs under `dir`: the directory itself if it holds a `summary.json`, else each
/// immediate subdirectory that does, in name order.
pub fn discover_runs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join("summary.json").is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::config(format!("reading {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("summary.json").is_file())
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::config(format!("no completed runs under {}", dir.display())));
    }
    Ok(out)
}

/// Group run directories into conditions. A directory of runs becomes one condition
/// named after it; a bare run directory is grouped under its parent's name.
pub fn load_conditions(dirs: &[PathBuf]) -> Result<Vec<Condition>> {
    let mut grouped: BTreeMap<String, Vec<RunRecord>> = BTreeMap::new();
    let mut order = Vec::new();
    for dir in dirs {
        let is_run = dir.join("summary.json").is_file();
        let label_dir = if is_run { dir.parent().unwrap_or(dir) } else { dir.as_path() };
        let label = label_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "runs".into());
        if !grouped.contains_key(&label) {
            order.push(label.clone());
        }
        let entry = grouped.entry(label).or_default();
        for run in discover_runs(dir)? {
            entry.push(RunRecord::load(&run)?);
        }
    }
    Ok(order
        .into_iter()
        .map(|name| Condition {
            runs: grouped.remove(&name).unwrap_or_default(),
            name,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_fill_steps_and_bounds() {
        let run = [(1.0, 0.1), (3.0, 0.4), (3.0, 0.5), (6.0, 0.9)];
        assert_eq!(forward_fill(&run, 0.5), None);
        assert_eq!(forward_fill(&run, 1.0), Some(0.1));
        assert_eq!(forward_fill(&run, 2.9), Some(0.1));
        assert_eq!(forward_fill(&run, 3.0), Some(0.5));
        assert_eq!(forward_fill(&run, 6.0), Some(0.9));
        assert_eq!(forward_fill(&run, 6.5), None);
        assert_eq!(forward_fill(&[], 1.0), None);
    }

    #[test]
    fn single_run_has_zero_spread() {
        let run = vec![(1.0, 2.0), (4.0, 5.0)];
        let pooled = pool_curves(&[run], &[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(pooled.iter().map(|p| p.mean.unwrap()).collect::<Vec<_>>(), vec![2.0, 2.0, 5.0]);
        assert!(pooled.iter().all(|p| p.std == Some(0.0)));
    }

    #[test]
    fn runs_stop_counting_after_their_end() {
        let short = vec![(1.0, 1.0), (500.0, 3.0)];
        let long = vec![(1.0, 2.0), (700.0, 4.0)];
        let p = pool_curves(&[short, long], &[500.0, 600.0]).unwrap();
        assert_eq!((p[0].n_runs, p[0].mean), (2, Some(2.5)));
        assert_eq!((p[1].n_runs, p[1].mean, p[1].std), (1, Some(2.0), Some(0.0)));
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(pool_curves(&[vec![(1.0, 1.0)]], &[]).is_err());
        assert!(pool_curves(&[], &[1.0]).is_err());
        assert!(pool_curves(&[vec![(1.0, 1.0)]], &[2.0, 1.0]).is_err());
        let empty = pool_curves(&[vec![(5.0, 1.0)]], &[1.0]).unwrap();
        assert_eq!((empty[0].n_runs, empty[0].mean), (0, None));
    }

    #[test]
    fn cost_grid_matches_resolution() {
        let g = uniform_grid(0.0, 0.5, COST_GRID_POINTS);
        assert_eq!(g.len(), 401);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[400], 0.5);
        assert!((g[1] - 0.00125).abs() < 1e-15);
    }
}
