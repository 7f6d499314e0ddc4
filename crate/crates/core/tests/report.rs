mod common;

use common::*;
use evoharness_core::report::{emit_report, load_conditions, pool_curves, Condition, RunRecord};

fn toy_runs(root: &std::path::Path, pe: bool) -> std::path::PathBuf {
    let cond = root.join(if pe { "full" } else { "no_pe" });
    for seed in [1u64, 2, 3] {
        let mut cfg = toy_config();
        cfg.rng_seed = seed;
        cfg.pe.enabled = pe;
        cfg.budget = evoharness_core::evolution::Budget::Evals(40 + 10 * seed);
        run_toy(cfg, default_registry(), Some(cond.join(format!("seed-{seed}")))).unwrap();
    }
    cond
}

#[test]
fn three_seed_report_pools_forward_filled_curves() {
    let dir = tempfile::tempdir().unwrap();
    let full = toy_runs(dir.path(), true);
    let no_pe = toy_runs(dir.path(), false);
    let conditions = load_conditions(&[full, no_pe]).unwrap();
    assert_eq!(conditions.iter().map(|c| c.name.as_str()).collect::<Vec<_>>(), vec!["full", "no_pe"]);
    assert!(conditions.iter().all(|c| c.runs.len() == 3));

    let out = dir.path().join("report");
    let report = emit_report(&conditions, &out).unwrap();

    let curves: Vec<Vec<(f64, f64)>> = conditions[0].runs.iter().map(RunRecord::eval_curve).collect();
    let grid: Vec<f64> = (1..=70).map(f64::from).collect();
    let expected = pool_curves(&curves, &grid).unwrap();
    let mut rdr = csv::Reader::from_path(out.join("pooled_evals.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).filter(|r| &r[0] == "full").collect();
    assert_eq!(rows.len(), 70);
    for (row, p) in rows.iter().zip(&expected) {
        assert_eq!(row[1].parse::<f64>().unwrap(), p.x);
        assert_eq!(row[2].parse::<usize>().unwrap(), p.n_runs);
        assert!((row[3].parse::<f64>().unwrap() - p.mean.unwrap()).abs() < 1e-12);
        assert!((row[4].parse::<f64>().unwrap() - p.std.unwrap()).abs() < 1e-12);
    }
    assert_eq!(&rows[49][2], "3");
    assert_eq!(&rows[50][2], "2");
    assert_eq!(&rows[69][2], "1");
    assert_eq!(&rows[69][4], "0");

    let finals: Vec<String> = conditions[0]
        .runs
        .iter()
        .map(|r| r.summary.best_display_score.unwrap().to_string())
        .collect();
    assert!(report.markdown.contains(&format!("[{}]", finals.join(", "))), "{}", report.markdown);
    assert!(report.markdown.contains("## Paradigm shifts\n\n- full / seed-1: "));
    assert!(!report.markdown.contains("- no_pe /"));
    assert!(report.markdown.contains("## Final elites"));
    assert!(report.markdown.contains("def solve(jobs)"));

    let pe_rows = csv::Reader::from_path(out.join("pe_events.csv")).unwrap().records().count();
    let fired: usize = conditions[0].runs.iter().map(|r| r.summary.pe_events.len()).sum();
    assert_eq!(pe_rows, fired);
    let spend = std::fs::read_to_string(out.join("spend.csv")).unwrap();
    assert!(spend.contains("google/gemini-3-flash-preview"));
}

#[test]
fn zero_paradigm_shifts_leave_an_empty_section() {
    let dir = tempfile::tempdir().unwrap();
    let cond = toy_runs(dir.path(), false);
    let conditions = load_conditions(&[cond.join("seed-1")]).unwrap();
    assert_eq!(conditions[0].name, "no_pe");
    let report = emit_report(&conditions, &dir.path().join("r")).unwrap();
    assert!(report.markdown.contains("## Paradigm shifts\n\nNo paradigm-shift events.\n"));
    let pe = std::fs::read_to_string(dir.path().join("r/pe_events.csv")).unwrap();
    assert_eq!(pe.lines().count(), 1);
}

#[test]
fn empty_inputs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_report(&[Condition { name: "x".into(), runs: vec![] }], dir.path()).is_err());
    assert!(load_conditions(&[dir.path().to_path_buf()]).is_err());
}
