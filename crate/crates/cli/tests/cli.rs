use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

const ORDERS: [&str; 6] = [
    "[0, 1, 2, 3, 4, 5, 6]",
    "[6, 5, 4, 3, 2, 1, 0]",
    "[1, 3, 0, 2, 4, 5, 6]",
    "[1, 3, 6, 0, 5, 4, 2]",
    "[1, 3, 6, 5, 0, 4, 2]",
    "[2, 4, 0, 5, 6, 3, 1]",
];

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evoharness"))
}

fn shim_script() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/toy_shim.py")
}

/// Minimal chat-completions endpoint: every request gets the next program in `ORDERS`.
fn mock_endpoint() -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = calls.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            let k = counter.fetch_add(1, Ordering::SeqCst);
            let code = format!("def solve(jobs):\n    return {}", ORDERS[k % ORDERS.len()]);
            let reply = serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": format!("```python\n{code}\n```")}}],
                "usage": {"prompt_tokens": 500, "completion_tokens": 100},
            })
            .to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    (url, calls)
}

fn write_problem(dir: &Path) -> PathBuf {
    let pkg = dir.join("toy");
    std::fs::create_dir_all(&pkg).unwrap();
    let problem = format!(
        r#"title = "Weighted Completion Time"
description = "Order seven jobs on one machine to minimise the weighted sum of completion times."
function_signature = "def solve(jobs: list[tuple[int, int]]) -> list[int]:"
direction = "minimize"
discovery_set = ["toy"]
eval_timeout_s = 10.0

[backend]
kind = "program_exec"
command = ["python3", {:?}]
problem_id = "toy"
"#,
        shim_script().display().to_string()
    );
    std::fs::write(pkg.join("problem.toml"), problem).unwrap();
    pkg
}

fn write_config(dir: &Path, base_url: &str, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        r#"problem = "toy"

[models]
base_url = "{base_url}"
api_key_env = "EVOHARNESS_TEST_KEY"
backoff_s = [0.0]

[run]
n_diverse_seeds = 1
n_variants_per_seed = 2
n_llm_workers = 2
n_eval_processes = 2
n_centroids = 4
budget = {{ evals = 12 }}

[run.pe]
interval = 5
monitor_poll_s = 0.0
{extra}"#
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_then_report_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (url, calls) = mock_endpoint();
    write_problem(dir.path());
    let config = write_config(dir.path(), &url, "");
    let runs = dir.path().join("runs");
    for seed in [1u64, 2] {
        let out = runs.join(format!("seed-{seed}"));
        let o = bin()
            .args(["run", "--config"])
            .arg(&config)
            .args(["--seed", &seed.to_string(), "--out"])
            .arg(&out)
            .env("EVOHARNESS_TEST_KEY", "test")
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        let summary: serde_json::Value =
            serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["eval_count"], 12);
        assert_eq!(summary["rng_seed"], seed);
        assert!(summary["best_display_score"].as_f64().unwrap() >= 159.0);
        let costs = std::fs::read_to_string(out.join("costs.jsonl")).unwrap();
        assert!(costs.lines().count() >= 12);
        assert!(out.join("events.jsonl").is_file() && out.join("config.toml").is_file());
    }
    assert!(calls.load(Ordering::SeqCst) >= 24);

    let report_dir = dir.path().join("report");
    let o = bin().arg("report").arg(&runs).arg("--out").arg(&report_dir).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let md = std::fs::read_to_string(report_dir.join("report.md")).unwrap();
    assert!(md.contains("## Paradigm shifts"));
    assert!(md.contains("| runs | 2 |"), "{md}");
    for f in ["best_so_far.csv", "pooled_evals.csv", "pooled_cost.csv", "spend.csv", "pe_events.csv"] {
        assert!(report_dir.join(f).is_file(), "{f}");
    }
    let pooled = std::fs::read_to_string(report_dir.join("pooled_evals.csv")).unwrap();
    assert_eq!(pooled.lines().count(), 1 + 12);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    write_problem(dir.path());
    let config = write_config(dir.path(), "http://127.0.0.1:9/v1", "foo = 3\n");
    let o = bin().args(["run", "--config"]).arg(&config).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("foo"), "{}", stderr(&o));

    let config = write_config(dir.path(), "http://127.0.0.1:9/v1", "");
    let o = bin()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .env_remove("EVOHARNESS_TEST_KEY")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("EVOHARNESS_TEST_KEY"), "{}", stderr(&o));

    let o = bin().args(["run", "--config"]).arg(dir.path().join("missing.toml")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unreachable_endpoint_is_run_fatal() {
    let dir = tempfile::tempdir().unwrap();
    write_problem(dir.path());
    let config = write_config(dir.path(), "http://127.0.0.1:9/v1", "");
    let o = bin()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .env("EVOHARNESS_TEST_KEY", "test")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn proxy_ablate_prints_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let mut text = String::from("id,e0,e1,e2,e3,e4,e5\n");
    for i in 0..8 {
        let row: Vec<String> = (0..6).map(|j| ((i * 7 + j * 3) % 11).to_string()).collect();
        text.push_str(&format!("c{i},{}\n", row.join(",")));
    }
    std::fs::write(&path, text).unwrap();
    let o = bin()
        .args(["proxy-ablate", "--matrix"])
        .arg(&path)
        .args(["--n-init", "3,4", "--k-proxy", "2", "--splits", "5"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "strategy,n_init,k_proxy,mean_rho,degenerate_splits");
    assert_eq!(lines.len(), 1 + 3 * 2);
    assert!(lines[1].starts_with("css_mean,3,2,"));

    let o = bin()
        .args(["proxy-ablate", "--matrix"])
        .arg(&path)
        .args(["--n-init", "8"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
