use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{EvalBackend, EvalResult};
use crate::error::{Error, Result};

/// One line on the shim's stdin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShimRequest {
    pub artifact: String,
    pub problem_id: String,
    pub example_ids: Vec<String>,
    pub time_limit_s: f64,
}

/// One line on the shim's stdout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShimResponse {
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub runtime_s: f64,
    #[serde(default)]
    pub error: Option<String>,
}

/// Runs each evaluation in a fresh shim process placed in its own process group, so a
/// timeout can kill everything the candidate spawned.
pub struct ShimBackend {
    command: Vec<String>,
    problem_id: String,
    cwd: Option<PathBuf>,
}

const STDERR_TAIL: usize = 2000;

impl ShimBackend {
    pub fn new(command: Vec<String>, problem_id: impl Into<String>) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::config("shim command is empty"));
        }
        Ok(ShimBackend {
            command,
            problem_id: problem_id.into(),
            cwd: None,
        })
    }

    pub fn with_cwd(mut self, cwd: PathBuf) -> Self {
        self.cwd = Some(cwd);
        self
    }

    fn spawn(&self) -> Result<Child> {
        let mut cmd = Command::new(&self.command[0]);
        cmd.args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);
        if let Some(dir) = &self.cwd {
            cmd.current_dir(dir);
        }
        cmd.spawn()
            .map_err(|e| Error::Backend(format!("starting shim {:?}: {e}", self.command[0])))
    }
}

fn kill_group(child: &mut Child) {
    // The child leads its own group, so its pid is the group id.
    unsafe {
        libc::killpg(child.id() as libc::pid_t, libc::SIGKILL);
    }
    let _ = child.kill();
    let _ = child.wait();
}

fn tail(s: &str, max: usize) -> &str {
    let n = s.chars().count();
    if n <= max {
        return s;
    }
    let (i, _) = s.char_indices().nth(n - max).expect("in range");
    &s[i..]
}

impl EvalBackend for ShimBackend {
    fn evaluate(&self, artifact: &str, examples: &[String], timeout_s: f64) -> Result<EvalResult> {
        let request = ShimRequest {
            artifact: artifact.to_string(),
            problem_id: self.problem_id.clone(),
            example_ids: examples.to_vec(),
            time_limit_s: timeout_s,
        };
        let start = Instant::now();
        let mut child = self.spawn()?;
        let mut line = serde_json::to_vec(&request)?;
        line.push(b'\n');
        let mut stdin = child.stdin.take().expect("piped");
        let mut stdout = child.stdout.take().expect("piped");
        let mut stderr = child.stderr.take().expect("piped");
        let writer = thread::spawn(move || {
            let _ = stdin.write_all(&line);
        });
        let out_reader = thread::spawn(move || {
            let mut s = String::new();
            let _ = stdout.read_to_string(&mut s);
            s
        });
        let err_reader = thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            s
        });

        let deadline = start + Duration::from_secs_f64(timeout_s);
        let status = loop {
            match child.try_wait()? {
                Some(status) => break Some(status),
                None if Instant::now() >= deadline => {
                    kill_group(&mut child);
                    break None;
                }
                None => thread::sleep(Duration::from_millis(5)),
            }
        };
        // Grandchildren may still hold the pipes open; clear the group before joining.
        unsafe {
            libc::killpg(child.id() as libc::pid_t, libc::SIGKILL);
        }
        let _ = writer.join();
        let out = out_reader.join().unwrap_or_default();
        let err = err_reader.join().unwrap_or_default();
        let elapsed = start.elapsed().as_secs_f64();

        let Some(status) = status else {
            return Ok(EvalResult::failure("timeout", elapsed));
        };
        let Some(last) = out.lines().rev().find(|l| !l.trim().is_empty()) else {
            let msg = format!("shim exited with {status} and no response; stderr: {}", tail(&err, STDERR_TAIL));
            return Ok(EvalResult::failure(msg, elapsed));
        };
        let resp: ShimResponse = match serde_json::from_str(last) {
            Ok(r) => r,
            Err(e) => {
                let msg = format!("malformed shim response ({e}): {}", tail(last, STDERR_TAIL));
                return Ok(EvalResult::failure(msg, elapsed));
            }
        };
        let runtime = if resp.runtime_s > 0.0 { resp.runtime_s } else { elapsed };
        if let Some(e) = resp.error {
            return Ok(EvalResult::failure(e, runtime));
        }
        Ok(EvalResult::from_scores(resp.scores, runtime))
    }
}
