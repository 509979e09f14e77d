//! Subprocess test runner.
//!
//! Each test runs in its own process and temp directory: the student source
//! followed by the test harness and a pass-marker print. A test passes only
//! when the process exits 0 and the marker is the last stdout line, so student
//! code that exits early cannot fake a pass.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::ErrorKind;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use wait_timeout::ChildExt;

use super::problem::{ProblemConfig, TestCase};
use super::{EnvironmentError, Observation};

pub const DEFAULT_ERROR_TOKENS: &[&str] = &[
    "TypeError",
    "NameError",
    "AttributeError",
    "ValueError",
    "AssertionError",
    "SyntaxError",
    "Timeout",
    "Other",
];

const SOURCE_FILE: &str = "solution.py";

struct TestOutcome {
    passed: bool,
    stdout: String,
    stderr: String,
    error_type: Option<String>,
}

/// Error-type token from the last non-empty stderr line, or `None` when
/// stderr is blank. Names outside `tokens` map to `Other`.
pub fn parse_error_type(stderr: &str, tokens: &[String]) -> Option<String> {
    let last = stderr.lines().rev().map(str::trim).find(|l| !l.is_empty())?;
    let head = last.split(':').next().unwrap_or("").trim();
    let name = head.rsplit('.').next().unwrap_or(head);
    let is_ident = !name.is_empty()
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && name.chars().next().is_some_and(|c| c.is_ascii_alphabetic());
    let name = match name {
        "IndentationError" | "TabError" => "SyntaxError",
        other => other,
    };
    let known = |n: &str| tokens.iter().any(|t| t == n);
    if is_ident && known(name) {
        Some(name.to_string())
    } else if known("Other") {
        Some("Other".to_string())
    } else {
        tokens.last().cloned()
    }
}

fn marker(source: &str, test: &TestCase) -> String {
    let mut h = DefaultHasher::new();
    source.hash(&mut h);
    test.name.hash(&mut h);
    test.harness.hash(&mut h);
    format!("__harness_ok_{:016x}__", h.finish())
}

fn run_test(
    source: &str,
    test: &TestCase,
    problem: &ProblemConfig,
) -> Result<TestOutcome, EnvironmentError> {
    let io_err = |e: std::io::Error| EnvironmentError::Io {
        test: test.name.clone(),
        source: e,
    };
    let dir = tempfile::tempdir().map_err(io_err)?;
    let src_path = dir.path().join(SOURCE_FILE);
    let mark = marker(source, test);
    let program = format!("{source}\n\n{}\nprint({mark:?})\n", test.harness.trim_end());
    std::fs::write(&src_path, program).map_err(io_err)?;

    let src_str = src_path.to_string_lossy().to_string();
    let args: Vec<String> = problem
        .interpreter_command
        .iter()
        .map(|a| a.replace("{source}", &src_str))
        .collect();
    let out_path = dir.path().join("stdout.txt");
    let err_path = dir.path().join("stderr.txt");
    let mut child = Command::new(&args[0])
        .args(&args[1..])
        .current_dir(dir.path())
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .env("PYTHONHASHSEED", "0")
        .stdin(Stdio::null())
        .stdout(File::create(&out_path).map_err(io_err)?)
        .stderr(File::create(&err_path).map_err(io_err)?)
        .spawn()
        .map_err(|e| {
            if e.kind() == ErrorKind::NotFound {
                EnvironmentError::InterpreterMissing(args[0].clone())
            } else {
                io_err(e)
            }
        })?;

    let status = child
        .wait_timeout(Duration::from_secs_f64(problem.timeout_secs))
        .map_err(io_err)?;
    let timed_out = status.is_none();
    let status = match status {
        Some(s) => s,
        None => {
            let _ = child.kill();
            child.wait().map_err(io_err)?
        }
    };

    // Temp paths differ per run; strip them so observations are reproducible.
    let prefix = format!("{}/", dir.path().to_string_lossy());
    let read = |p: &std::path::Path| {
        std::fs::read(p)
            .map(|b| String::from_utf8_lossy(&b).replace(&prefix, ""))
            .unwrap_or_default()
    };
    let raw_stdout = read(&out_path);
    let stderr = read(&err_path);

    let mut lines: Vec<&str> = raw_stdout.lines().collect();
    let marker_seen = lines.last() == Some(&mark.as_str());
    if marker_seen {
        lines.pop();
    }
    let mut stdout = lines.join("\n");
    if !stdout.is_empty() {
        stdout.push('\n');
    }

    let passed = !timed_out && status.success() && marker_seen;
    let error_type = if timed_out {
        Some("Timeout".to_string())
    } else if passed {
        None
    } else {
        Some(parse_error_type(&stderr, &problem.error_tokens).unwrap_or_else(|| "Other".into()))
    };
    let stderr = if timed_out {
        format!(
            "{stderr}Timeout: test exceeded {} s",
            problem.timeout_secs
        )
    } else {
        stderr
    };
    Ok(TestOutcome {
        passed,
        stdout,
        stderr,
        error_type,
    })
}

/// Run every test of `problem` against `source` and aggregate the results in
/// test order.
pub fn execute_code(source: &str, problem: &ProblemConfig) -> Result<Observation, EnvironmentError> {
    let n = problem.tests.len();
    let workers = problem.parallelism.clamp(1, n.max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<TestOutcome, EnvironmentError>>>> =
        Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let outcome = run_test(source, &problem.tests[i], problem);
                slots.lock().expect("runner slots poisoned")[i] = Some(outcome);
            });
        }
    });

    let mut obs = Observation::initial(n as u32);
    obs.executed = true;
    obs.exit_ok = true;
    for (test, slot) in problem
        .tests
        .iter()
        .zip(slots.into_inner().expect("runner slots poisoned"))
    {
        let outcome = slot.expect("every test ran")?;
        if outcome.passed {
            obs.tests_passed += 1;
        } else {
            obs.exit_ok = false;
        }
        if !outcome.stdout.is_empty() {
            obs.stdout.push_str(&format!("--- {} ---\n{}", test.name, outcome.stdout));
        }
        if !outcome.passed && !outcome.stderr.trim().is_empty() {
            obs.stderr.push_str(&format!("--- {} ---\n{}", test.name, outcome.stderr));
            if !obs.stderr.ends_with('\n') {
                obs.stderr.push('\n');
            }
        }
        if let Some(e) = outcome.error_type {
            *obs.error_types.entry(e).or_insert(0) += 1;
        }
    }
    Ok(obs)
}

/// Runner that memoizes observations by source text. Runs are deterministic
/// for the bundled fixtures, and mock-driven batches resubmit identical code
/// many times. Concurrent requests for the same source wait for a single
/// execution; failed executions are not cached.
#[derive(Debug, Clone)]
pub struct CachedRunner {
    problem: Arc<ProblemConfig>,
    cache: Arc<Mutex<HashMap<String, Arc<Mutex<Option<Observation>>>>>>,
}

impl CachedRunner {
    pub fn new(problem: Arc<ProblemConfig>) -> Self {
        Self {
            problem,
            cache: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    pub fn problem(&self) -> &Arc<ProblemConfig> {
        &self.problem
    }

    pub fn execute(&self, source: &str) -> Result<Observation, EnvironmentError> {
        let slot = self
            .cache
            .lock()
            .expect("cache poisoned")
            .entry(source.to_string())
            .or_default()
            .clone();
        let mut slot = slot.lock().expect("cache slot poisoned");
        if let Some(hit) = slot.as_ref() {
            return Ok(hit.clone());
        }
        let obs = execute_code(source, &self.problem)?;
        *slot = Some(obs.clone());
        Ok(obs)
    }
}
