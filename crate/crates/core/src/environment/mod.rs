//! Code execution environment.
//!
//! Runs student code against a problem's unit tests, redacts error details
//! while the student is in an impulsive state, decides when code is executed
//! around an edit, and credits knowledge components from the source text.

mod oracle;
mod problem;
mod runner;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::behavior::{CognitiveBehavior, MetacognitiveBehavior};

pub use oracle::{kc_oracle, KcDetector};
pub use problem::{DetectorRule, KcDefinition, ProblemConfig, ProblemFile, TestCase};
pub use runner::{execute_code, parse_error_type, CachedRunner, DEFAULT_ERROR_TOKENS};

/// Replacement text for error output hidden from the student.
pub const REDACTED: &str = "[Error]: [output omitted...]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub stdout: String,
    pub stderr: String,
    pub exit_ok: bool,
    pub tests_passed: u32,
    pub tests_total: u32,
    /// Error-type token to number of failing tests reporting it.
    pub error_types: BTreeMap<String, u32>,
    pub executed: bool,
}

impl Observation {
    /// Observation before anything has run.
    pub fn initial(tests_total: u32) -> Self {
        Self {
            stdout: String::new(),
            stderr: String::new(),
            exit_ok: false,
            tests_passed: 0,
            tests_total,
            error_types: BTreeMap::new(),
            executed: false,
        }
    }

    /// Unexecuted observation that keeps the counts of `prev`.
    pub fn carried(prev: &Observation) -> Self {
        Self {
            stdout: String::new(),
            stderr: String::new(),
            exit_ok: prev.exit_ok,
            tests_passed: prev.tests_passed,
            tests_total: prev.tests_total,
            error_types: BTreeMap::new(),
            executed: false,
        }
    }

    pub fn has_error(&self) -> bool {
        !self.error_types.is_empty() || !self.stderr.trim().is_empty()
    }

    pub fn all_passed(&self) -> bool {
        self.executed && self.tests_total > 0 && self.tests_passed == self.tests_total
    }
}

/// When code runs around an edit, by cognitive behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub execute_before: bool,
    pub allow_modify: bool,
    /// Only cosmetic edits are expected; surfaced to the agent prompt.
    pub cleanup_only: bool,
    pub execute_after: bool,
}

pub fn gate_execution(c: CognitiveBehavior) -> ExecutionPlan {
    match c {
        CognitiveBehavior::Constructing => ExecutionPlan {
            execute_before: false,
            allow_modify: true,
            cleanup_only: false,
            execute_after: false,
        },
        CognitiveBehavior::Debugging => ExecutionPlan {
            execute_before: true,
            allow_modify: true,
            cleanup_only: false,
            execute_after: true,
        },
        CognitiveBehavior::Assessing => ExecutionPlan {
            execute_before: false,
            allow_modify: false,
            cleanup_only: true,
            execute_after: true,
        },
    }
}

/// Hide error details while enacting; everything else passes through.
pub fn filter_observation(o: &Observation, m: MetacognitiveBehavior) -> Observation {
    let mut out = o.clone();
    if m == MetacognitiveBehavior::Enacting && o.has_error() {
        out.stderr = REDACTED.to_string();
        out.error_types.clear();
    }
    out
}

/// Fraction of tests passing.
pub fn compute_progress(o: &Observation) -> f64 {
    if o.tests_total == 0 {
        0.0
    } else {
        o.tests_passed as f64 / o.tests_total as f64
    }
}

pub fn knowledge_update_allowed(m: MetacognitiveBehavior) -> bool {
    matches!(
        m,
        MetacognitiveBehavior::Monitoring | MetacognitiveBehavior::Reflecting
    )
}

#[derive(Debug, thiserror::Error)]
pub enum EnvironmentError {
    #[error("interpreter `{0}` not found")]
    InterpreterMissing(String),
    #[error("failed to run test `{test}`: {source}")]
    Io {
        test: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid problem config: {0}")]
    Config(String),
}
