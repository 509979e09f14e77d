//! KC-level feedback from structural rules over the source text.

use std::collections::BTreeSet;

use regex::Regex;

use super::problem::{DetectorRule, ProblemConfig};

#[derive(Debug, Clone)]
pub struct KcDetector {
    all: Vec<Regex>,
    any: Vec<Regex>,
    none: Vec<Regex>,
}

fn compile_all(patterns: &[String]) -> Result<Vec<Regex>, regex::Error> {
    patterns
        .iter()
        .map(|p| Regex::new(&format!("(?m){p}")))
        .collect()
}

impl KcDetector {
    pub fn compile(rule: &DetectorRule) -> Result<Self, String> {
        if rule.all.is_empty() && rule.any.is_empty() {
            return Err("needs at least one `all` or `any` pattern".into());
        }
        Ok(Self {
            all: compile_all(&rule.all).map_err(|e| e.to_string())?,
            any: compile_all(&rule.any).map_err(|e| e.to_string())?,
            none: compile_all(&rule.none).map_err(|e| e.to_string())?,
        })
    }

    pub fn matches(&self, source: &str) -> bool {
        self.all.iter().all(|r| r.is_match(source))
            && (self.any.is_empty() || self.any.iter().any(|r| r.is_match(source)))
            && !self.none.iter().any(|r| r.is_match(source))
    }
}

/// Strip `#` comments so commented-out code earns no credit. String literals
/// containing `#` are rare in the fixtures and are cut conservatively.
fn strip_comments(source: &str) -> String {
    source
        .lines()
        .map(|line| match line.find('#') {
            Some(i) => &line[..i],
            None => line,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// KC ids whose detector matches the source, in id order.
pub fn kc_oracle(source: &str, problem: &ProblemConfig) -> BTreeSet<String> {
    let code = strip_comments(source);
    if code.trim().is_empty() {
        return BTreeSet::new();
    }
    problem
        .detectors
        .iter()
        .filter(|(_, d)| d.matches(&code))
        .map(|(id, _)| id.clone())
        .collect()
}
