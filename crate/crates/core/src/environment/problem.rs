//! Problem fixture files.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::oracle::KcDetector;
use super::runner::DEFAULT_ERROR_TOKENS;
use super::EnvironmentError;
use crate::knowledge::{KcCategory, KnowledgeComponent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub name: String,
    /// Code appended after the student's source; a failing check must raise.
    pub harness: String,
}

/// Structural rule crediting a KC: every `all` pattern matches, at least one
/// `any` pattern matches (when given), and no `none` pattern matches. Patterns
/// are regular expressions evaluated in multi-line mode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorRule {
    #[serde(default)]
    pub all: Vec<String>,
    #[serde(default)]
    pub any: Vec<String>,
    #[serde(default)]
    pub none: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KcDefinition {
    pub id: String,
    pub label: String,
    pub category: KcCategory,
    pub constraint_phrase: String,
    pub detector: DetectorRule,
}

fn default_timeout() -> f64 {
    5.0
}

fn default_parallelism() -> usize {
    4
}

/// On-disk shape of a problem fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub id: String,
    pub description: String,
    /// Command template; `{source}` is replaced by the temp source path.
    pub interpreter_command: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Text prepended to code states when densifying traces for viewing.
    #[serde(default)]
    pub header: String,
    #[serde(default)]
    pub reference_solution: String,
    #[serde(default)]
    pub error_tokens: Option<Vec<String>>,
    #[serde(rename = "kc")]
    pub kcs: Vec<KcDefinition>,
    #[serde(rename = "test")]
    pub tests: Vec<TestCase>,
}

/// A loaded, validated problem with compiled KC detectors.
#[derive(Debug, Clone)]
pub struct ProblemConfig {
    pub id: String,
    pub description: String,
    pub interpreter_command: Vec<String>,
    pub timeout_secs: f64,
    pub parallelism: usize,
    pub header: String,
    pub reference_solution: String,
    pub error_tokens: Vec<String>,
    pub kcs: Vec<KnowledgeComponent>,
    pub detectors: Vec<(String, KcDetector)>,
    pub tests: Vec<TestCase>,
}

impl ProblemConfig {
    pub fn from_file(file: ProblemFile) -> Result<Self, EnvironmentError> {
        let err = |msg: String| EnvironmentError::Config(format!("problem `{}`: {msg}", file.id));
        if file.tests.is_empty() {
            return Err(err("at least one test case is required".into()));
        }
        let mut names = BTreeSet::new();
        for t in &file.tests {
            if !names.insert(t.name.as_str()) {
                return Err(err(format!("duplicate test name `{}`", t.name)));
            }
        }
        let mut ids = BTreeSet::new();
        for kc in &file.kcs {
            if !ids.insert(kc.id.as_str()) {
                return Err(err(format!("duplicate KC id `{}`", kc.id)));
            }
        }
        if file.interpreter_command.is_empty() {
            return Err(err("interpreter_command is empty".into()));
        }
        if !file.interpreter_command.iter().any(|a| a.contains("{source}")) {
            return Err(err("interpreter_command must contain `{source}`".into()));
        }
        if !(file.timeout_secs > 0.0) {
            return Err(err("timeout_secs must be positive".into()));
        }
        let mut detectors = Vec::with_capacity(file.kcs.len());
        for kc in &file.kcs {
            let det = KcDetector::compile(&kc.detector)
                .map_err(|e| err(format!("detector for `{}`: {e}", kc.id)))?;
            detectors.push((kc.id.clone(), det));
        }
        let kcs = file
            .kcs
            .iter()
            .map(|k| KnowledgeComponent {
                id: k.id.clone(),
                label: k.label.clone(),
                category: k.category,
                constraint_phrase: k.constraint_phrase.clone(),
            })
            .collect();
        Ok(Self {
            id: file.id,
            description: file.description,
            interpreter_command: file.interpreter_command,
            timeout_secs: file.timeout_secs,
            parallelism: file.parallelism.max(1),
            header: file.header,
            reference_solution: file.reference_solution,
            error_tokens: file
                .error_tokens
                .unwrap_or_else(|| DEFAULT_ERROR_TOKENS.iter().map(|s| s.to_string()).collect()),
            kcs,
            detectors,
            tests: file.tests,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, EnvironmentError> {
        let file: ProblemFile =
            toml::from_str(text).map_err(|e| EnvironmentError::Config(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self, EnvironmentError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            EnvironmentError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
            .map_err(|e| EnvironmentError::Config(format!("{}: {e}", path.display())))
    }

    pub fn tests_total(&self) -> u32 {
        self.tests.len() as u32
    }

    pub fn kc_ids(&self) -> Vec<String> {
        self.kcs.iter().map(|k| k.id.clone()).collect()
    }
}
