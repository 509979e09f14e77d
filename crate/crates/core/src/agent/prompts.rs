//! Prompt block library and composition.
//!
//! Blocks are markdown files keyed by file stem (`mandate.enacting.debugging`
//! for `mandate.enacting.debugging.md`). The shipped set is embedded in the
//! binary; a directory of edited copies can replace it. Dynamic values use
//! `{{name}}` placeholders.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{MemoryBuffer, SharedContext, StrategyPacket};
use crate::behavior::{CognitiveBehavior, MetacognitiveBehavior, ProfileLevel};
use crate::environment::Observation;

const SEPARATOR: &str = "\n\n";
const MAX_STDOUT_CHARS: usize = 1200;
const MAX_STDERR_CHARS: usize = 2000;

macro_rules! embedded {
    ($($key:literal),* $(,)?) => {
        &[$(($key, include_str!(concat!("../../../../assets/prompts/", $key, ".md")))),*]
    };
}

const EMBEDDED: &[(&str, &str)] = embedded![
    "base",
    "performer.low",
    "performer.high",
    "rules.no_psychic_debugging",
    "rules.memory",
    "rules.grounding",
    "mandate.planning.constructing",
    "mandate.planning.debugging",
    "mandate.planning.assessing",
    "mandate.enacting.constructing",
    "mandate.enacting.debugging",
    "mandate.enacting.assessing",
    "mandate.monitoring.constructing",
    "mandate.monitoring.debugging",
    "mandate.monitoring.assessing",
    "mandate.reflecting.constructing",
    "mandate.reflecting.debugging",
    "mandate.reflecting.assessing",
    "profile.planning",
    "profile.enacting",
    "profile.monitoring",
    "profile.reflecting",
    "task.strat",
    "task.exec.constructing",
    "task.exec.debugging",
    "task.exec.assessing",
    "task.offtopic",
    "student.help_request",
    "tutor.simple",
    "tutor.zpd",
    "judge.fact_sheet",
    "judge.instructions",
];

/// Every block key the pipeline may ask for.
pub const REQUIRED_BLOCKS: &[&str] = &[
    "base",
    "performer.low",
    "performer.high",
    "rules.no_psychic_debugging",
    "rules.memory",
    "rules.grounding",
    "mandate.planning.constructing",
    "mandate.planning.debugging",
    "mandate.planning.assessing",
    "mandate.enacting.constructing",
    "mandate.enacting.debugging",
    "mandate.enacting.assessing",
    "mandate.monitoring.constructing",
    "mandate.monitoring.debugging",
    "mandate.monitoring.assessing",
    "mandate.reflecting.constructing",
    "mandate.reflecting.debugging",
    "mandate.reflecting.assessing",
    "profile.planning",
    "profile.enacting",
    "profile.monitoring",
    "profile.reflecting",
    "task.strat",
    "task.exec.constructing",
    "task.exec.debugging",
    "task.exec.assessing",
    "task.offtopic",
    "student.help_request",
    "tutor.simple",
    "tutor.zpd",
    "judge.fact_sheet",
    "judge.instructions",
];

const RULE_KEYS: [&str; 3] = ["rules.no_psychic_debugging", "rules.memory", "rules.grounding"];

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("prompt block `{0}` is missing")]
    MissingBlock(String),
    #[error("cannot read prompt assets at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLibrary {
    blocks: BTreeMap<String, String>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::embedded()
    }
}

impl PromptLibrary {
    /// The shipped blocks.
    pub fn embedded() -> Self {
        Self::from_map(EMBEDDED.iter().map(|(k, v)| (k.to_string(), v.to_string())))
    }

    pub fn from_map(blocks: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            blocks: blocks
                .into_iter()
                .map(|(k, v)| (k, v.trim().to_string()))
                .collect(),
        }
    }

    /// Load every `*.md` file of `dir`. Missing keys surface when composed,
    /// or up front through [`PromptLibrary::validate`].
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let io = |source| PromptError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut blocks = BTreeMap::new();
        for entry in std::fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("md") {
                continue;
            }
            let Some(key) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let text = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.clone(),
                source,
            })?;
            blocks.insert(key.to_string(), text);
        }
        Ok(Self::from_map(blocks))
    }

    pub fn get(&self, key: &str) -> Result<&str, PromptError> {
        self.blocks
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| PromptError::MissingBlock(key.to_string()))
    }

    pub fn insert(&mut self, key: impl Into<String>, text: impl Into<String>) {
        self.blocks.insert(key.into(), text.into().trim().to_string());
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.blocks.remove(key)
    }

    /// Fails on the first required block that is absent.
    pub fn validate(&self) -> Result<(), PromptError> {
        REQUIRED_BLOCKS.iter().try_for_each(|k| self.get(k).map(|_| ()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.blocks.keys().map(String::as_str)
    }
}

/// Fill `{{name}}` placeholders. Unknown placeholders are left as is.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in values {
        out = out.replace(&format!("{{{{{k}}}}}"), v);
    }
    out
}

fn truncate_chars(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        return s.to_string();
    }
    let kept: String = s.chars().take(max).collect();
    format!("{kept}\n... (truncated)")
}

/// Feedback section text for an observation as the student sees it.
pub fn render_feedback(obs: &Observation) -> String {
    if !obs.executed {
        return "(Code drafted but not executed)".to_string();
    }
    let mut out = format!("Tests passed: {}/{}", obs.tests_passed, obs.tests_total);
    if !obs.error_types.is_empty() {
        let list: Vec<String> = obs
            .error_types
            .iter()
            .map(|(name, n)| format!("{name} x{n}"))
            .collect();
        out.push_str(&format!("\nError types: {}", list.join(", ")));
    }
    if !obs.stdout.trim().is_empty() {
        out.push_str(&format!("\nOutput:\n{}", truncate_chars(obs.stdout.trim_end(), MAX_STDOUT_CHARS)));
    }
    if !obs.stderr.trim().is_empty() {
        out.push_str(&format!("\nErrors:\n{}", truncate_chars(obs.stderr.trim_end(), MAX_STDERR_CHARS)));
    }
    out
}

fn render_context(ctx: &SharedContext) -> String {
    let code = if ctx.prev_code.trim().is_empty() {
        "(no code yet)".to_string()
    } else {
        format!("```python\n{}\n```", ctx.prev_code.trim_end())
    };
    let knowledge = if ctx.constraints.trim().is_empty() {
        "(nothing to note)"
    } else {
        ctx.constraints.as_str()
    };
    let mut parts = vec![
        format!("## Problem\n{}", ctx.task.trim()),
        format!("## Current Code\n{code}"),
        format!("## Last Output\n{}", render_feedback(&ctx.filtered_obs)),
        format!("## Knowledge\n{knowledge}"),
    ];
    if let Some(hint) = &ctx.intervention {
        parts.push(format!("## Intervention\n{}", hint.trim()));
    }
    parts.join(SEPARATOR)
}

/// Memory section, or `None` when there is nothing to show. Episodic
/// records surface only for error types present in the visible feedback.
fn render_memory(mem: &MemoryBuffer, ctx: &SharedContext) -> Option<String> {
    let mut lines = Vec::new();
    if mem.window_len() > 0 {
        lines.push("Your recent thoughts (oldest first):".to_string());
        for (i, item) in mem.window().enumerate() {
            lines.push(format!("{}. {}", i + 1, item.trim()));
        }
    }
    let surfaced: Vec<String> = ctx
        .filtered_obs
        .error_types
        .keys()
        .flat_map(|pattern| {
            mem.episodes_for(pattern).map(move |e| {
                let status = if e.fix_applied { "you fixed it" } else { "not fixed yet" };
                format!("- {pattern}: {} ({status})", e.realization.trim())
            })
        })
        .collect();
    if !surfaced.is_empty() {
        lines.push("You have run into this before:".to_string());
        lines.extend(surfaced);
    }
    (!lines.is_empty()).then(|| format!("## Memory\n{}", lines.join("\n")))
}

fn mandate_key(m: MetacognitiveBehavior, c: CognitiveBehavior) -> String {
    format!("mandate.{}.{}", m.key(), c.key())
}

/// Base, Performer(persona), Rules and Mandate(m, c), in that order.
pub fn compose_system_prompt(
    persona: ProfileLevel,
    m: MetacognitiveBehavior,
    c: CognitiveBehavior,
    lib: &PromptLibrary,
) -> Result<String, PromptError> {
    let mut parts = vec![lib.get("base")?, lib.get(&format!("performer.{}", persona.key()))?];
    for k in RULE_KEYS {
        parts.push(lib.get(k)?);
    }
    let mandate = mandate_key(m, c);
    parts.push(lib.get(&mandate)?);
    Ok(parts.join(SEPARATOR))
}

/// Task_Strat, then memory, then context.
pub fn compose_strategist_prompt(
    m: MetacognitiveBehavior,
    mem: &MemoryBuffer,
    ctx: &SharedContext,
    lib: &PromptLibrary,
) -> Result<String, PromptError> {
    let mut parts = vec![render(lib.get("task.strat")?, &[("metacog", m.name())])];
    parts.extend(render_memory(mem, ctx));
    parts.push(render_context(ctx));
    Ok(parts.join(SEPARATOR))
}

/// Profile(m), strategy, Task_Exec(c), memory, context.
pub fn compose_executor_prompt(
    packet: &StrategyPacket,
    m: MetacognitiveBehavior,
    c: CognitiveBehavior,
    mem: &MemoryBuffer,
    ctx: &SharedContext,
    lib: &PromptLibrary,
) -> Result<String, PromptError> {
    let mut parts = vec![
        lib.get(&format!("profile.{}", m.key()))?.to_string(),
        format!(
            "## Strategy\nGoal: {}\nMindset: {}\nDirective: {}",
            packet.goal.trim(),
            packet.mindset.trim(),
            packet.directive.trim()
        ),
        lib.get(&format!("task.exec.{}", c.key()))?.to_string(),
    ];
    parts.extend(render_memory(mem, ctx));
    parts.push(render_context(ctx));
    Ok(parts.join(SEPARATOR))
}
