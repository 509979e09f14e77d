//! Two-stage language agent.
//!
//! A Strategist turns the current metacognitive state into a goal, mindset
//! and directive once per segment; an Executor turns that packet into a
//! monologue and code once per cognitive step. Prompts are assembled from
//! editable text blocks. Also hosts the tutors and the judge prompt.

mod backend;
mod judge;
mod pipeline;
mod prompts;
mod tutor;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::environment::Observation;

pub use backend::{
    BackendError, BackendRequest, BackendResponse, ChatBackend, HttpBackend, HttpConfig, Message,
    Role, Script, ScriptedBackend,
};
pub use judge::{
    compose_judge_prompt, fact_sheet_values, parse_verdict, render_trace_for_judge, JudgeVerdict,
    VerdictError, SCORE_FIELDS,
};
pub use pipeline::{
    parse_executor_reply, parse_strategy, record_error_episode, Agent, AgentSettings,
    CANNED_OFF_TOPIC,
};
pub use prompts::{
    compose_executor_prompt, compose_strategist_prompt, compose_system_prompt, render,
    render_feedback, PromptError, PromptLibrary, REQUIRED_BLOCKS,
};
pub use tutor::{generate_tutor_hint, scaffold_level, TutorContext, TutorOutcome};

/// Recent-output window size of each stage's memory.
pub const WINDOW_CAPACITY: usize = 3;

/// Runtime state shown to both stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedContext {
    /// Problem statement.
    pub task: String,
    pub prev_code: String,
    pub filtered_obs: Observation,
    /// Knowledge constraint text.
    pub constraints: String,
    /// Tutor hint, only on the step after an assistance request.
    pub intervention: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyPacket {
    pub goal: String,
    pub mindset: String,
    pub directive: String,
}

impl StrategyPacket {
    pub fn is_valid(&self) -> bool {
        [&self.goal, &self.mindset, &self.directive]
            .iter()
            .all(|s| !s.trim().is_empty())
    }

    /// One-line form used in the Strategist's memory window.
    pub fn summary(&self) -> String {
        format!(
            "Goal: {} | Mindset: {} | Directive: {}",
            self.goal, self.mindset, self.directive
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorEpisode {
    pub error_pattern: String,
    pub realization: String,
    pub fix_applied: bool,
}

/// Stage-local memory: a FIFO window of recent outputs plus episodic
/// records of errors met before.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryBuffer {
    window: VecDeque<String>,
    pub episodic: Vec<ErrorEpisode>,
}

impl MemoryBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append to the window, evicting the oldest entry when full.
    pub fn push(&mut self, item: impl Into<String>) {
        if self.window.len() == WINDOW_CAPACITY {
            self.window.pop_front();
        }
        self.window.push_back(item.into());
    }

    /// Window contents, oldest first.
    pub fn window(&self) -> impl Iterator<Item = &str> {
        self.window.iter().map(String::as_str)
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn episodes_for<'a>(&'a self, pattern: &'a str) -> impl Iterator<Item = &'a ErrorEpisode> {
        self.episodic.iter().filter(move |e| e.error_pattern == pattern)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAction {
    pub code: String,
    pub utterance: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaffoldLevel {
    None,
    Minimal,
    Guiding,
    Explicit,
}

impl ScaffoldLevel {
    pub const ALL: [ScaffoldLevel; 4] = [
        ScaffoldLevel::None,
        ScaffoldLevel::Minimal,
        ScaffoldLevel::Guiding,
        ScaffoldLevel::Explicit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScaffoldLevel::None => "None",
            ScaffoldLevel::Minimal => "Minimal",
            ScaffoldLevel::Guiding => "Guiding",
            ScaffoldLevel::Explicit => "Explicit",
        }
    }

    /// Next level up, saturating at `Explicit`.
    pub fn escalate(self) -> Self {
        match self {
            ScaffoldLevel::None => ScaffoldLevel::Minimal,
            ScaffoldLevel::Minimal => ScaffoldLevel::Guiding,
            _ => ScaffoldLevel::Explicit,
        }
    }
}

impl fmt::Display for ScaffoldLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TutorKind {
    #[default]
    None,
    Simple,
    Zpd,
}

impl FromStr for TutorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(TutorKind::None),
            "simple" => Ok(TutorKind::Simple),
            "zpd" => Ok(TutorKind::Zpd),
            other => Err(format!("unknown tutor `{other}` (expected none, simple or zpd)")),
        }
    }
}

impl fmt::Display for TutorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TutorKind::None => "none",
            TutorKind::Simple => "simple",
            TutorKind::Zpd => "zpd",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("could not parse {stage} reply after a retry; raw text: {raw:?}")]
    Parse { stage: String, raw: String },
}
