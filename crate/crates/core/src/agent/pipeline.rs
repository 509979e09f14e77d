//! Strategist and Executor stages.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::prompts::{
    compose_executor_prompt, compose_strategist_prompt, compose_system_prompt, render, PromptError,
    PromptLibrary,
};
use super::{
    AgentAction, AgentError, BackendRequest, ChatBackend, ErrorEpisode, MemoryBuffer, Message,
    SharedContext, StrategyPacket,
};
use crate::behavior::{CognitiveBehavior, MetacognitiveBehavior, ProfileLevel};

/// Distracted remarks used for off-topic steps when the backend is the mock.
pub const CANNED_OFF_TOPIC: &[&str] = &[
    "Hmm, I wonder what's for lunch today.",
    "Wait, my phone keeps buzzing. Hold on a second.",
    "I really need more coffee for this.",
    "Is it already this late? I still have that other homework.",
];

const STRATEGY_REMINDER: &str = "Your reply did not follow the required format. Reply again with exactly three labeled lines:\nGOAL: ...\nMINDSET: ...\nDIRECTIVE: ...";
const EXECUTOR_REMINDER: &str = "Your reply did not follow the required format. Reply again with a MONOLOGUE: line followed by the complete program in a ```python fenced code block.";
const ASSESSING_REMINDER: &str = "Your reply did not follow the required format. Reply again with a MONOLOGUE: line describing what you observe.";

fn default_strategist_temperature() -> f64 {
    0.8
}

fn default_executor_temperature() -> f64 {
    0.7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSettings {
    #[serde(default = "default_strategist_temperature")]
    pub strategist_temperature: f64,
    #[serde(default = "default_executor_temperature")]
    pub executor_temperature: f64,
    #[serde(default = "default_executor_temperature")]
    pub tutor_temperature: f64,
    /// Model token sent with each request; empty defers to the backend.
    #[serde(default)]
    pub model: String,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self {
            strategist_temperature: default_strategist_temperature(),
            executor_temperature: default_executor_temperature(),
            tutor_temperature: default_executor_temperature(),
            model: String::new(),
        }
    }
}

fn label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^[\s>#*_-]*(?:\d+[.)]\s*)?[*_]*(goal|mindset|directive)[*_]*\s*:[*_]*\s*(.*)$")
            .expect("valid regex")
    })
}

fn monologue_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?is)^[\s>#*_-]*(?:monologue|reflection)[*_]*\s*:[*_]*\s*(.*)$")
            .expect("valid regex")
    })
}

fn clean(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .trim_matches('*')
        .trim()
        .to_string()
}

/// Parse a GOAL / MINDSET / DIRECTIVE reply. Values may continue on the
/// following lines; all three must be present and non-empty.
pub fn parse_strategy(text: &str) -> Option<StrategyPacket> {
    let mut fields: [Option<String>; 3] = [None, None, None];
    let mut current: Option<usize> = None;
    for line in text.lines() {
        if let Some(caps) = label_re().captures(line) {
            let idx = match caps[1].to_ascii_lowercase().as_str() {
                "goal" => 0,
                "mindset" => 1,
                _ => 2,
            };
            fields[idx] = Some(caps[2].to_string());
            current = Some(idx);
        } else if let Some(idx) = current {
            if !line.trim().is_empty() {
                let slot = fields[idx].get_or_insert_with(String::new);
                slot.push(' ');
                slot.push_str(line.trim());
            }
        }
    }
    let [goal, mindset, directive] = fields.map(|f| f.map(|s| clean(&s)));
    let packet = StrategyPacket {
        goal: goal?,
        mindset: mindset?,
        directive: directive?,
    };
    packet.is_valid().then_some(packet)
}

/// Split an Executor reply into (utterance, code). The code is the last
/// fenced block; an unterminated fence runs to the end of the reply.
pub fn parse_executor_reply(text: &str) -> (Option<String>, Option<String>) {
    let mut prose = Vec::new();
    let mut blocks: Vec<Vec<&str>> = Vec::new();
    let mut in_code = false;
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            if in_code {
                in_code = false;
            } else {
                in_code = true;
                blocks.push(Vec::new());
            }
            continue;
        }
        if in_code {
            blocks.last_mut().expect("block opened").push(line);
        } else {
            prose.push(line);
        }
    }
    let code = blocks
        .pop()
        .map(|b| b.join("\n").trim_end().to_string())
        .filter(|c| !c.trim().is_empty());
    let prose = prose.join("\n");
    let body = match monologue_re().captures(prose.trim()) {
        Some(caps) => caps[1].to_string(),
        None => prose,
    };
    let utterance = Some(clean(&body)).filter(|u| !u.is_empty());
    (utterance, code)
}

/// Remember an error the student met, for later surfacing.
pub fn record_error_episode(mem: &mut MemoryBuffer, error_pattern: &str, realization: &str, fixed: bool) {
    mem.episodic.push(ErrorEpisode {
        error_pattern: error_pattern.to_string(),
        realization: realization.to_string(),
        fix_applied: fixed,
    });
}

/// One session's view of the pipeline.
pub struct Agent<'a> {
    pub lib: &'a PromptLibrary,
    pub backend: &'a mut dyn ChatBackend,
    pub settings: &'a AgentSettings,
    pub persona: ProfileLevel,
}

impl Agent<'_> {
    #[allow(clippy::too_many_arguments)]
    fn call<T>(
        &mut self,
        stage: &str,
        step: u32,
        temperature: f64,
        system: String,
        user: String,
        reminder: &str,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<T, AgentError> {
        let mut request = BackendRequest {
            messages: vec![Message::system(system), Message::user(user)],
            temperature,
            model: self.settings.model.clone(),
            stage: stage.to_string(),
            step,
        };
        let first = self.backend.chat(&request)?.content;
        if let Some(v) = parse(&first) {
            return Ok(v);
        }
        tracing::debug!(stage, step, "unparseable reply, asking again");
        request.messages.push(Message::assistant(first));
        request.messages.push(Message::user(reminder));
        let second = self.backend.chat(&request)?.content;
        parse(&second).ok_or_else(|| AgentError::Parse {
            stage: stage.to_string(),
            raw: second,
        })
    }

    /// Produce the segment's strategy packet. `c` is the segment's first
    /// cognitive step, which selects the mandate block.
    pub fn run_strategist(
        &mut self,
        step: u32,
        m: MetacognitiveBehavior,
        c: CognitiveBehavior,
        mem: &mut MemoryBuffer,
        ctx: &SharedContext,
    ) -> Result<StrategyPacket, AgentError> {
        let system = compose_system_prompt(self.persona, m, c, self.lib)?;
        let user = compose_strategist_prompt(m, mem, ctx, self.lib)?;
        let temperature = self.settings.strategist_temperature;
        let packet = self.call("strategist", step, temperature, system, user, STRATEGY_REMINDER, parse_strategy)?;
        mem.push(packet.summary());
        Ok(packet)
    }

    pub fn run_executor(
        &mut self,
        step: u32,
        packet: &StrategyPacket,
        m: MetacognitiveBehavior,
        c: CognitiveBehavior,
        mem: &mut MemoryBuffer,
        ctx: &SharedContext,
    ) -> Result<AgentAction, AgentError> {
        let system = compose_system_prompt(self.persona, m, c, self.lib)?;
        let user = compose_executor_prompt(packet, m, c, mem, ctx, self.lib)?;
        let code_required = c != CognitiveBehavior::Assessing;
        let reminder = if code_required { EXECUTOR_REMINDER } else { ASSESSING_REMINDER };
        let stage = format!("executor.{}", c.key());
        let temperature = self.settings.executor_temperature;
        let (utterance, code) = self.call(&stage, step, temperature, system, user, reminder, |text| {
            let (u, code) = parse_executor_reply(text);
            let u = u?;
            if code_required && code.is_none() {
                return None;
            }
            Some((u, code))
        })?;
        mem.push(utterance.clone());
        Ok(AgentAction {
            code: code.unwrap_or_else(|| ctx.prev_code.clone()),
            utterance,
        })
    }

    /// Distracted remark for an off-topic step.
    pub fn off_topic(
        &mut self,
        step: u32,
        m: MetacognitiveBehavior,
        c: CognitiveBehavior,
    ) -> Result<String, AgentError> {
        if self.backend.is_mock() {
            return Ok(CANNED_OFF_TOPIC[step as usize % CANNED_OFF_TOPIC.len()].to_string());
        }
        let system = compose_system_prompt(self.persona, m, c, self.lib)?;
        let user = self.lib.get("task.offtopic")?.to_string();
        let request = BackendRequest {
            messages: vec![Message::system(system), Message::user(user)],
            temperature: self.settings.executor_temperature,
            model: self.settings.model.clone(),
            stage: "offtopic".into(),
            step,
        };
        let reply = self.backend.chat(&request)?.content;
        let (utterance, _) = parse_executor_reply(&reply);
        Ok(utterance.unwrap_or_else(|| CANNED_OFF_TOPIC[0].to_string()))
    }

    /// The student's question on an assistance turn.
    pub fn help_request(&self, problem_hint: &str) -> Result<String, PromptError> {
        Ok(render(self.lib.get("student.help_request")?, &[("problem", problem_hint)]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_formats() {
        let plain = "GOAL: build the class\nMINDSET: nervous\nDIRECTIVE: write __init__";
        let p = parse_strategy(plain).unwrap();
        assert_eq!(p.goal, "build the class");
        assert_eq!(p.directive, "write __init__");

        let md = "1. **Goal**: get gravity right\n2. **Mindset:** unsure,\n   a bit lost\n3. **Directive**: add GRAVITY";
        let p = parse_strategy(md).unwrap();
        assert_eq!(p.goal, "get gravity right");
        assert_eq!(p.mindset, "unsure, a bit lost");
        assert_eq!(p.directive, "add GRAVITY");
    }

    #[test]
    fn strategy_requires_all_fields() {
        assert!(parse_strategy("I think we should write the class first.").is_none());
        assert!(parse_strategy("GOAL: x\nMINDSET: y\nDIRECTIVE:").is_none());
    }

    #[test]
    fn executor_reply_shapes() {
        let r = "MONOLOGUE: Let's try this.\n```python\nx=1\n```";
        assert_eq!(
            parse_executor_reply(r),
            (Some("Let's try this.".into()), Some("x=1".into()))
        );
        let (u, c) = parse_executor_reply("Looks good, seems right.");
        assert_eq!(u.as_deref(), Some("Looks good, seems right."));
        assert!(c.is_none());
        let (u, c) = parse_executor_reply("**Monologue:** hmm\n```\na=1\n```\n```python\nb=2\n");
        assert_eq!(u.as_deref(), Some("hmm"));
        assert_eq!(c.as_deref(), Some("b=2"));
        let (u, _) = parse_executor_reply("```python\nx=1\n```");
        assert!(u.is_none());
    }

    #[test]
    fn episodes_append() {
        let mut m = MemoryBuffer::new();
        record_error_episode(&mut m, "TypeError", "oops", false);
        assert_eq!(m.episodic.len(), 1);
        assert_eq!(m.episodes_for("TypeError").count(), 1);
        assert_eq!(m.episodes_for("NameError").count(), 0);
    }
}
