//! Tutors answering assistance requests.

use serde::{Deserialize, Serialize};

use super::pipeline::AgentSettings;
use super::prompts::{render, PromptError, PromptLibrary};
use super::{BackendRequest, ChatBackend, Message, ScaffoldLevel, TutorKind};
use crate::behavior::MetacognitiveBehavior;
use crate::knowledge::{KnowledgeComponent, KnowledgeState};

/// Scaffold level for a KC at mastery `p_l`, escalated one level per
/// consecutive failure (at most two).
pub fn scaffold_level(p_l: f64, consecutive_failures: u32) -> ScaffoldLevel {
    let base = if p_l > 0.7 {
        ScaffoldLevel::None
    } else if p_l >= 0.5 {
        ScaffoldLevel::Minimal
    } else if p_l >= 0.3 {
        ScaffoldLevel::Guiding
    } else {
        ScaffoldLevel::Explicit
    };
    (0..consecutive_failures.min(2)).fold(base, |level, _| level.escalate())
}

fn level_guidance(level: ScaffoldLevel) -> &'static str {
    match level {
        ScaffoldLevel::None => "Only encourage the student; they are close and should find it themselves.",
        ScaffoldLevel::Minimal => "Give a gentle nudge toward where to look, without naming the fix.",
        ScaffoldLevel::Guiding => "Name the relevant concept and ask a guiding question that leads to the fix.",
        ScaffoldLevel::Explicit => "State exactly what to change and why, with a one-line example.",
    }
}

pub struct TutorContext<'a> {
    pub question: &'a str,
    pub code: &'a str,
    pub metacog: MetacognitiveBehavior,
    pub recent_errors: &'a [String],
    /// Earlier hints on the same KC that did not lead to credit for it.
    pub consecutive_failures: u32,
    pub kcs: &'a [KnowledgeComponent],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TutorOutcome {
    pub hint: Option<String>,
    pub target_kc: Option<String>,
    pub level: Option<ScaffoldLevel>,
    /// Tutor prompt sent to the backend.
    pub prompt: Option<String>,
    /// Backend failure that caused the hint to be omitted.
    pub error: Option<String>,
}

/// Answer an assistance request. Backend failures omit the hint instead of
/// failing the session; missing prompt blocks are configuration errors.
#[allow(clippy::too_many_arguments)]
pub fn generate_tutor_hint(
    kind: TutorKind,
    knowledge: &KnowledgeState,
    tctx: &TutorContext<'_>,
    lib: &PromptLibrary,
    backend: &mut dyn ChatBackend,
    settings: &AgentSettings,
    step: u32,
) -> Result<TutorOutcome, PromptError> {
    let mut outcome = TutorOutcome::default();
    let target = match kind {
        TutorKind::None => return Ok(outcome),
        TutorKind::Simple => None,
        TutorKind::Zpd => knowledge.lowest_mastery(),
    };
    let prompt = match target {
        Some((kc_id, p)) => {
            let level = scaffold_level(p, tctx.consecutive_failures);
            let label = tctx
                .kcs
                .iter()
                .find(|k| k.id == kc_id)
                .map(|k| k.label.as_str())
                .unwrap_or(kc_id);
            let errors = if tctx.recent_errors.is_empty() {
                "none".to_string()
            } else {
                tctx.recent_errors.join(", ")
            };
            outcome.target_kc = Some(kc_id.to_string());
            outcome.level = Some(level);
            render(
                lib.get("tutor.zpd")?,
                &[
                    ("kc_id", kc_id),
                    ("kc_label", label),
                    ("mastery", &format!("{p:.2}")),
                    ("level", level.name()),
                    ("level_guidance", level_guidance(level)),
                    ("errors", &errors),
                    ("metacog", &tctx.metacog.name().to_lowercase()),
                    ("question", tctx.question),
                    ("code", tctx.code.trim_end()),
                ],
            )
        }
        None => render(
            lib.get("tutor.simple")?,
            &[("question", tctx.question), ("code", tctx.code.trim_end())],
        ),
    };
    let request = BackendRequest {
        messages: vec![Message::user(prompt.clone())],
        temperature: settings.tutor_temperature,
        model: settings.model.clone(),
        stage: "tutor".into(),
        step,
    };
    outcome.prompt = Some(prompt);
    match backend.chat(&request) {
        Ok(r) if !r.content.trim().is_empty() => outcome.hint = Some(r.content.trim().to_string()),
        Ok(_) => outcome.error = Some("empty tutor reply".into()),
        Err(e) => {
            tracing::warn!(step, error = %e, "tutor hint omitted");
            outcome.error = Some(e.to_string());
        }
    }
    Ok(outcome)
}
