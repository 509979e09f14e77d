//! Judge prompt assembly and verdict parsing.
//!
//! The judge sees a plain rendering of the trace with the fact sheet
//! prepended as ground truth. Its reply is a JSON object with a
//! justification and four scores on a 1 to 3 scale.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::prompts::{render, render_feedback, PromptError, PromptLibrary};
use crate::metrics::FactSheet;
use crate::session::Trajectory;

const SEPARATOR: &str = "\n\n";

pub const SCORE_FIELDS: [&str; 4] = [
    "realism_score",
    "code_quality_realism",
    "debugging_pattern_realism",
    "language_realism",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub justification: String,
    pub realism_score: u8,
    pub code_quality_realism: u8,
    pub debugging_pattern_realism: u8,
    pub language_realism: u8,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum VerdictError {
    #[error("no JSON object with a `realism_score` field in the judge reply")]
    NoObject,
    #[error("verdict field `{0}` is missing")]
    Missing(&'static str),
    #[error("verdict field `{field}` must be an integer from 1 to 3, got {value}")]
    OutOfRange { field: &'static str, value: String },
}

/// Placeholder values for the fact-sheet block. The cramped ratio is shown
/// as a percentage with one decimal, or `n/a` when the code has no
/// assignments.
pub fn fact_sheet_values(sheet: &FactSheet) -> Vec<(&'static str, String)> {
    vec![
        ("total_steps", sheet.total_steps.to_string()),
        ("uncertainty_markers", sheet.uncertainty_markers.to_string()),
        ("frustration_markers", sheet.frustration_markers.to_string()),
        ("max_phrase_repetition", sheet.max_phrase_repetition.to_string()),
        (
            "cramped_ratio_pct",
            sheet.cramped_ratio.map_or("n/a".into(), |r| format!("{:.1}", r * 100.0)),
        ),
        ("single_letter_variables", sheet.single_letter_variables.to_string()),
        ("emotional_comments", sheet.emotional_comments.to_string()),
        ("disconnected_fixes", sheet.disconnected_fixes.to_string()),
    ]
}

/// Step-by-step text of a trace as an observer would see it: what the
/// student said, the code whenever it changed, and each run's result.
/// Behavior labels are left out.
pub fn render_trace_for_judge(traj: &Trajectory) -> String {
    let mut out = Vec::new();
    let mut prev_code = "";
    for s in &traj.steps {
        let mut block = vec![format!("### Step {}", s.t)];
        if !s.action.utterance.trim().is_empty() {
            block.push(format!("Student: {}", s.action.utterance.trim()));
        }
        let code = s.action.code.as_str();
        if code != prev_code && !code.trim().is_empty() {
            block.push(format!("```python\n{}\n```", code.trim_end()));
        }
        prev_code = code;
        if let Some(pre) = s.pre_obs.as_ref().filter(|o| o.executed) {
            block.push(format!("Run before editing:\n{}", render_feedback(pre)));
        }
        if s.raw_obs.executed {
            block.push(format!("Run:\n{}", render_feedback(&s.raw_obs)));
        }
        out.push(block.join("\n"));
    }
    out.join(SEPARATOR)
}

/// Rubric, fact sheet, then the trace.
pub fn compose_judge_prompt(traj: &Trajectory, sheet: &FactSheet, lib: &PromptLibrary) -> Result<String, PromptError> {
    let values = fact_sheet_values(sheet);
    let pairs: Vec<(&str, &str)> = values.iter().map(|(k, v)| (*k, v.as_str())).collect();
    Ok([
        lib.get("judge.instructions")?.to_string(),
        render(lib.get("judge.fact_sheet")?, &pairs),
        format!("## Student Trace\n\n{}", render_trace_for_judge(traj)),
    ]
    .join(SEPARATOR))
}

/// Every top-level JSON object embedded in `text`, in order.
fn json_objects(text: &str) -> impl Iterator<Item = serde_json::Map<String, Value>> + '_ {
    text.char_indices().filter(|(_, c)| *c == '{').filter_map(|(i, _)| {
        let mut it = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match it.next() {
            Some(Ok(Value::Object(m))) => Some(m),
            _ => None,
        }
    })
}

fn score(obj: &serde_json::Map<String, Value>, field: &'static str) -> Result<u8, VerdictError> {
    let v = obj.get(field).ok_or(VerdictError::Missing(field))?;
    let n = match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    };
    match n {
        Some(x) if x.fract() == 0.0 && (1.0..=3.0).contains(&x) => Ok(x as u8),
        _ => Err(VerdictError::OutOfRange {
            field,
            value: v.to_string(),
        }),
    }
}

/// Parse a judge reply. The first JSON object carrying `realism_score` is
/// used, so fences or surrounding prose do not matter. Scores given as
/// numeric strings are accepted.
pub fn parse_verdict(text: &str) -> Result<JudgeVerdict, VerdictError> {
    let obj = json_objects(text)
        .find(|o| o.contains_key("realism_score"))
        .ok_or(VerdictError::NoObject)?;
    let justification = match obj.get("justification") {
        Some(Value::String(s)) => s.trim().to_string(),
        Some(other) => other.to_string(),
        None => return Err(VerdictError::Missing("justification")),
    };
    Ok(JudgeVerdict {
        justification,
        realism_score: score(&obj, SCORE_FIELDS[0])?,
        code_quality_realism: score(&obj, SCORE_FIELDS[1])?,
        debugging_pattern_realism: score(&obj, SCORE_FIELDS[2])?,
        language_realism: score(&obj, SCORE_FIELDS[3])?,
    })
}
