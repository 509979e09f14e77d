//! Forensic fact sheet: countable surface features of a trace that a judge
//! model would otherwise have to estimate by reading.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::environment::Observation;
use crate::session::Trajectory;

/// Shortest phrase, in words, considered for repetition.
pub const MIN_PHRASE_WORDS: usize = 4;

/// A list of words or phrases matched case-insensitively on word boundaries.
#[derive(Debug, Clone)]
pub struct KeywordSet {
    phrases: Vec<String>,
    re: Option<Regex>,
}

impl KeywordSet {
    pub fn new<S: AsRef<str>>(phrases: &[S]) -> Self {
        let phrases: Vec<String> = phrases
            .iter()
            .map(|p| p.as_ref().trim().to_lowercase())
            .filter(|p| !p.is_empty())
            .collect();
        let re = (!phrases.is_empty()).then(|| {
            let alts: Vec<String> = phrases.iter().map(|p| regex::escape(p)).collect();
            Regex::new(&format!(r"(?i)\b(?:{})\b", alts.join("|"))).expect("escaped phrases form a valid regex")
        });
        Self { phrases, re }
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    /// Number of non-overlapping matches.
    pub fn count(&self, text: &str) -> usize {
        match &self.re {
            Some(re) => re.find_iter(&normalize_quotes(text)).count(),
            None => 0,
        }
    }

    pub fn matches(&self, text: &str) -> bool {
        self.count(text) > 0
    }
}

fn normalize_quotes(s: &str) -> String {
    s.replace(['\u{2019}', '\u{2018}'], "'")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KeywordFile {
    acknowledgment: Vec<String>,
    uncertainty: Vec<String>,
    frustration: Vec<String>,
    emotional_comments: Vec<String>,
}

/// All keyword lists used by the metrics.
#[derive(Debug, Clone)]
pub struct Keywords {
    pub acknowledgment: KeywordSet,
    pub uncertainty: KeywordSet,
    pub frustration: KeywordSet,
    pub emotional_comments: KeywordSet,
}

impl Keywords {
    pub fn from_toml(text: &str) -> Result<Self, MetricsError> {
        let f: KeywordFile = toml::from_str(text).map_err(|e| MetricsError::Input(format!("keywords: {e}")))?;
        Ok(Self {
            acknowledgment: KeywordSet::new(&f.acknowledgment),
            uncertainty: KeywordSet::new(&f.uncertainty),
            frustration: KeywordSet::new(&f.frustration),
            emotional_comments: KeywordSet::new(&f.emotional_comments),
        })
    }

    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MetricsError::Input(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

impl Default for Keywords {
    fn default() -> Self {
        Self::from_toml(include_str!("../../../../assets/keywords.toml")).expect("embedded keyword asset is valid")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FactSheet {
    pub total_steps: usize,
    pub uncertainty_markers: usize,
    pub frustration_markers: usize,
    /// Occurrences of the most repeated phrase of at least four words.
    pub max_phrase_repetition: usize,
    /// Share of assignments in the final code written as `name=expr`.
    pub cramped_ratio: Option<f64>,
    pub single_letter_variables: usize,
    pub emotional_comments: usize,
    pub disconnected_fixes: usize,
}

fn words(text: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"[A-Za-z0-9']+").expect("valid regex"));
    re.find_iter(&normalize_quotes(text))
        .map(|m| m.as_str().to_lowercase())
        .collect()
}

/// Highest count of any exact four-word sequence across the utterances.
/// Longer repeated phrases are covered since their four-word prefixes
/// repeat at least as often.
pub fn max_phrase_repetition<S: AsRef<str>>(utterances: &[S]) -> usize {
    let mut counts: HashMap<Vec<String>, usize> = HashMap::new();
    for u in utterances {
        let w = words(u.as_ref());
        for gram in w.windows(MIN_PHRASE_WORDS) {
            *counts.entry(gram.to_vec()).or_default() += 1;
        }
    }
    counts.values().copied().max().unwrap_or(0)
}

/// Split a Python line into code and comment, ignoring `#` inside string
/// literals on the same line.
pub fn split_comment(line: &str) -> (&str, Option<&str>) {
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, ch) in line.char_indices() {
        if escaped {
            escaped = false;
            continue;
        }
        match (quote, ch) {
            (Some(_), '\\') => escaped = true,
            (Some(q), c) if c == q => quote = None,
            (None, '\'' | '"') => quote = Some(ch),
            (None, '#') => return (&line[..i], Some(&line[i + 1..])),
            _ => {}
        }
    }
    (line, None)
}

struct Assignment<'a> {
    targets: Vec<&'a str>,
    cramped: bool,
}

fn assignment_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let target = r"[A-Za-z_]\w*(?:\.\w+|\[[^\]]*\])*";
        Regex::new(&format!(
            r"^\s*(?P<lhs>{target}(?:\s*,\s*{target})*)(?P<pre>\s*)(?:\*\*|//|[-+*/%@&|^])?=(?P<post>\s*)(?P<rest>.*)$"
        ))
        .expect("valid regex")
    })
}

fn parse_assignment(code: &str) -> Option<Assignment<'_>> {
    let caps = assignment_re().captures(code)?;
    if caps["rest"].starts_with('=') {
        return None;
    }
    let lhs = caps.name("lhs").expect("group").as_str();
    Some(Assignment {
        targets: lhs.split(',').map(str::trim).collect(),
        cramped: caps["pre"].is_empty() && caps["post"].is_empty(),
    })
}

/// Share of assignment statements with no space on either side of `=`.
pub fn cramped_ratio(code: &str) -> Option<f64> {
    let (mut all, mut cramped) = (0usize, 0usize);
    for line in code.lines() {
        if let Some(a) = parse_assignment(split_comment(line).0) {
            all += 1;
            cramped += a.cramped as usize;
        }
    }
    (all > 0).then(|| cramped as f64 / all as f64)
}

/// Distinct one-letter names bound by assignments or `for` loops.
pub fn single_letter_variables(code: &str) -> usize {
    static FOR: OnceLock<Regex> = OnceLock::new();
    let for_re = FOR.get_or_init(|| {
        Regex::new(r"^\s*for\s+(?P<vars>[A-Za-z_]\w*(?:\s*,\s*[A-Za-z_]\w*)*)\s+in\b").expect("valid regex")
    });
    let mut names = BTreeSet::new();
    for line in code.lines() {
        let code = split_comment(line).0;
        if let Some(a) = parse_assignment(code) {
            names.extend(a.targets.into_iter().filter(|t| t.len() == 1));
        }
        if let Some(c) = for_re.captures(code) {
            let vars = c.name("vars").expect("group").as_str();
            names.extend(vars.split(',').map(str::trim).filter(|t| t.len() == 1));
        }
    }
    names.len()
}

/// Comments containing any emotional keyword.
pub fn emotional_comments(code: &str, keywords: &KeywordSet) -> usize {
    code.lines()
        .filter_map(|l| split_comment(l).1)
        .filter(|c| keywords.matches(c))
        .count()
}

/// Error-type names such as `TypeError` mentioned in text.
pub fn named_error_types(text: &str) -> BTreeSet<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\b[A-Z][A-Za-z]*(?:Error|Exception)\b").expect("valid regex"));
    re.find_iter(text).map(|m| m.as_str().to_string()).collect()
}

/// True when the utterance names an error type that the paired output does
/// not contain.
pub fn is_disconnected_fix(utterance: &str, paired: &Observation) -> bool {
    named_error_types(utterance)
        .iter()
        .any(|e| !paired.error_types.contains_key(e))
}

/// Compute the fact sheet of one trace. Code features are taken from the
/// final code state. A cognitive step's utterance is paired with the run it
/// reacted to: its own pre-edit run when there is one, otherwise the latest
/// earlier executed output.
pub fn fact_sheet(traj: &Trajectory, keywords: &Keywords) -> FactSheet {
    let utterances: Vec<&str> = traj.steps.iter().map(|s| s.action.utterance.as_str()).collect();
    let count = |k: &KeywordSet| utterances.iter().map(|u| k.count(u)).sum();
    let final_code = traj.steps.last().map(|s| s.action.code.as_str()).unwrap_or("");

    let mut disconnected = 0;
    let mut last_exec: Option<&Observation> = None;
    for s in &traj.steps {
        if s.cognitive.is_some() {
            if let Some(paired) = s.pre_obs.as_ref().or(last_exec) {
                disconnected += is_disconnected_fix(&s.action.utterance, paired) as usize;
            }
        }
        if s.raw_obs.executed {
            last_exec = Some(&s.raw_obs);
        }
    }

    FactSheet {
        total_steps: traj.steps.len(),
        uncertainty_markers: count(&keywords.uncertainty),
        frustration_markers: count(&keywords.frustration),
        max_phrase_repetition: max_phrase_repetition(&utterances),
        cramped_ratio: cramped_ratio(final_code),
        single_letter_variables: single_letter_variables(final_code),
        emotional_comments: emotional_comments(final_code, &keywords.emotional_comments),
        disconnected_fixes: disconnected,
    }
}
