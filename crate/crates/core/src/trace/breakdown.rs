//! Densify a sparse list of code states into typing-like snapshots.
//!
//! Each transition is aligned line by line with a longest-common-subsequence
//! diff and replayed as single-line insertions, single-line deletions and
//! word-by-word line replacements. Intermediate snapshots are kept with
//! probability `level`; the states themselves always survive.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TraceError;
use crate::rng::{stream_rng, SimRng, Stream};

/// Retention levels that give a readable replay speed.
pub const RECOMMENDED_LEVELS: (f64, f64) = (0.3, 0.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BlankLineStyle {
    /// Keep blank lines.
    #[default]
    Always,
    /// Drop blank lines.
    Never,
    /// Pick one of the two uniformly, once per call.
    Probabilistic,
}

impl std::str::FromStr for BlankLineStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "always" => Ok(Self::Always),
            "never" => Ok(Self::Never),
            "probabilistic" => Ok(Self::Probabilistic),
            other => Err(format!("unknown blank-line style `{other}` (expected always, never or probabilistic)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownConfig {
    /// Probability of keeping each intermediate snapshot.
    pub level: f64,
    pub word_granularity: bool,
    pub blank_line_style: BlankLineStyle,
    pub seed: u64,
}

impl BreakdownConfig {
    pub fn new(level: f64) -> Result<Self, TraceError> {
        let cfg = Self {
            level,
            word_granularity: false,
            blank_line_style: BlankLineStyle::Always,
            seed: 0,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), TraceError> {
        if !(0.0..=1.0).contains(&self.level) {
            return Err(TraceError::Config(format!("level must lie in [0, 1], got {}", self.level)));
        }
        Ok(())
    }
}

fn normalize_one(state: &str, drop_blank: bool) -> String {
    let mut lines: Vec<&str> = state.lines().map(str::trim_end).collect();
    if drop_blank {
        lines.retain(|l| !l.is_empty());
    }
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines.join("\n")
}

fn squash(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

/// Trim trailing whitespace, apply the blank-line rule and collapse runs of
/// states that differ only in whitespace (keeping the later one).
pub fn normalize_states<S: AsRef<str>>(states: &[S], drop_blank: bool) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in states {
        let n = normalize_one(s.as_ref(), drop_blank);
        match out.last_mut() {
            Some(prev) if squash(prev) == squash(&n) => *prev = n,
            _ => out.push(n),
        }
    }
    out
}

/// Split `text` into chunks of leading whitespace plus one word.
fn word_chunks(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut in_word = false;
    for (i, ch) in text.char_indices() {
        let ws = ch.is_whitespace();
        if in_word && ws {
            out.push(&text[start..i]);
            start = i;
        }
        in_word = !ws;
    }
    if start < text.len() && text[start..].chars().any(|c| !c.is_whitespace()) {
        out.push(&text[start..]);
    }
    out
}

fn indent_len(line: &str) -> usize {
    line.len() - line.trim_start().len()
}

/// Successive forms of `target` built word by word on top of `base_len`
/// bytes of it. The last form is `target`.
fn word_steps(target: &str, base_len: usize) -> Vec<String> {
    let mut acc = target[..base_len].to_string();
    let mut out = Vec::new();
    for chunk in word_chunks(&target[base_len..]) {
        acc.push_str(chunk);
        out.push(acc.clone());
    }
    if out.last().map(String::as_str) != Some(target) {
        out.push(target.to_string());
    }
    out
}

fn common_prefix_len(a: &str, b: &str) -> usize {
    a.char_indices()
        .zip(b.chars())
        .find(|((_, x), y)| x != y)
        .map(|((i, _), _)| i)
        .unwrap_or_else(|| a.len().min(b.len()))
}

#[derive(Debug, PartialEq)]
enum Op<'a> {
    Keep,
    Hunk { del: Vec<&'a str>, ins: Vec<&'a str> },
}

/// LCS alignment of two line lists into kept lines and change hunks.
fn diff<'a>(a: &[&'a str], b: &[&'a str]) -> Vec<Op<'a>> {
    let (n, m) = (a.len(), b.len());
    let mut lcs = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if a[i] == b[j] {
                lcs[i + 1][j + 1] + 1
            } else {
                lcs[i + 1][j].max(lcs[i][j + 1])
            };
        }
    }
    let mut ops = Vec::new();
    let (mut i, mut j) = (0, 0);
    let mut del = Vec::new();
    let mut ins = Vec::new();
    let flush = |ops: &mut Vec<Op<'a>>, del: &mut Vec<&'a str>, ins: &mut Vec<&'a str>| {
        if !del.is_empty() || !ins.is_empty() {
            ops.push(Op::Hunk {
                del: std::mem::take(del),
                ins: std::mem::take(ins),
            });
        }
    };
    while i < n || j < m {
        if i < n && j < m && a[i] == b[j] {
            flush(&mut ops, &mut del, &mut ins);
            ops.push(Op::Keep);
            i += 1;
            j += 1;
        } else if j < m && (i == n || lcs[i][j + 1] >= lcs[i + 1][j]) {
            ins.push(b[j]);
            j += 1;
        } else {
            del.push(a[i]);
            i += 1;
        }
    }
    flush(&mut ops, &mut del, &mut ins);
    ops
}

struct Emitter<'r> {
    out: Vec<String>,
    level: f64,
    rng: &'r mut SimRng,
}

impl Emitter<'_> {
    fn intermediate(&mut self, lines: &[String]) {
        let snap = lines.join("\n");
        if self.out.last() == Some(&snap) {
            return;
        }
        if self.rng.random::<f64>() < self.level {
            self.out.push(snap);
        }
    }

    fn endpoint(&mut self, state: &str) {
        if self.out.last().map(String::as_str) != Some(state) {
            self.out.push(state.to_string());
        }
    }
}

fn expand_first(state: &str, words: bool, em: &mut Emitter<'_>) {
    let mut cur: Vec<String> = Vec::new();
    for line in state.split('\n') {
        if words && !line.trim().is_empty() {
            cur.push(String::new());
            for form in word_steps(line, 0) {
                *cur.last_mut().expect("line pushed") = form;
                em.intermediate(&cur);
            }
        } else {
            cur.push(line.to_string());
            em.intermediate(&cur);
        }
    }
    // The last intermediate equals the state; replace it with the endpoint.
    if em.out.last().map(String::as_str) == Some(state) {
        em.out.pop();
    }
    em.endpoint(state);
}

fn expand_transition(from: &str, to: &str, em: &mut Emitter<'_>) {
    let a: Vec<&str> = from.split('\n').collect();
    let b: Vec<&str> = to.split('\n').collect();
    let mut cur: Vec<String> = a.iter().map(|s| s.to_string()).collect();
    let mut p = 0;
    for op in diff(&a, &b) {
        match op {
            Op::Keep => p += 1,
            Op::Hunk { del, ins } => {
                let pairs = del.len().min(ins.len());
                for k in 0..pairs {
                    let target = ins[k];
                    let base = common_prefix_len(del[k], target).max(indent_len(target));
                    for form in word_steps(target, base) {
                        cur[p] = form;
                        em.intermediate(&cur);
                    }
                    p += 1;
                }
                for _ in pairs..del.len() {
                    cur.remove(p);
                    em.intermediate(&cur);
                }
                for line in &ins[pairs..] {
                    cur.insert(p, line.to_string());
                    p += 1;
                    em.intermediate(&cur);
                }
            }
        }
    }
    debug_assert_eq!(cur.join("\n"), to);
    if em.out.last().map(String::as_str) == Some(to) {
        em.out.pop();
    }
    em.endpoint(to);
}

/// Densify `states` into snapshots. Every normalized state appears in the
/// output in order, and the last snapshot is the normalized final state.
pub fn breakdown_trace<S: AsRef<str>>(states: &[S], cfg: &BreakdownConfig) -> Vec<String> {
    let mut rng = stream_rng(cfg.seed, Stream::Breakdown);
    let drop_blank = match cfg.blank_line_style {
        BlankLineStyle::Always => false,
        BlankLineStyle::Never => true,
        BlankLineStyle::Probabilistic => rng.random_bool(0.5),
    };
    let states = normalize_states(states, drop_blank);
    let mut em = Emitter {
        out: Vec::new(),
        level: cfg.level.clamp(0.0, 1.0),
        rng: &mut rng,
    };
    let Some(first) = states.first() else {
        return Vec::new();
    };
    expand_first(first, cfg.word_granularity, &mut em);
    for w in states.windows(2) {
        expand_transition(&w[0], &w[1], &mut em);
    }
    em.out
}
