//! Fidelity metrics: how closely simulated trajectories match real novice
//! behavior, plus the ground-truth preprocessing and study statistics.

mod episodes;
mod facts;
mod sdt;
mod transitions;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::behavior::{CognitiveBehavior, MetacognitiveBehavior};
use crate::session::Trajectory;

pub use episodes::{
    aggregate_episodes, fit_event_log, fit_gamma, read_event_log, Episode, Event, FitReport,
    DEFAULT_LAMBDA_SECS,
};
pub use facts::{
    cramped_ratio, emotional_comments, fact_sheet, is_disconnected_fix, max_phrase_repetition,
    named_error_types, single_letter_variables, split_comment, FactSheet, KeywordSet, Keywords,
    MIN_PHRASE_WORDS,
};
pub use sdt::{dprime_standard_error, probit, sdt_analysis, sdt_from_rates, tost_equivalence, ConfusionCounts, SdtResult, TostResult};
pub use transitions::{
    d_debug, d_kl_occupancy, d_kl_transitions, estimate_from_sequences, estimate_transitions,
    histogram_of_ratios, kl_divergence, occupancy, ratio_histogram, ReferenceDist,
    TransitionEstimate, KL_EPSILON, RATIO_BINS,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("mismatched supports: {0}")]
    Support(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

/// Mean and sample standard deviation; the deviation needs two values.
pub fn mean_sd(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), sd)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMetrics {
    pub runs: usize,
    pub solved: usize,
    pub solve_rate: Option<f64>,
    /// First-solve step over solved runs.
    pub mean_solve_step: Option<f64>,
    pub sd_solve_step: Option<f64>,
}

pub fn condition_metrics(trajs: &[Trajectory]) -> ConditionMetrics {
    let steps: Vec<f64> = trajs.iter().filter_map(|t| t.first_solve()).map(f64::from).collect();
    let (mean, sd) = mean_sd(&steps);
    ConditionMetrics {
        runs: trajs.len(),
        solved: steps.len(),
        solve_rate: (!trajs.is_empty()).then(|| steps.len() as f64 / trajs.len() as f64),
        mean_solve_step: mean,
        sd_solve_step: sd,
    }
}

/// Solve-rate difference between the high and low conditions.
pub fn performance_gap(high: &ConditionMetrics, low: &ConditionMetrics) -> Option<f64> {
    Some(high.solve_rate? - low.solve_rate?)
}

/// Per-condition summaries and the high-minus-low solve-rate gap.
pub fn summary_metrics(high: &[Trajectory], low: &[Trajectory]) -> (ConditionMetrics, ConditionMetrics, Option<f64>) {
    let h = condition_metrics(high);
    let l = condition_metrics(low);
    let gap = performance_gap(&h, &l);
    (h, l, gap)
}

/// Fraction of steps after the first whose progress fell below the
/// previous step's.
pub fn nonlinearity_of(progress: &[f64]) -> Option<f64> {
    if progress.len() < 2 {
        return None;
    }
    let back = progress.windows(2).filter(|w| w[1] < w[0]).count();
    Some(back as f64 / (progress.len() - 1) as f64)
}

pub fn nonlinearity(traj: &Trajectory) -> Option<f64> {
    let xs: Vec<f64> = traj.steps.iter().map(|s| s.progress).collect();
    nonlinearity_of(&xs)
}

/// Share of (run, error type) pairs seen at least once that were seen at
/// least twice. Each map holds one run's per-type occurrence counts.
pub fn error_recurrence_counts(runs: &[BTreeMap<String, u32>]) -> Option<f64> {
    let seen: usize = runs.iter().map(|r| r.values().filter(|n| **n >= 1).count()).sum();
    let again: usize = runs.iter().map(|r| r.values().filter(|n| **n >= 2).count()).sum();
    (seen > 0).then(|| again as f64 / seen as f64)
}

/// Number of executed steps whose output showed each error type.
pub fn error_occurrences(traj: &Trajectory) -> BTreeMap<String, u32> {
    let mut out = BTreeMap::new();
    for s in traj.steps.iter().filter(|s| s.raw_obs.executed && s.interrupt.is_none()) {
        for e in s.raw_obs.error_types.keys() {
            *out.entry(e.clone()).or_default() += 1;
        }
    }
    out
}

pub fn error_recurrence(trajs: &[Trajectory]) -> Option<f64> {
    let runs: Vec<_> = trajs.iter().map(error_occurrences).collect();
    error_recurrence_counts(&runs)
}

/// The per-step view used by the reaction-lag rule.
#[derive(Debug, Clone, PartialEq)]
pub struct LagStep<'a> {
    pub t: u32,
    /// An executed run during Debugging or Assessing showed an error.
    pub error_shown: bool,
    pub utterance: &'a str,
}

/// Steps from the first shown error to the first later acknowledgment, or
/// to the end of the trace (`last_t`) when it is never acknowledged.
pub fn reaction_lag_of(steps: &[LagStep<'_>], last_t: u32, ack: &KeywordSet) -> Option<u32> {
    let first = steps.iter().position(|s| s.error_shown)?;
    let t_star = steps[first].t;
    let t_ack = steps[first + 1..].iter().find(|s| ack.matches(s.utterance)).map(|s| s.t);
    Some(t_ack.unwrap_or(last_t) - t_star)
}

pub fn reaction_lag(traj: &Trajectory, ack: &KeywordSet) -> Option<u32> {
    let steps: Vec<LagStep<'_>> = traj
        .steps
        .iter()
        .map(|s| LagStep {
            t: s.t,
            error_shown: matches!(s.cognitive, Some(CognitiveBehavior::Debugging | CognitiveBehavior::Assessing))
                && (s.raw_obs.executed && s.raw_obs.has_error()
                    || s.pre_obs.as_ref().is_some_and(|o| o.executed && o.has_error())),
            utterance: &s.action.utterance,
        })
        .collect();
    let last_t = traj.steps.last().map_or(0, |s| s.t);
    reaction_lag_of(&steps, last_t, ack)
}

/// Fraction of all steps spent under each metacognitive behavior.
pub fn metacog_occupancy(trajs: &[Trajectory]) -> BTreeMap<MetacognitiveBehavior, f64> {
    let mut counts: BTreeMap<MetacognitiveBehavior, usize> = BTreeMap::new();
    let mut total = 0;
    for s in trajs.iter().flat_map(|t| &t.steps) {
        *counts.entry(s.metacog).or_default() += 1;
        total += 1;
    }
    MetacognitiveBehavior::ALL
        .into_iter()
        .map(|m| (m, if total == 0 { 0.0 } else { *counts.get(&m).unwrap_or(&0) as f64 / total as f64 }))
        .collect()
}

/// Mean of each fact-sheet field over the traces of a condition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FactSheetSummary {
    pub uncertainty_markers: Option<f64>,
    pub frustration_markers: Option<f64>,
    pub max_phrase_repetition: Option<f64>,
    pub cramped_ratio: Option<f64>,
    pub single_letter_variables: Option<f64>,
    pub emotional_comments: Option<f64>,
    pub disconnected_fixes: Option<f64>,
}

impl FactSheetSummary {
    pub fn of(sheets: &[FactSheet]) -> Self {
        let m = |f: &dyn Fn(&FactSheet) -> Option<f64>| mean_sd(&sheets.iter().filter_map(f).collect::<Vec<_>>()).0;
        Self {
            uncertainty_markers: m(&|s| Some(s.uncertainty_markers as f64)),
            frustration_markers: m(&|s| Some(s.frustration_markers as f64)),
            max_phrase_repetition: m(&|s| Some(s.max_phrase_repetition as f64)),
            cramped_ratio: m(&|s| s.cramped_ratio),
            single_letter_variables: m(&|s| Some(s.single_letter_variables as f64)),
            emotional_comments: m(&|s| Some(s.emotional_comments as f64)),
            disconnected_fixes: m(&|s| Some(s.disconnected_fixes as f64)),
        }
    }
}

/// Every metric for one group of trajectories. Absent values mean the
/// metric is undefined for the group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub runs: usize,
    pub solve_rate: Option<f64>,
    pub mean_steps: Option<f64>,
    pub sd_steps: Option<f64>,
    pub d_kl: Option<f64>,
    pub d_kl_transitions: Option<f64>,
    pub d_debug: Option<f64>,
    pub nonlinearity: Option<f64>,
    pub p_recur: Option<f64>,
    pub mean_reaction_lag: Option<f64>,
    pub sd_reaction_lag: Option<f64>,
    pub metacog_occupancy: BTreeMap<MetacognitiveBehavior, f64>,
    pub transitions: TransitionEstimate,
    pub fact_sheet: FactSheetSummary,
}

pub fn condition_report(trajs: &[Trajectory], reference: Option<&ReferenceDist>, keywords: &Keywords) -> ConditionReport {
    let cm = condition_metrics(trajs);
    let nl: Vec<f64> = trajs.iter().filter_map(nonlinearity).collect();
    let lags: Vec<f64> = trajs
        .iter()
        .filter_map(|t| reaction_lag(t, &keywords.acknowledgment))
        .map(f64::from)
        .collect();
    let (lag_mean, lag_sd) = mean_sd(&lags);
    let sheets: Vec<FactSheet> = trajs.iter().map(|t| fact_sheet(t, keywords)).collect();
    ConditionReport {
        runs: trajs.len(),
        solve_rate: cm.solve_rate,
        mean_steps: cm.mean_solve_step,
        sd_steps: cm.sd_solve_step,
        d_kl: reference.and_then(|r| d_kl_occupancy(trajs, r)),
        d_kl_transitions: reference.and_then(|r| d_kl_transitions(trajs, r)),
        d_debug: reference.and_then(|r| d_debug(trajs, r)),
        nonlinearity: mean_sd(&nl).0,
        p_recur: error_recurrence(trajs),
        mean_reaction_lag: lag_mean,
        sd_reaction_lag: lag_sd,
        metacog_occupancy: metacog_occupancy(trajs),
        transitions: estimate_transitions(trajs),
        fact_sheet: FactSheetSummary::of(&sheets),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    /// Keyed by behavior profile.
    pub conditions: BTreeMap<String, ConditionReport>,
    pub overall: ConditionReport,
    /// High minus low solve rate, when both profiles are present.
    pub performance_gap: Option<f64>,
}

/// Group trajectories by behavior profile and report each group.
pub fn evaluate(trajs: &[Trajectory], reference: Option<&ReferenceDist>, keywords: &Keywords) -> FidelityReport {
    let profiles: BTreeSet<String> = trajs.iter().map(|t| t.config.behav_profile.key().to_string()).collect();
    let conditions: BTreeMap<String, ConditionReport> = profiles
        .into_iter()
        .map(|p| {
            let group: Vec<Trajectory> = trajs
                .iter()
                .filter(|t| t.config.behav_profile.key() == p)
                .cloned()
                .collect();
            let report = condition_report(&group, reference, keywords);
            (p, report)
        })
        .collect();
    let gap = match (conditions.get("high"), conditions.get("low")) {
        (Some(h), Some(l)) => h.solve_rate.zip(l.solve_rate).map(|(h, l)| h - l),
        _ => None,
    };
    FidelityReport {
        overall: condition_report(trajs, reference, keywords),
        conditions,
        performance_gap: gap,
    }
}

fn fmt_opt(x: Option<f64>, pct: bool) -> String {
    match x {
        Some(v) if pct => format!("{:.1}%", v * 100.0),
        Some(v) => format!("{v:.3}"),
        None => "absent".into(),
    }
}

fn fmt_pm(mean: Option<f64>, sd: Option<f64>) -> String {
    match (mean, sd) {
        (Some(m), Some(s)) => format!("{m:.2} ± {s:.2}"),
        (Some(m), None) => format!("{m:.2}"),
        _ => "absent".into(),
    }
}

impl FidelityReport {
    /// Plain-text table, one row per group.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>5} {:>8} {:>14} {:>8} {:>8} {:>8} {:>8} {:>8} {:>14} {:>9}",
            "group", "runs", "solve", "steps", "d_kl", "d_kl_tr", "d_debug", "nonlin", "p_recur", "lag", "enacting"
        );
        let rows = self.conditions.iter().map(|(k, v)| (k.as_str(), v)).chain([("overall", &self.overall)]);
        for (name, r) in rows {
            let _ = writeln!(
                out,
                "{:<10} {:>5} {:>8} {:>14} {:>8} {:>8} {:>8} {:>8} {:>8} {:>14} {:>9}",
                name,
                r.runs,
                fmt_opt(r.solve_rate, true),
                fmt_pm(r.mean_steps, r.sd_steps),
                fmt_opt(r.d_kl, false),
                fmt_opt(r.d_kl_transitions, false),
                fmt_opt(r.d_debug, false),
                fmt_opt(r.nonlinearity, false),
                fmt_opt(r.p_recur, true),
                fmt_pm(r.mean_reaction_lag, r.sd_reaction_lag),
                fmt_opt(r.metacog_occupancy.get(&MetacognitiveBehavior::Enacting).copied(), true),
            );
        }
        let _ = writeln!(out, "performance gap (high - low): {}", match self.performance_gap {
            Some(g) => format!("{:+.1}%", g * 100.0),
            None => "absent".into(),
        });
        out
    }
}
