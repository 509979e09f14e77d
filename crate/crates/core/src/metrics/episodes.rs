//! Ground-truth preprocessing: merging logged actions into episodes and
//! fitting segment-duration and transition parameters from them.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::transitions::{estimate_from_sequences, TransitionEstimate};
use super::MetricsError;
use crate::behavior::{CognitiveBehavior, GammaParams, MetacognitiveBehavior};

/// Default merge threshold in seconds.
pub const DEFAULT_LAMBDA_SECS: f64 = 30.0;

/// One logged action. `session` separates students in a combined log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    #[serde(default)]
    pub session: String,
    pub t: f64,
    pub action: String,
    #[serde(default)]
    pub metacog: Option<String>,
}

impl Event {
    pub fn new(t: f64, action: impl Into<String>) -> Self {
        Self {
            session: String::new(),
            t,
            action: action.into(),
            metacog: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub session: String,
    pub action: String,
    pub metacog: Option<String>,
    pub start: f64,
    pub end: f64,
    pub events: usize,
}

impl Episode {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Merge consecutive events of the same action (and session and label)
/// whose gap is at most `lambda_secs`.
pub fn aggregate_episodes(events: &[Event], lambda_secs: f64) -> Result<Vec<Episode>, MetricsError> {
    let mut out: Vec<Episode> = Vec::new();
    for (i, e) in events.iter().enumerate() {
        if !e.t.is_finite() {
            return Err(MetricsError::Input(format!("event {i} has a non-finite time")));
        }
        if let Some(last) = out.last_mut() {
            if last.session == e.session {
                if e.t < last.end {
                    return Err(MetricsError::Input(format!(
                        "events are not time-ordered: event {i} at {} follows {}",
                        e.t, last.end
                    )));
                }
                if last.action == e.action && last.metacog == e.metacog && e.t - last.end <= lambda_secs {
                    last.end = e.t;
                    last.events += 1;
                    continue;
                }
            }
        }
        out.push(Episode {
            session: e.session.clone(),
            action: e.action.clone(),
            metacog: e.metacog.clone(),
            start: e.t,
            end: e.t,
            events: 1,
        });
    }
    Ok(out)
}

/// Method-of-moments Gamma fit: shape = mean^2 / var, scale = var / mean,
/// with the unbiased sample variance.
pub fn fit_gamma(samples: &[f64]) -> Result<GammaParams, MetricsError> {
    if samples.len() < 2 {
        return Err(MetricsError::Degenerate("need at least two duration samples".into()));
    }
    if let Some(bad) = samples.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
        return Err(MetricsError::Input(format!("durations must be positive, got {bad}")));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= f64::EPSILON * mean * mean {
        return Err(MetricsError::Degenerate("all durations are equal".into()));
    }
    Ok(GammaParams::new(mean * mean / var, var / mean))
}

/// Read an event log with header `session,t,action,metacog` (`session` and
/// `metacog` optional).
pub fn read_event_log<R: Read>(reader: R) -> Result<Vec<Event>, MetricsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| MetricsError::Input(format!("event log row {}: {e}", i + 2))))
        .collect()
}

fn parse_label<T: Copy>(all: &[T], name: impl Fn(T) -> &'static str, s: &str) -> Option<T> {
    all.iter().copied().find(|x| name(*x).eq_ignore_ascii_case(s.trim()))
}

/// Parameters recovered from a ground-truth event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub events: usize,
    pub episodes: usize,
    /// Segment lengths in cognitive episodes, per metacognitive label.
    pub segment_lengths: BTreeMap<MetacognitiveBehavior, Vec<u32>>,
    /// Fitted durations; absent when a label has too few or constant lengths.
    pub durations: BTreeMap<MetacognitiveBehavior, Option<GammaParams>>,
    pub cognitive: TransitionEstimate,
    /// Counts of metacognitive label changes between segments.
    pub metacog_counts: BTreeMap<MetacognitiveBehavior, BTreeMap<MetacognitiveBehavior, u64>>,
}

/// Merge events into episodes, then fit cognitive transitions over each
/// session's episode sequence and Gamma durations over runs of episodes
/// sharing a metacognitive label.
pub fn fit_event_log(events: &[Event], lambda_secs: f64) -> Result<FitReport, MetricsError> {
    let episodes = aggregate_episodes(events, lambda_secs)?;
    let mut sequences: Vec<Vec<CognitiveBehavior>> = Vec::new();
    let mut segment_lengths: BTreeMap<MetacognitiveBehavior, Vec<u32>> = BTreeMap::new();
    let mut metacog_counts: BTreeMap<_, BTreeMap<_, u64>> = BTreeMap::new();
    let mut session: Option<&str> = None;
    let mut current: Option<(MetacognitiveBehavior, u32)> = None;

    let close = |cur: &mut Option<(MetacognitiveBehavior, u32)>, lens: &mut BTreeMap<_, Vec<u32>>| {
        if let Some((m, n)) = cur.take() {
            lens.entry(m).or_default().push(n);
        }
    };

    for ep in &episodes {
        let c = parse_label(&CognitiveBehavior::ALL, CognitiveBehavior::name, &ep.action)
            .ok_or_else(|| MetricsError::Input(format!("unknown cognitive label `{}`", ep.action)))?;
        if session != Some(ep.session.as_str()) {
            close(&mut current, &mut segment_lengths);
            sequences.push(Vec::new());
            session = Some(ep.session.as_str());
        }
        sequences.last_mut().expect("sequence opened").push(c);
        let Some(label) = &ep.metacog else { continue };
        let m = parse_label(&MetacognitiveBehavior::ALL, MetacognitiveBehavior::name, label)
            .ok_or_else(|| MetricsError::Input(format!("unknown metacognitive label `{label}`")))?;
        match current.as_mut() {
            Some((cur, n)) if *cur == m => *n += 1,
            Some((cur, _)) => {
                *metacog_counts.entry(*cur).or_default().entry(m).or_default() += 1;
                close(&mut current, &mut segment_lengths);
                current = Some((m, 1));
            }
            None => current = Some((m, 1)),
        }
    }
    close(&mut current, &mut segment_lengths);

    let durations = segment_lengths
        .iter()
        .map(|(m, lens)| {
            let xs: Vec<f64> = lens.iter().map(|&n| n as f64).collect();
            (*m, fit_gamma(&xs).ok())
        })
        .collect();
    Ok(FitReport {
        events: events.len(),
        episodes: episodes.len(),
        segment_lengths,
        durations,
        cognitive: estimate_from_sequences(&sequences),
        metacog_counts,
    })
}
