//! Serializable parameterization of the behavior process and its validation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{
    BehaviorError, CognitiveBehavior, GammaParams, InterruptGaussian, InterruptKind,
    MetacognitiveBehavior, PrevCognitive, ProfileLevel,
};

const ROW_TOLERANCE: f64 = 1e-9;

/// Where a probability cell came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellSource {
    /// Copied verbatim from measured data.
    Published,
    /// Filled in by the completion rule.
    Completed,
}

/// One probability entry, either bare or annotated with its source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Plain(f64),
    Sourced { p: f64, source: CellSource },
}

impl Cell {
    pub fn p(&self) -> f64 {
        match *self {
            Cell::Plain(p) => p,
            Cell::Sourced { p, .. } => p,
        }
    }

    pub fn source(&self) -> Option<CellSource> {
        match *self {
            Cell::Plain(_) => None,
            Cell::Sourced { source, .. } => Some(source),
        }
    }
}

impl From<f64> for Cell {
    fn from(p: f64) -> Self {
        Cell::Plain(p)
    }
}

/// A probability row keyed by target state. Missing targets have probability 0.
pub type Row<K> = BTreeMap<K, Cell>;

pub(crate) fn row_probs<K: Ord + Copy>(row: &Row<K>, targets: &[K]) -> Vec<f64> {
    targets
        .iter()
        .map(|k| row.get(k).map(Cell::p).unwrap_or(0.0))
        .collect()
}

fn default_version() -> String {
    "1".to_string()
}

fn default_max_steps() -> u32 {
    30
}

/// Full parameterization of the semi-Markov process for one profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSpec {
    #[serde(default = "default_version")]
    pub version: String,
    pub profile: ProfileLevel,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
    pub initial_metacog: Row<MetacognitiveBehavior>,
    pub metacog_transitions: BTreeMap<MetacognitiveBehavior, Row<MetacognitiveBehavior>>,
    pub durations: BTreeMap<MetacognitiveBehavior, GammaParams>,
    pub cognitive_transitions:
        BTreeMap<MetacognitiveBehavior, BTreeMap<PrevCognitive, Row<CognitiveBehavior>>>,
    pub interrupts: BTreeMap<InterruptKind, InterruptGaussian>,
}

impl BehaviorSpec {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("behavior spec always serializes")
    }

    pub fn initial_probs(&self) -> Vec<f64> {
        row_probs(&self.initial_metacog, &MetacognitiveBehavior::ALL)
    }

    pub fn metacog_row(&self, from: MetacognitiveBehavior) -> Result<Vec<f64>, BehaviorError> {
        self.metacog_transitions
            .get(&from)
            .map(|row| row_probs(row, &MetacognitiveBehavior::ALL))
            .ok_or(BehaviorError::MissingMetacogRow(from))
    }

    pub fn cognitive_row(
        &self,
        metacog: MetacognitiveBehavior,
        prev: PrevCognitive,
    ) -> Result<Vec<f64>, BehaviorError> {
        self.cognitive_transitions
            .get(&metacog)
            .and_then(|rows| rows.get(&prev))
            .map(|row| row_probs(row, &CognitiveBehavior::ALL))
            .ok_or(BehaviorError::MissingCognitiveRow { metacog, prev })
    }

    pub fn duration(&self, behavior: MetacognitiveBehavior) -> Result<GammaParams, BehaviorError> {
        self.durations
            .get(&behavior)
            .copied()
            .ok_or(BehaviorError::MissingDuration(behavior))
    }

    /// Point-mass cognitive row, handy for tests and scripted scenarios.
    pub fn set_cognitive_row(
        &mut self,
        metacog: MetacognitiveBehavior,
        prev: PrevCognitive,
        probs: [f64; 3],
    ) {
        let row = CognitiveBehavior::ALL
            .iter()
            .zip(probs)
            .map(|(&c, p)| (c, Cell::Plain(p)))
            .collect();
        self.cognitive_transitions
            .entry(metacog)
            .or_default()
            .insert(prev, row);
    }

    pub fn set_metacog_row(&mut self, from: MetacognitiveBehavior, probs: [f64; 4]) {
        let row = MetacognitiveBehavior::ALL
            .iter()
            .zip(probs)
            .map(|(&m, p)| (m, Cell::Plain(p)))
            .collect();
        self.metacog_transitions.insert(from, row);
    }

    pub fn set_initial(&mut self, probs: [f64; 4]) {
        self.initial_metacog = MetacognitiveBehavior::ALL
            .iter()
            .zip(probs)
            .map(|(&m, p)| (m, Cell::Plain(p)))
            .collect();
    }
}

/// A single failed invariant, naming the offending location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

fn check_row<K: fmt::Display + Copy + Ord>(
    label: &str,
    row: &Row<K>,
    out: &mut Vec<Violation>,
) {
    let mut sum = 0.0;
    for (target, cell) in row {
        let p = cell.p();
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            out.push(Violation {
                location: label.to_string(),
                message: format!("probability for {target} out of range: {p}"),
            });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > ROW_TOLERANCE {
        out.push(Violation {
            location: label.to_string(),
            message: format!("{label} sums to {}", fmt_sum(sum)),
        });
    }
}

fn fmt_sum(sum: f64) -> String {
    // Trim float noise such as 0.8999999999999999 for readable messages.
    let rounded = (sum * 1e9).round() / 1e9;
    format!("{rounded}")
}

/// Check every row-sum and range invariant. An empty result means the spec is valid.
pub fn validate_spec(spec: &BehaviorSpec) -> Vec<Violation> {
    let mut out = Vec::new();

    if spec.max_steps == 0 {
        out.push(Violation {
            location: "max_steps".into(),
            message: "max_steps must be at least 1".into(),
        });
    }

    check_row("initial distribution", &spec.initial_metacog, &mut out);

    for m in MetacognitiveBehavior::ALL {
        match spec.metacog_transitions.get(&m) {
            Some(row) => check_row(&format!("row {m}"), row, &mut out),
            None => out.push(Violation {
                location: format!("row {m}"),
                message: format!("missing metacognitive row {m}"),
            }),
        }
    }

    for (m, rows) in &spec.cognitive_transitions {
        for (prev, row) in rows {
            check_row(&format!("cognitive row ({m}, {prev})"), row, &mut out);
        }
    }

    for m in MetacognitiveBehavior::ALL {
        let location = format!("durations.{m}");
        match spec.durations.get(&m) {
            Some(g) => {
                if !(g.shape > 0.0) || !g.shape.is_finite() {
                    out.push(Violation {
                        location: location.clone(),
                        message: format!("Gamma shape must be positive (got {})", g.shape),
                    });
                }
                if !(g.scale > 0.0) || !g.scale.is_finite() {
                    out.push(Violation {
                        location,
                        message: format!("Gamma scale must be positive (got {})", g.scale),
                    });
                }
            }
            None => out.push(Violation {
                location,
                message: format!("missing duration for {m}"),
            }),
        }
    }

    for (kind, g) in &spec.interrupts {
        let location = format!("interrupts.{kind}");
        if !(0.0..=1.0).contains(&g.mu) {
            out.push(Violation {
                location: location.clone(),
                message: format!("mu must lie in [0, 1] (got {})", g.mu),
            });
        }
        if !(g.sigma > 0.0) {
            out.push(Violation {
                location: location.clone(),
                message: format!("sigma must be positive (got {})", g.sigma),
            });
        }
        if !(0.0..=1.0).contains(&g.r_peak) {
            out.push(Violation {
                location,
                message: format!("r_peak must lie in [0, 1] (got {})", g.r_peak),
            });
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::default_spec;

    #[test]
    fn default_specs_validate() {
        for profile in [ProfileLevel::High, ProfileLevel::Low] {
            let v = validate_spec(&default_spec(profile));
            assert!(v.is_empty(), "{profile}: {v:?}");
        }
    }

    #[test]
    fn short_row_is_reported_by_name() {
        let mut spec = default_spec(ProfileLevel::Low);
        spec.set_metacog_row(MetacognitiveBehavior::Planning, [0.5, 0.4, 0.0, 0.0]);
        let v = validate_spec(&spec);
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("row Planning sums to 0.9"), "{}", v[0]);
    }

    #[test]
    fn negative_shape_is_reported() {
        let mut spec = default_spec(ProfileLevel::High);
        spec.durations
            .insert(MetacognitiveBehavior::Reflecting, GammaParams::new(-1.0, 2.0));
        let v = validate_spec(&spec);
        assert!(v.iter().any(|x| x.message.contains("Gamma shape must be positive")));
    }

    #[test]
    fn out_of_range_cell_and_missing_duration() {
        let mut spec = default_spec(ProfileLevel::High);
        spec.set_cognitive_row(
            MetacognitiveBehavior::Enacting,
            PrevCognitive::Start,
            [1.5, -0.5, 0.0],
        );
        spec.durations.remove(&MetacognitiveBehavior::Planning);
        let v = validate_spec(&spec);
        assert!(v.iter().any(|x| x.message.contains("out of range: 1.5")));
        assert!(v.iter().any(|x| x.message.contains("missing duration for Planning")));
    }

    #[test]
    fn toml_round_trip() {
        let spec = default_spec(ProfileLevel::Low);
        let text = spec.to_toml();
        let back = BehaviorSpec::from_toml(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn bare_cells_parse() {
        let text = r#"
profile = "high"
max_steps = 10

[initial_metacog]
planning = 1.0

[metacog_transitions.planning]
enacting = 1.0
[metacog_transitions.enacting]
planning = 1.0
[metacog_transitions.monitoring]
planning = 1.0
[metacog_transitions.reflecting]
planning = { p = 1.0, source = "completed" }

[durations]
planning = { shape = 1.0, scale = 2.0 }
enacting = { shape = 1.0, scale = 2.0 }
monitoring = { shape = 1.0, scale = 2.0 }
reflecting = { shape = 1.0, scale = 2.0 }

[cognitive_transitions.planning.start]
assessing = 1.0

[interrupts.off_topic]
mu = 0.5
sigma = 0.2
r_peak = 0.1
"#;
        let spec = BehaviorSpec::from_toml(text).unwrap();
        assert!(validate_spec(&spec).is_empty());
        assert_eq!(spec.initial_probs(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(
            spec.metacog_transitions[&MetacognitiveBehavior::Reflecting][&MetacognitiveBehavior::Planning]
                .source(),
            Some(CellSource::Completed)
        );
    }
}
