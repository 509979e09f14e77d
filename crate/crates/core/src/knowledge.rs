//! Bayesian Knowledge Tracing with explicit flaw injection.
//!
//! Each knowledge component (KC) carries a mastery probability that is updated
//! from synthetic correct/incorrect observations. Mastery is discretized into
//! three levels, which decide whether a KC is available to the agent at all
//! (`Blocked`), applied correctly, or applied with a flaw. The statuses are
//! rendered into the natural-language constraint text handed to the agent.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KcCategory {
    Coding,
    Physics,
    Math,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeComponent {
    pub id: String,
    pub label: String,
    pub category: KcCategory,
    /// Phrase naming the concept in the injected "never heard of" constraint.
    pub constraint_phrase: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BktParams {
    pub p_init: f64,
    pub p_transit: f64,
    pub p_slip: f64,
    pub p_guess: f64,
}

impl Default for BktParams {
    fn default() -> Self {
        Self {
            p_init: 0.10,
            p_transit: 0.25,
            p_slip: 0.05,
            p_guess: 0.20,
        }
    }
}

impl BktParams {
    /// Problems with the parameters, empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("p_init", self.p_init),
            ("p_transit", self.p_transit),
            ("p_slip", self.p_slip),
            ("p_guess", self.p_guess),
        ] {
            if !(0.0..=1.0).contains(&v) {
                out.push(format!("{name} must lie in [0, 1] (got {v})"));
            }
        }
        if self.p_slip + self.p_guess >= 1.0 {
            out.push(format!(
                "p_slip + p_guess must be below 1 (got {})",
                self.p_slip + self.p_guess
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MasteryLevel {
    Unknown,
    Partial,
    Mastered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComponentStatus {
    Blocked,
    Correct,
    Incorrect,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum KnowledgeError {
    #[error("unknown knowledge component `{0}`")]
    UnknownKc(String),
    #[error("degenerate knowledge update for `{kc}`: observation has zero probability")]
    Degenerate { kc: String },
}

/// The Bayes denominator vanished: the observation is impossible under the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DegenerateUpdate;

/// Probability of a correct observation given mastery `p_l`.
pub fn predict_correct(p_l: f64, params: &BktParams) -> f64 {
    p_l * (1.0 - params.p_slip) + (1.0 - p_l) * params.p_guess
}

/// Posterior mastery after one observation, followed by the learning step.
pub fn bkt_update(
    p_l: f64,
    observed_correct: bool,
    params: &BktParams,
) -> Result<f64, DegenerateUpdate> {
    let (num, den) = if observed_correct {
        let num = p_l * (1.0 - params.p_slip);
        (num, num + (1.0 - p_l) * params.p_guess)
    } else {
        let num = p_l * params.p_slip;
        (num, num + (1.0 - p_l) * (1.0 - params.p_guess))
    };
    if den <= 0.0 {
        return Err(DegenerateUpdate);
    }
    let posterior = num / den;
    let learned = posterior + (1.0 - posterior) * params.p_transit;
    Ok(learned.clamp(0.0, 1.0))
}

pub fn sample_observation<R: Rng + ?Sized>(p_l: f64, params: &BktParams, rng: &mut R) -> bool {
    rng.random::<f64>() < predict_correct(p_l, params)
}

pub fn discretize_mastery(p_l: f64) -> MasteryLevel {
    if p_l < 0.3 {
        MasteryLevel::Unknown
    } else if p_l < 0.7 {
        MasteryLevel::Partial
    } else {
        MasteryLevel::Mastered
    }
}

/// Per-session mastery beliefs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeState {
    pub mastery: BTreeMap<String, f64>,
    pub params: BktParams,
    /// Per-KC parameter overrides.
    #[serde(default)]
    pub kc_params: BTreeMap<String, BktParams>,
    /// KCs forced to `Blocked` regardless of mastery.
    #[serde(default)]
    pub blocked_overrides: BTreeSet<String>,
}

impl KnowledgeState {
    pub fn new(kcs: &[KnowledgeComponent], params: BktParams) -> Self {
        Self::with_overrides(kcs, params, BTreeMap::new())
    }

    pub fn with_overrides(
        kcs: &[KnowledgeComponent],
        params: BktParams,
        kc_params: BTreeMap<String, BktParams>,
    ) -> Self {
        let mastery = kcs
            .iter()
            .map(|kc| {
                let p = kc_params.get(&kc.id).unwrap_or(&params).p_init;
                (kc.id.clone(), p)
            })
            .collect();
        Self {
            mastery,
            params,
            kc_params,
            blocked_overrides: BTreeSet::new(),
        }
    }

    pub fn params_for(&self, kc: &str) -> &BktParams {
        self.kc_params.get(kc).unwrap_or(&self.params)
    }

    pub fn mastery_of(&self, kc: &str) -> Result<f64, KnowledgeError> {
        self.mastery
            .get(kc)
            .copied()
            .ok_or_else(|| KnowledgeError::UnknownKc(kc.to_string()))
    }

    /// Apply one observation to `kc`. Blocked overrides are left untouched.
    pub fn update(&mut self, kc: &str, observed_correct: bool) -> Result<f64, KnowledgeError> {
        let p = self.mastery_of(kc)?;
        if self.blocked_overrides.contains(kc) {
            return Ok(p);
        }
        let next = bkt_update(p, observed_correct, self.params_for(kc))
            .map_err(|_| KnowledgeError::Degenerate { kc: kc.to_string() })?;
        self.mastery.insert(kc.to_string(), next);
        Ok(next)
    }

    /// KC with the lowest mastery; ties go to the smallest id.
    pub fn lowest_mastery(&self) -> Option<(&str, f64)> {
        self.mastery
            .iter()
            .fold(None, |best: Option<(&str, f64)>, (id, &p)| match best {
                Some((_, bp)) if bp <= p => best,
                _ => Some((id.as_str(), p)),
            })
    }

    /// Status of every tracked KC, drawn in id order.
    pub fn statuses<R: Rng + ?Sized>(&self, rng: &mut R) -> BTreeMap<String, ComponentStatus> {
        self.mastery
            .keys()
            .map(|id| {
                let status = component_status(id, self, rng).expect("id comes from the state");
                (id.clone(), status)
            })
            .collect()
    }
}

pub fn component_status<R: Rng + ?Sized>(
    kc: &str,
    state: &KnowledgeState,
    rng: &mut R,
) -> Result<ComponentStatus, KnowledgeError> {
    let p = state.mastery_of(kc)?;
    if state.blocked_overrides.contains(kc) {
        return Ok(ComponentStatus::Blocked);
    }
    Ok(match discretize_mastery(p) {
        MasteryLevel::Unknown => ComponentStatus::Blocked,
        MasteryLevel::Mastered => ComponentStatus::Correct,
        MasteryLevel::Partial => {
            if rng.random::<f64>() < p {
                ComponentStatus::Correct
            } else {
                ComponentStatus::Incorrect
            }
        }
    })
}

/// Constraint sentence injected for a KC the agent must not know.
pub fn flaw_injection_text(phrase: &str) -> String {
    format!(
        "CRITICAL CONSTRAINT – You have NEVER heard of and CANNOT use: {phrase}. \
         This concept does not exist in your knowledge. You must solve the problem \
         WITHOUT using it. If the code requires '{phrase}', you will be stuck and confused."
    )
}

/// Render KC statuses as constraint text, ordered by KC id.
pub fn render_constraints(
    statuses: &BTreeMap<String, ComponentStatus>,
    kcs: &[KnowledgeComponent],
) -> String {
    let find = |id: &str| kcs.iter().find(|kc| kc.id == id);
    let mut blocked = Vec::new();
    let mut applied = Vec::new();
    let mut shaky = Vec::new();
    for (id, status) in statuses {
        let kc = find(id);
        match status {
            ComponentStatus::Blocked => {
                let phrase = kc.map(|k| k.constraint_phrase.as_str()).unwrap_or(id);
                blocked.push(flaw_injection_text(phrase));
            }
            ComponentStatus::Correct => applied.push(kc.map(|k| k.label.as_str()).unwrap_or(id)),
            ComponentStatus::Incorrect => shaky.push(kc.map(|k| k.label.as_str()).unwrap_or(id)),
        }
    }
    let mut lines = blocked;
    if !applied.is_empty() {
        lines.push(format!("You correctly applied: {}", applied.join(", ")));
    }
    if !shaky.is_empty() {
        lines.push(format!(
            "You have a shaky understanding of (and tend to make mistakes with): {}",
            shaky.join(", ")
        ));
    }
    lines.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use approx::assert_abs_diff_eq;

    fn kc(id: &str, label: &str, phrase: &str) -> KnowledgeComponent {
        KnowledgeComponent {
            id: id.into(),
            label: label.into(),
            category: KcCategory::Coding,
            constraint_phrase: phrase.into(),
        }
    }

    /// Textbook Bayes with explicit joint probabilities, written independently
    /// of `bkt_update`.
    fn oracle_update(p: f64, correct: bool, s: f64, g: f64, t: f64) -> f64 {
        let joint_mastered = if correct { p * (1.0 - s) } else { p * s };
        let joint_unmastered = if correct { (1.0 - p) * g } else { (1.0 - p) * (1.0 - g) };
        let post = joint_mastered / (joint_mastered + joint_unmastered);
        1.0 - (1.0 - post) * (1.0 - t)
    }

    #[test]
    fn predict_examples() {
        let d = BktParams::default();
        assert_abs_diff_eq!(predict_correct(0.10, &d), 0.275, epsilon = 1e-15);
        assert_abs_diff_eq!(predict_correct(1.0, &d), 0.95, epsilon = 1e-15);
        assert_abs_diff_eq!(predict_correct(0.0, &d), 0.20, epsilon = 1e-15);
    }

    #[test]
    fn update_examples() {
        let d = BktParams::default();
        // 0.095 / 0.275 and 0.005 / 0.725 by hand.
        let correct = bkt_update(0.10, true, &d).unwrap();
        assert_abs_diff_eq!(correct, 0.5090909090909091, epsilon = 1e-12);
        assert_abs_diff_eq!(correct, oracle_update(0.1, true, 0.05, 0.2, 0.25), epsilon = 1e-15);
        let incorrect = bkt_update(0.10, false, &d).unwrap();
        assert_abs_diff_eq!(incorrect, 0.2551724137931034, epsilon = 1e-12);
        let no_learning = BktParams { p_transit: 0.0, ..d };
        assert_abs_diff_eq!(bkt_update(0.10, true, &no_learning).unwrap(), 0.34545454545, epsilon = 1e-10);
        assert_abs_diff_eq!(bkt_update(0.10, false, &no_learning).unwrap(), 0.0068965517, epsilon = 1e-10);
    }

    #[test]
    fn noiseless_limit() {
        let p = BktParams {
            p_init: 0.1,
            p_transit: 0.0,
            p_slip: 0.0,
            p_guess: 0.0,
        };
        assert_eq!(bkt_update(0.3, true, &p).unwrap(), 1.0);
        assert_eq!(bkt_update(1.0, true, &p).unwrap(), 1.0);
        assert_eq!(bkt_update(1.0, false, &p), Err(DegenerateUpdate));
    }

    #[test]
    fn degenerate_update_names_kc() {
        let kcs = [kc("KC_C1", "def", "functions")];
        let mut state = KnowledgeState::new(
            &kcs,
            BktParams {
                p_init: 1.0,
                p_transit: 0.0,
                p_slip: 0.0,
                p_guess: 0.0,
            },
        );
        let err = state.update("KC_C1", false).unwrap_err();
        assert_eq!(err, KnowledgeError::Degenerate { kc: "KC_C1".into() });
        assert!(err.to_string().contains("KC_C1"));
    }

    #[test]
    fn observation_frequencies() {
        let d = BktParams::default();
        let mut rng = stream_rng(4, Stream::Knowledge);
        let n = 100_000;
        let hits = (0..n).filter(|_| sample_observation(0.10, &d, &mut rng)).count();
        assert!((hits as f64 / n as f64 - 0.275).abs() < 0.005);
        let sure = BktParams { p_slip: 0.0, p_guess: 0.0, ..d };
        assert!((0..1000).all(|_| sample_observation(1.0, &sure, &mut rng)));
        assert!((0..1000).all(|_| !sample_observation(0.0, &sure, &mut rng)));
    }

    #[test]
    fn discretization_boundaries() {
        assert_eq!(discretize_mastery(0.10), MasteryLevel::Unknown);
        assert_eq!(discretize_mastery(0.2999999), MasteryLevel::Unknown);
        assert_eq!(discretize_mastery(0.30), MasteryLevel::Partial);
        assert_eq!(discretize_mastery(0.6999999), MasteryLevel::Partial);
        assert_eq!(discretize_mastery(0.70), MasteryLevel::Mastered);
        assert_eq!(discretize_mastery(1.0), MasteryLevel::Mastered);
    }

    #[test]
    fn statuses() {
        let kcs = [kc("A", "a", "a"), kc("B", "b", "b"), kc("C", "c", "c")];
        let mut state = KnowledgeState::new(&kcs, BktParams::default());
        state.mastery.insert("A".into(), 0.1);
        state.mastery.insert("B".into(), 0.9);
        state.mastery.insert("C".into(), 0.5);
        let mut rng = stream_rng(8, Stream::Knowledge);
        assert_eq!(component_status("A", &state, &mut rng).unwrap(), ComponentStatus::Blocked);
        assert_eq!(component_status("B", &state, &mut rng).unwrap(), ComponentStatus::Correct);
        let n = 10_000;
        let correct = (0..n)
            .filter(|_| component_status("C", &state, &mut rng).unwrap() == ComponentStatus::Correct)
            .count();
        assert!((correct as f64 / n as f64 - 0.5).abs() < 0.02);
        assert_eq!(
            component_status("Z", &state, &mut rng),
            Err(KnowledgeError::UnknownKc("Z".into()))
        );
        state.blocked_overrides.insert("B".into());
        assert_eq!(component_status("B", &state, &mut rng).unwrap(), ComponentStatus::Blocked);
    }

    #[test]
    fn blocked_override_freezes_mastery() {
        let kcs = [kc("A", "a", "a")];
        let mut state = KnowledgeState::new(&kcs, BktParams::default());
        state.blocked_overrides.insert("A".into());
        state.update("A", true).unwrap();
        assert_eq!(state.mastery["A"], 0.10);
    }

    #[test]
    fn lowest_mastery_prefers_smallest_id_on_ties() {
        let kcs = [kc("KC_P9", "", ""), kc("KC_C2", "", ""), kc("KC_C9", "", "")];
        let mut state = KnowledgeState::new(&kcs, BktParams::default());
        assert_eq!(state.lowest_mastery(), Some(("KC_C2", 0.10)));
        state.mastery.insert("KC_C2".into(), 0.5);
        assert_eq!(state.lowest_mastery(), Some(("KC_C9", 0.10)));
    }

    #[test]
    fn rendering() {
        let kcs = [
            kc("KC_C2", "math library import", "the math library and its functions"),
            kc("KC_C9", "class definition", "classes"),
            kc("KC_C1", "function def return", "functions"),
            kc("KC_P9", "euler integration", "numerical integration methods"),
        ];
        let mut statuses = BTreeMap::new();
        assert_eq!(render_constraints(&statuses, &kcs), "");

        statuses.insert("KC_C2".to_string(), ComponentStatus::Blocked);
        statuses.insert("KC_C9".to_string(), ComponentStatus::Correct);
        statuses.insert("KC_C1".to_string(), ComponentStatus::Correct);
        statuses.insert("KC_P9".to_string(), ComponentStatus::Incorrect);
        let text = render_constraints(&statuses, &kcs);
        assert!(text.contains(
            "You have NEVER heard of and CANNOT use: the math library and its functions"
        ));
        assert!(text.contains("You correctly applied: function def return, class definition"));
        assert_eq!(text.matches("function def return").count(), 1);
        assert_eq!(text.matches("class definition").count(), 1);
        assert!(text.contains("shaky understanding"));
        assert!(text.contains("euler integration"));
    }

    #[test]
    fn params_validation() {
        assert!(BktParams::default().violations().is_empty());
        let bad = BktParams { p_slip: 0.6, p_guess: 0.5, ..Default::default() };
        assert_eq!(bad.violations().len(), 1);
    }
}
