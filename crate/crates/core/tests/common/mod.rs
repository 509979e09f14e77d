//! Hand-built trajectories for metric tests that do not need a live session.
#![allow(dead_code)]

use std::collections::BTreeMap;

use studentsim_core::agent::{AgentAction, TutorKind};
use studentsim_core::behavior::{CognitiveBehavior, InterruptKind, MetacognitiveBehavior, ProfileLevel};
use studentsim_core::environment::Observation;
use studentsim_core::session::{ConfigSummary, TraceStep, Trajectory, SCHEMA_VERSION};

pub const TESTS_TOTAL: u32 = 4;

pub fn obs(passed: u32, errors: &[(&str, u32)]) -> Observation {
    let mut o = Observation::initial(TESTS_TOTAL);
    o.executed = true;
    o.tests_passed = passed;
    o.exit_ok = passed == TESTS_TOTAL;
    o.error_types = errors.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    if !errors.is_empty() {
        o.stderr = errors.iter().map(|(k, _)| format!("{k}: boom\n")).collect();
    }
    o
}

pub fn step(t: u32, metacog: MetacognitiveBehavior, cognitive: Option<CognitiveBehavior>) -> TraceStep {
    TraceStep {
        t,
        n: 1,
        metacog,
        segment_duration: 1,
        cognitive,
        action: AgentAction {
            code: String::new(),
            utterance: String::new(),
        },
        raw_obs: Observation::initial(TESTS_TOTAL),
        filtered_obs: Observation::initial(TESTS_TOTAL),
        pre_obs: None,
        progress: 0.0,
        time_progress: 0.0,
        knowledge_snapshot: BTreeMap::new(),
        interrupt: cognitive.is_none().then_some(InterruptKind::OffTopic),
        intervention: None,
        strategy: None,
        tutor: None,
        kc_evidence: None,
        extra: BTreeMap::new(),
    }
}

pub fn trajectory(profile: ProfileLevel, mut steps: Vec<TraceStep>) -> Trajectory {
    for (i, s) in steps.iter_mut().enumerate() {
        s.t = i as u32 + 1;
        s.time_progress = s.t as f64 / 30.0;
    }
    let solve_step = steps.iter().find(|s| s.raw_obs.all_passed()).map(|s| s.t);
    Trajectory {
        schema_version: SCHEMA_VERSION.to_string(),
        config: ConfigSummary {
            name: "synthetic".into(),
            problem_id: "synthetic".into(),
            behav_profile: profile,
            persona_profile: profile,
            tutor: TutorKind::None,
            backend: "mock".into(),
            seed: 0,
            max_steps: 30,
            tests_total: TESTS_TOTAL,
            blocked_kcs: Vec::new(),
        },
        steps,
        solved: solve_step.is_some(),
        solve_step,
        truncated: None,
        extra: BTreeMap::new(),
    }
}

/// A trajectory whose cognitive chain is `chain`; `None` entries become
/// off-topic interrupt steps.
pub fn chain(profile: ProfileLevel, chain: &[Option<CognitiveBehavior>]) -> Trajectory {
    let steps = chain
        .iter()
        .map(|c| step(0, MetacognitiveBehavior::Monitoring, *c))
        .collect();
    trajectory(profile, steps)
}

/// A trajectory that first passes every test at step `at` (or never).
pub fn solved_at(profile: ProfileLevel, len: u32, at: Option<u32>) -> Trajectory {
    let steps = (1..=len)
        .map(|t| {
            let mut s = step(t, MetacognitiveBehavior::Enacting, Some(CognitiveBehavior::Constructing));
            s.raw_obs = obs(if Some(t) == at { TESTS_TOTAL } else { 1 }, &[]);
            s
        })
        .collect();
    trajectory(profile, steps)
}
