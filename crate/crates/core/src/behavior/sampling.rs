//! Samplers for segments, durations, cognitive steps and interrupts.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::spec::BehaviorSpec;
use super::{
    BehaviorError, CognitiveBehavior, GammaParams, InterruptKind, MetacognitiveBehavior,
    PrevCognitive, SegmentPlan,
};

/// Draw an index from a discrete distribution. Rows are assumed to sum to 1;
/// floating-point shortfall falls onto the last index with positive mass.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Option<usize> {
    let last_positive = probs.iter().rposition(|&p| p > 0.0)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc && p > 0.0 {
            return Some(i);
        }
    }
    Some(last_positive)
}

/// Map a continuous Gamma draw onto a whole number of steps (nearest, at least 1).
pub fn duration_from_draw(x: f64) -> u32 {
    let r = x.round();
    if r < 1.0 {
        1
    } else if r > u32::MAX as f64 {
        u32::MAX
    } else {
        r as u32
    }
}

pub fn sample_duration<R: Rng + ?Sized>(
    behavior: MetacognitiveBehavior,
    spec: &BehaviorSpec,
    rng: &mut R,
) -> Result<u32, BehaviorError> {
    let p = spec.duration(behavior)?;
    let gamma = Gamma::new(p.shape, p.scale).map_err(|e| BehaviorError::InvalidGamma {
        behavior,
        reason: e.to_string(),
    })?;
    Ok(duration_from_draw(gamma.sample(rng)))
}

/// Pick the next metacognitive behavior (from the initial distribution when
/// `prev` is `None`) and its duration. Behavior and duration may draw from
/// separate generators so that one does not shift the other.
pub fn sample_next_segment<R: Rng + ?Sized, D: Rng + ?Sized>(
    prev: Option<MetacognitiveBehavior>,
    spec: &BehaviorSpec,
    rng: &mut R,
    duration_rng: &mut D,
) -> Result<SegmentPlan, BehaviorError> {
    let probs = match prev {
        None => spec.initial_probs(),
        Some(m) => spec.metacog_row(m)?,
    };
    let idx = sample_index(&probs, rng).ok_or_else(|| {
        BehaviorError::EmptyRow(match prev {
            None => "initial distribution".to_string(),
            Some(m) => format!("row {m}"),
        })
    })?;
    let behavior = MetacognitiveBehavior::ALL[idx];
    let duration = sample_duration(behavior, spec, duration_rng)?;
    Ok(SegmentPlan { behavior, duration })
}

pub fn sample_cognitive_step<R: Rng + ?Sized>(
    metacog: MetacognitiveBehavior,
    prev: Option<CognitiveBehavior>,
    spec: &BehaviorSpec,
    rng: &mut R,
) -> Result<CognitiveBehavior, BehaviorError> {
    let prev = PrevCognitive::from(prev);
    let probs = spec.cognitive_row(metacog, prev)?;
    let idx = sample_index(&probs, rng)
        .ok_or_else(|| BehaviorError::EmptyRow(format!("cognitive row ({metacog}, {prev})")))?;
    Ok(CognitiveBehavior::ALL[idx])
}

/// Test for an interrupt at session progress `x`. Off-topic is tried before
/// assistance, and nothing fires right after the student received help.
/// `spec` already carries the profile-specific Gaussians.
pub fn check_interrupt<R: Rng + ?Sized>(
    x: f64,
    spec: &BehaviorSpec,
    just_received_help: bool,
    rng: &mut R,
) -> Option<InterruptKind> {
    if just_received_help {
        return None;
    }
    for kind in [InterruptKind::OffTopic, InterruptKind::Assistance] {
        if let Some(g) = spec.interrupts.get(&kind) {
            let p = g.probability(x);
            if rng.random::<f64>() < p {
                return Some(kind);
            }
        }
    }
    None
}

/// Mean and coefficient of variation implied by Gamma parameters.
pub fn gamma_moments(p: GammaParams) -> (f64, f64) {
    (p.mean(), p.cv())
}
