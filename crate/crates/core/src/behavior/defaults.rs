//! Default behavior specs built from measured novice-programmer statistics.
//!
//! Only some transition cells were measured. Measured cognitive cells are kept
//! verbatim and any remaining row mass is spread uniformly over the other
//! targets. The metacognitive chain is completed by fitting a zero-diagonal
//! matrix to the measured change frequencies so that, together with the
//! duration distributions, it reproduces each profile's measured share of time
//! per behavior.

use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};

use super::spec::{BehaviorSpec, Cell, CellSource, Row};
use super::{
    CognitiveBehavior, GammaParams, InterruptGaussian, InterruptKind, MetacognitiveBehavior,
    PrevCognitive, ProfileLevel,
};

use CognitiveBehavior::{Constructing as C, Debugging as D};
use MetacognitiveBehavior::{Enacting, Monitoring, Planning, Reflecting};
use ProfileLevel::{High, Low};

/// A measured cognitive transition cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublishedCell {
    pub profile: ProfileLevel,
    pub metacog: MetacognitiveBehavior,
    pub prev: PrevCognitive,
    pub target: CognitiveBehavior,
    pub p: f64,
}

const fn cell(
    profile: ProfileLevel,
    metacog: MetacognitiveBehavior,
    prev: PrevCognitive,
    target: CognitiveBehavior,
    p: f64,
) -> PublishedCell {
    PublishedCell {
        profile,
        metacog,
        prev,
        target,
        p,
    }
}

const START: PrevCognitive = PrevCognitive::Start;
const PREV_C: PrevCognitive = PrevCognitive::Constructing;
const PREV_D: PrevCognitive = PrevCognitive::Debugging;

const COGNITIVE_CELLS: [PublishedCell; 16] = [
    cell(Low, Enacting, START, D, 0.676),
    cell(Low, Enacting, START, C, 0.324),
    cell(Low, Monitoring, PREV_D, D, 0.867),
    cell(Low, Monitoring, PREV_D, C, 0.133),
    cell(Low, Monitoring, PREV_C, D, 1.00),
    cell(Low, Planning, START, C, 0.344),
    cell(Low, Planning, START, D, 0.625),
    cell(Low, Reflecting, PREV_D, D, 0.571),
    cell(High, Enacting, START, D, 0.55),
    cell(High, Enacting, START, C, 0.40),
    cell(High, Monitoring, PREV_D, D, 0.40),
    cell(High, Monitoring, PREV_D, C, 0.60),
    cell(High, Monitoring, PREV_C, D, 0.71),
    cell(High, Planning, START, C, 0.583),
    cell(High, Planning, START, D, 0.361),
    cell(High, Reflecting, PREV_D, D, 0.364),
];

pub fn published_cognitive_cells() -> &'static [PublishedCell] {
    &COGNITIVE_CELLS
}

fn durations(profile: ProfileLevel) -> [(MetacognitiveBehavior, GammaParams); 4] {
    match profile {
        Low => [
            (Planning, GammaParams::new(1.92, 4.01)),
            (Enacting, GammaParams::new(1.18, 8.30)),
            (Monitoring, GammaParams::new(2.50, 3.25)),
            (Reflecting, GammaParams::new(2.76, 1.59)),
        ],
        High => [
            (Planning, GammaParams::new(1.02, 9.74)),
            (Enacting, GammaParams::new(1.86, 4.00)),
            (Monitoring, GammaParams::new(1.84, 6.83)),
            (Reflecting, GammaParams::new(1.99, 4.37)),
        ],
    }
}

fn interrupts(profile: ProfileLevel) -> [(InterruptKind, InterruptGaussian); 2] {
    let g = |mu, sigma, r_peak| InterruptGaussian { mu, sigma, r_peak };
    match profile {
        High => [
            (InterruptKind::Assistance, g(0.50, 0.25, 0.150)),
            (InterruptKind::OffTopic, g(0.73, 0.20, 0.037)),
        ],
        Low => [
            (InterruptKind::Assistance, g(0.50, 0.25, 0.117)),
            (InterruptKind::OffTopic, g(0.73, 0.20, 0.092)),
        ],
    }
}

/// Share of session time per behavior, in `MetacognitiveBehavior::ALL` order.
fn occupancy(profile: ProfileLevel) -> [f64; 4] {
    match profile {
        High => [47.5, 13.4, 24.4, 14.6],
        Low => [28.6, 50.8, 14.9, 5.6],
    }
}

/// Measured behavior-change frequencies (percent of all changes), pooled over
/// profiles. Cells not listed share the leftover mass equally.
const CHANGE_FREQUENCIES: [(MetacognitiveBehavior, MetacognitiveBehavior, f64); 6] = [
    (Planning, Enacting, 15.8),
    (Enacting, Planning, 16.7),
    (Planning, Monitoring, 10.0),
    (Monitoring, Planning, 5.8),
    (Planning, Reflecting, 5.0),
    (Reflecting, Planning, 3.3),
];

/// Expected value of the rounded, floored-at-one duration.
pub(crate) fn discretized_mean_duration(g: GammaParams) -> f64 {
    let dist = GammaDist::new(g.shape, 1.0 / g.scale).expect("valid gamma parameters");
    let mut mean = dist.cdf(1.5);
    let mut k = 2.0f64;
    loop {
        let mass = dist.cdf(k + 0.5) - dist.cdf(k - 0.5);
        mean += k * mass;
        if dist.sf(k + 0.5) < 1e-16 {
            break;
        }
        k += 1.0;
    }
    mean
}

/// Segment-level stationary distribution implied by time shares and mean durations.
fn segment_distribution(profile: ProfileLevel) -> [f64; 4] {
    let occ = occupancy(profile);
    let durs = durations(profile);
    let mut pi = [0.0; 4];
    for i in 0..4 {
        pi[i] = occ[i] / discretized_mean_duration(durs[i].1);
    }
    let total: f64 = pi.iter().sum();
    pi.map(|x| x / total)
}

fn change_seed() -> [[f64; 4]; 4] {
    let mut f = [[f64::NAN; 4]; 4];
    for i in 0..4 {
        f[i][i] = 0.0;
    }
    let mut published = 0.0;
    for (from, to, v) in CHANGE_FREQUENCIES {
        f[from.index()][to.index()] = v;
        published += v;
    }
    let open = f.iter().flatten().filter(|x| x.is_nan()).count() as f64;
    let share = (100.0 - published) / open;
    for row in f.iter_mut() {
        for x in row.iter_mut() {
            if x.is_nan() {
                *x = share;
            }
        }
    }
    f
}

/// Scale `seed` so every row and column sums to `margins` (iterative proportional fitting).
fn fit_margins(seed: [[f64; 4]; 4], margins: [f64; 4]) -> [[f64; 4]; 4] {
    let mut f = seed;
    for _ in 0..100_000 {
        for i in 0..4 {
            let s: f64 = f[i].iter().sum();
            for x in f[i].iter_mut() {
                *x *= margins[i] / s;
            }
        }
        for j in 0..4 {
            let s: f64 = (0..4).map(|i| f[i][j]).sum();
            for row in f.iter_mut() {
                row[j] *= margins[j] / s;
            }
        }
        let worst = (0..4)
            .map(|i| (f[i].iter().sum::<f64>() - margins[i]).abs())
            .fold(0.0, f64::max);
        if worst < 1e-14 {
            break;
        }
    }
    f
}

/// Fitted metacognitive transition matrix and its stationary distribution.
pub(crate) fn metacog_chain(profile: ProfileLevel) -> ([[f64; 4]; 4], [f64; 4]) {
    let pi = segment_distribution(profile);
    let joint = fit_margins(change_seed(), pi);
    let mut p = [[0.0; 4]; 4];
    for i in 0..4 {
        let s: f64 = joint[i].iter().sum();
        for j in 0..4 {
            p[i][j] = joint[i][j] / s;
        }
    }
    (p, pi)
}

fn completed(p: f64) -> Cell {
    Cell::Sourced {
        p,
        source: CellSource::Completed,
    }
}

fn cognitive_row(
    profile: ProfileLevel,
    metacog: MetacognitiveBehavior,
    prev: PrevCognitive,
) -> Row<CognitiveBehavior> {
    let published: Vec<&PublishedCell> = COGNITIVE_CELLS
        .iter()
        .filter(|c| c.profile == profile && c.metacog == metacog && c.prev == prev)
        .collect();
    let mut row = Row::new();
    let mass: f64 = published.iter().map(|c| c.p).sum();
    for c in &published {
        row.insert(
            c.target,
            Cell::Sourced {
                p: c.p,
                source: CellSource::Published,
            },
        );
    }
    let open: Vec<CognitiveBehavior> = CognitiveBehavior::ALL
        .into_iter()
        .filter(|t| !row.contains_key(t))
        .collect();
    if open.is_empty() {
        if (mass - 1.0).abs() > 1e-12 {
            for cell in row.values_mut() {
                if let Cell::Sourced { p, .. } = cell {
                    *p /= mass;
                }
            }
        }
        return row;
    }
    let share = (1.0 - mass).max(0.0) / open.len() as f64;
    for t in open {
        row.insert(t, completed(share));
    }
    row
}

/// The shipped default spec for a profile.
pub fn default_spec(profile: ProfileLevel) -> BehaviorSpec {
    let (matrix, pi) = metacog_chain(profile);
    let initial_metacog = MetacognitiveBehavior::ALL
        .iter()
        .map(|&m| (m, completed(pi[m.index()])))
        .collect();
    let metacog_transitions = MetacognitiveBehavior::ALL
        .iter()
        .map(|&from| {
            let row = MetacognitiveBehavior::ALL
                .iter()
                .map(|&to| (to, completed(matrix[from.index()][to.index()])))
                .collect();
            (from, row)
        })
        .collect();
    let cognitive_transitions = MetacognitiveBehavior::ALL
        .iter()
        .map(|&m| {
            let rows: BTreeMap<_, _> = PrevCognitive::ALL
                .iter()
                .map(|&prev| (prev, cognitive_row(profile, m, prev)))
                .collect();
            (m, rows)
        })
        .collect();
    BehaviorSpec {
        version: "1".to_string(),
        profile,
        max_steps: 30,
        initial_metacog,
        metacog_transitions,
        durations: durations(profile).into_iter().collect(),
        cognitive_transitions,
        interrupts: interrupts(profile).into_iter().collect(),
    }
}
