//! Cognitive transition estimates and the divergences built on them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::behavior::CognitiveBehavior;
use crate::session::Trajectory;

/// Additive smoothing applied to zero reference cells.
pub const KL_EPSILON: f64 = 1e-6;
/// Number of equal-width bins of the per-trajectory debugging ratio.
pub const RATIO_BINS: usize = 10;

const N: usize = CognitiveBehavior::ALL.len();

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionEstimate {
    /// `counts[from][to]`, indexed by `CognitiveBehavior::index`.
    pub counts: [[u64; N]; N],
    /// Sequences that contributed.
    pub episodes: usize,
}

impl TransitionEstimate {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn count(&self, from: CognitiveBehavior, to: CognitiveBehavior) -> u64 {
        self.counts[from.index()][to.index()]
    }

    /// Row-normalized probabilities; `None` marks a row with no counts.
    pub fn row(&self, from: CognitiveBehavior) -> Option<[f64; N]> {
        let row = &self.counts[from.index()];
        let sum: u64 = row.iter().sum();
        (sum > 0).then(|| row.map(|c| c as f64 / sum as f64))
    }

    pub fn prob(&self, from: CognitiveBehavior, to: CognitiveBehavior) -> Option<f64> {
        self.row(from).map(|r| r[to.index()])
    }

    pub fn empty_rows(&self) -> Vec<CognitiveBehavior> {
        CognitiveBehavior::ALL
            .into_iter()
            .filter(|c| self.row(*c).is_none())
            .collect()
    }
}

/// Count consecutive pairs within each sequence.
pub fn estimate_from_sequences(seqs: &[Vec<CognitiveBehavior>]) -> TransitionEstimate {
    let mut est = TransitionEstimate::default();
    for s in seqs {
        est.episodes += 1;
        for w in s.windows(2) {
            est.counts[w[0].index()][w[1].index()] += 1;
        }
    }
    est
}

/// Pair counts over the cognitive chain of each trajectory. Interrupt steps
/// are skipped, so pairs bridge them.
pub fn estimate_transitions(trajs: &[Trajectory]) -> TransitionEstimate {
    let seqs: Vec<Vec<CognitiveBehavior>> = trajs
        .iter()
        .map(|t| t.cognitive_steps().map(|(_, c)| c).collect())
        .collect();
    estimate_from_sequences(&seqs)
}

fn normalize(xs: &[f64], what: &str) -> Result<Vec<f64>, MetricsError> {
    if xs.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(MetricsError::Input(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = xs.iter().sum();
    if sum <= 0.0 {
        return Err(MetricsError::Input(format!("{what} has no mass")));
    }
    Ok(xs.iter().map(|x| x / sum).collect())
}

/// `KL(p || q)` in nats. Both inputs are normalized first. When q has a zero
/// where p has mass, q gets `KL_EPSILON` added to every cell and is
/// renormalized; zero cells of p contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, MetricsError> {
    if p.len() != q.len() {
        return Err(MetricsError::Support(format!(
            "distributions have {} and {} cells",
            p.len(),
            q.len()
        )));
    }
    let p = normalize(p, "p")?;
    let mut q = normalize(q, "q")?;
    if p.iter().zip(&q).any(|(a, b)| *a > 0.0 && *b == 0.0) {
        q = normalize(&q.iter().map(|x| x + KL_EPSILON).collect::<Vec<_>>(), "q")?;
    }
    let kl: f64 = p
        .iter()
        .zip(&q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum();
    Ok(kl.max(0.0))
}

/// Reference statistics from real students. Occupancy labels define the
/// support used for comparison; simulated steps outside it are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceDist {
    #[serde(default)]
    pub description: String,
    pub occupancy: BTreeMap<CognitiveBehavior, f64>,
    /// P(Debugging -> Debugging).
    pub debug_stickiness: f64,
    #[serde(default)]
    pub transitions: BTreeMap<CognitiveBehavior, BTreeMap<CognitiveBehavior, f64>>,
    /// Share of trajectories per debugging-ratio bin.
    #[serde(default)]
    pub debug_ratio_histogram: Option<Vec<f64>>,
}

impl ReferenceDist {
    pub fn from_toml(text: &str) -> Result<Self, MetricsError> {
        let r: ReferenceDist =
            toml::from_str(text).map_err(|e| MetricsError::Input(format!("reference distribution: {e}")))?;
        r.check()?;
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MetricsError::Input(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn check(&self) -> Result<(), MetricsError> {
        let close = |xs: &mut dyn Iterator<Item = f64>, what: &str| {
            let v: Vec<f64> = xs.collect();
            let s: f64 = v.iter().sum();
            if v.iter().any(|x| !(0.0..=1.0).contains(x)) || (s - 1.0).abs() > 1e-6 {
                return Err(MetricsError::Input(format!("reference {what} must be probabilities summing to 1 (sum {s})")));
            }
            Ok(())
        };
        close(&mut self.occupancy.values().copied(), "occupancy")?;
        if !(0.0..=1.0).contains(&self.debug_stickiness) {
            return Err(MetricsError::Input("debug_stickiness must lie in [0, 1]".into()));
        }
        for (from, row) in &self.transitions {
            close(&mut row.values().copied(), &format!("transition row {}", from.name()))?;
        }
        if let Some(h) = &self.debug_ratio_histogram {
            if h.len() != RATIO_BINS {
                return Err(MetricsError::Input(format!("debug_ratio_histogram needs {RATIO_BINS} bins")));
            }
            close(&mut h.iter().copied(), "debug_ratio_histogram")?;
        }
        Ok(())
    }

    /// Reference matching a set of simulated trajectories exactly.
    pub fn from_trajectories(trajs: &[Trajectory]) -> Result<Self, MetricsError> {
        let occ = occupancy(trajs, &CognitiveBehavior::ALL)
            .ok_or_else(|| MetricsError::Degenerate("no cognitive steps".into()))?;
        let est = estimate_transitions(trajs);
        Ok(Self {
            description: "derived from simulated trajectories".into(),
            occupancy: CognitiveBehavior::ALL.into_iter().zip(occ).collect(),
            debug_stickiness: sticky_of(&est),
            transitions: CognitiveBehavior::ALL
                .into_iter()
                .filter_map(|c| est.row(c).map(|r| (c, CognitiveBehavior::ALL.into_iter().zip(r).collect())))
                .collect(),
            debug_ratio_histogram: ratio_histogram(trajs),
        })
    }

    fn support(&self) -> Vec<CognitiveBehavior> {
        self.occupancy.keys().copied().collect()
    }
}

/// Share of cognitive steps in each of `support`, ignoring other labels.
pub fn occupancy(trajs: &[Trajectory], support: &[CognitiveBehavior]) -> Option<Vec<f64>> {
    let mut counts = vec![0u64; support.len()];
    for t in trajs {
        for (_, c) in t.cognitive_steps() {
            if let Some(i) = support.iter().position(|s| *s == c) {
                counts[i] += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    (total > 0).then(|| counts.iter().map(|&n| n as f64 / total as f64).collect())
}

/// State-occupancy divergence `KL(sim || reference)`.
pub fn d_kl_occupancy(trajs: &[Trajectory], reference: &ReferenceDist) -> Option<f64> {
    let support = reference.support();
    let p = occupancy(trajs, &support)?;
    let q: Vec<f64> = reference.occupancy.values().copied().collect();
    kl_divergence(&p, &q).ok()
}

/// Mean row-wise `KL(sim row || reference row)` over rows present in both.
/// Empty simulated rows are excluded.
pub fn d_kl_transitions(trajs: &[Trajectory], reference: &ReferenceDist) -> Option<f64> {
    let est = estimate_transitions(trajs);
    let mut kls = Vec::new();
    for (from, ref_row) in &reference.transitions {
        let support: Vec<CognitiveBehavior> = ref_row.keys().copied().collect();
        let counts: Vec<f64> = support.iter().map(|to| est.count(*from, *to) as f64).collect();
        if counts.iter().sum::<f64>() == 0.0 {
            continue;
        }
        let q: Vec<f64> = ref_row.values().copied().collect();
        kls.push(kl_divergence(&counts, &q).ok()?);
    }
    (!kls.is_empty()).then(|| kls.iter().sum::<f64>() / kls.len() as f64)
}

/// P(D -> D) of an estimate; a chain that never leaves a Debugging step
/// toward anything counts as never sticking.
fn sticky_of(est: &TransitionEstimate) -> f64 {
    est.prob(CognitiveBehavior::Debugging, CognitiveBehavior::Debugging)
        .unwrap_or(0.0)
}

/// Histogram of per-trajectory `#Debugging / #cognitive` over equal bins on
/// [0, 1]; a ratio of exactly 1 falls in the last bin.
pub fn ratio_histogram(trajs: &[Trajectory]) -> Option<Vec<f64>> {
    let ratios: Vec<(usize, usize)> = trajs
        .iter()
        .map(|t| {
            let cs: Vec<_> = t.cognitive_steps().collect();
            let d = cs.iter().filter(|(_, c)| *c == CognitiveBehavior::Debugging).count();
            (d, cs.len())
        })
        .filter(|(_, n)| *n > 0)
        .collect();
    histogram_of_ratios(&ratios)
}

/// Bin `(k, n)` ratios with integer arithmetic so 0.4 and 0.6 land in bins
/// 4 and 6 without rounding surprises.
pub fn histogram_of_ratios(ratios: &[(usize, usize)]) -> Option<Vec<f64>> {
    if ratios.is_empty() {
        return None;
    }
    let mut bins = vec![0.0; RATIO_BINS];
    for &(k, n) in ratios {
        let b = (RATIO_BINS * k / n).min(RATIO_BINS - 1);
        bins[b] += 1.0;
    }
    let total = ratios.len() as f64;
    Some(bins.into_iter().map(|x| x / total).collect())
}

/// Debugging fidelity: half the KL between simulated and reference
/// Debugging stickiness (as stay/leave distributions) plus half the KL
/// between debugging-ratio histograms. Without a reference histogram only
/// the stickiness term is used, at full weight.
pub fn d_debug(trajs: &[Trajectory], reference: &ReferenceDist) -> Option<f64> {
    let est = estimate_transitions(trajs);
    let s_sim = sticky_of(&est);
    let s_ref = reference.debug_stickiness;
    let sticky = kl_divergence(&[s_sim, 1.0 - s_sim], &[s_ref, 1.0 - s_ref]).ok()?;
    match (&reference.debug_ratio_histogram, ratio_histogram(trajs)) {
        (Some(h_ref), Some(h_sim)) => Some(0.5 * sticky + 0.5 * kl_divergence(&h_sim, h_ref).ok()?),
        (None, Some(_)) => Some(sticky),
        (_, None) => None,
    }
}
