//! Semi-Markov behavior engine.
//!
//! A session is a sequence of metacognitive segments. Each segment picks a
//! behavior from a first-order chain over [`MetacognitiveBehavior`], draws an
//! integer duration from a per-behavior Gamma distribution, and then emits one
//! [`CognitiveBehavior`] per step from a chain conditioned on the segment's
//! behavior and the previous step. Two interrupt kinds are layered on top as
//! Gaussian bumps over session progress.

mod defaults;
mod sampling;
mod spec;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use defaults::{default_spec, published_cognitive_cells, PublishedCell};
pub use sampling::{
    check_interrupt, duration_from_draw, gamma_moments, sample_cognitive_step,
    sample_duration, sample_next_segment,
};
pub use spec::{validate_spec, BehaviorSpec, Cell, CellSource, Row, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetacognitiveBehavior {
    Planning,
    Enacting,
    Monitoring,
    Reflecting,
}

impl MetacognitiveBehavior {
    pub const ALL: [MetacognitiveBehavior; 4] = [
        MetacognitiveBehavior::Planning,
        MetacognitiveBehavior::Enacting,
        MetacognitiveBehavior::Monitoring,
        MetacognitiveBehavior::Reflecting,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MetacognitiveBehavior::Planning => "Planning",
            MetacognitiveBehavior::Enacting => "Enacting",
            MetacognitiveBehavior::Monitoring => "Monitoring",
            MetacognitiveBehavior::Reflecting => "Reflecting",
        }
    }

    /// Lowercase token used in configs and prompt asset keys.
    pub fn key(self) -> &'static str {
        match self {
            MetacognitiveBehavior::Planning => "planning",
            MetacognitiveBehavior::Enacting => "enacting",
            MetacognitiveBehavior::Monitoring => "monitoring",
            MetacognitiveBehavior::Reflecting => "reflecting",
        }
    }
}

impl fmt::Display for MetacognitiveBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CognitiveBehavior {
    Constructing,
    Debugging,
    Assessing,
}

impl CognitiveBehavior {
    pub const ALL: [CognitiveBehavior; 3] = [
        CognitiveBehavior::Constructing,
        CognitiveBehavior::Debugging,
        CognitiveBehavior::Assessing,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CognitiveBehavior::Constructing => "Constructing",
            CognitiveBehavior::Debugging => "Debugging",
            CognitiveBehavior::Assessing => "Assessing",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            CognitiveBehavior::Constructing => "constructing",
            CognitiveBehavior::Debugging => "debugging",
            CognitiveBehavior::Assessing => "assessing",
        }
    }
}

impl fmt::Display for CognitiveBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Conditioning context of a cognitive step: the previous step in the same
/// segment, or `Start` for the first step of a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrevCognitive {
    Start,
    Constructing,
    Debugging,
    Assessing,
}

impl PrevCognitive {
    pub const ALL: [PrevCognitive; 4] = [
        PrevCognitive::Start,
        PrevCognitive::Constructing,
        PrevCognitive::Debugging,
        PrevCognitive::Assessing,
    ];
}

impl From<Option<CognitiveBehavior>> for PrevCognitive {
    fn from(prev: Option<CognitiveBehavior>) -> Self {
        match prev {
            None => PrevCognitive::Start,
            Some(CognitiveBehavior::Constructing) => PrevCognitive::Constructing,
            Some(CognitiveBehavior::Debugging) => PrevCognitive::Debugging,
            Some(CognitiveBehavior::Assessing) => PrevCognitive::Assessing,
        }
    }
}

impl fmt::Display for PrevCognitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PrevCognitive::Start => "START",
            PrevCognitive::Constructing => "Constructing",
            PrevCognitive::Debugging => "Debugging",
            PrevCognitive::Assessing => "Assessing",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileLevel {
    High,
    Low,
}

impl ProfileLevel {
    pub fn key(self) -> &'static str {
        match self {
            ProfileLevel::High => "high",
            ProfileLevel::Low => "low",
        }
    }
}

impl fmt::Display for ProfileLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProfileLevel::High => "High",
            ProfileLevel::Low => "Low",
        })
    }
}

impl std::str::FromStr for ProfileLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "high" => Ok(ProfileLevel::High),
            "low" => Ok(ProfileLevel::Low),
            other => Err(format!("unknown profile level `{other}` (expected high or low)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterruptKind {
    Assistance,
    OffTopic,
}

impl fmt::Display for InterruptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InterruptKind::Assistance => "Assistance",
            InterruptKind::OffTopic => "OffTopic",
        })
    }
}

/// Gamma duration parameters in (shape, scale) form. Scale is in cognitive steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub scale: f64,
}

impl GammaParams {
    pub fn new(shape: f64, scale: f64) -> Self {
        Self { shape, scale }
    }

    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    pub fn cv(&self) -> f64 {
        1.0 / self.shape.sqrt()
    }
}

/// Gaussian bump `r_peak * exp(-(x - mu)^2 / (2 sigma^2))` over session progress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterruptGaussian {
    pub mu: f64,
    pub sigma: f64,
    pub r_peak: f64,
}

impl InterruptGaussian {
    pub fn probability(&self, x: f64) -> f64 {
        let d = x - self.mu;
        self.r_peak * (-(d * d) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub behavior: MetacognitiveBehavior,
    pub duration: u32,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BehaviorError {
    #[error("no cognitive transition row for ({metacog}, {prev})")]
    MissingCognitiveRow {
        metacog: MetacognitiveBehavior,
        prev: PrevCognitive,
    },
    #[error("no metacognitive transition row for {0}")]
    MissingMetacogRow(MetacognitiveBehavior),
    #[error("no duration parameters for {0}")]
    MissingDuration(MetacognitiveBehavior),
    #[error("invalid Gamma parameters for {behavior}: {reason}")]
    InvalidGamma {
        behavior: MetacognitiveBehavior,
        reason: String,
    },
    #[error("probability row has no mass: {0}")]
    EmptyRow(String),
}
