//! Simulation engine and analysis toolkit for synthetic novice-programmer
//! learning trajectories.

pub mod behavior;
pub mod rng;
pub mod environment;
pub mod knowledge;
pub mod agent;
pub mod config;
pub mod session;
pub mod metrics;
pub mod trace;
