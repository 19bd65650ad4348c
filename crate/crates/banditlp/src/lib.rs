//! Constrained contextual bandit allocation: neural Thompson sampling over
//! reward and cost heads feeding a per-round perturbed LP with global,
//! per-provider, and per-user constraints, plus the baselines, environments,
//! calibration, exploration control, and ablation tooling around it.

pub mod ablation;
pub mod bayes;
pub mod calibration;
pub mod config;
pub mod env;
pub mod experiment;
pub mod exploration;
pub mod linalg;
pub mod lp;
pub mod policies;
pub mod seeds;
