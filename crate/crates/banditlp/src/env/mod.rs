//! Simulation environments.
//!
//! Two environments share one round interface: a fully synthetic
//! multi-stakeholder generator (fresh users each round, hidden nonlinear
//! reward/cost oracles) and a replay environment built from a logged dataset
//! with KNN-imputed dense rewards. Policies only ever see joint contexts and
//! the realized feedback for pairs they chose; the oracle tables stay hidden
//! behind the harness.

pub mod replay;
pub mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use replay::{
    impute_reward_matrix, top_ctr_items, ImputationReport, LoggedDataset, ReplayConfig, ReplayEnv,
};
pub use synthetic::{CostShape, RewardShape, SyntheticConfig, SyntheticEnv};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("biased logging found no eligible (user, item) pair")]
    EmptyRegion,
    #[error("item {item} has no logged interactions; cannot impute its column")]
    NoInteractions { item: usize },
    #[error("bad logged data: {0}")]
    BadData(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One interaction emitted by the biased logging policy; the initial training
/// pool for every policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoggedInteraction {
    pub user: usize,
    pub item: usize,
    pub context: Vec<f64>,
    pub reward: f64,
    pub cost1: f64,
    pub cost2: f64,
}

/// Constraint targets derived from a random-policy baseline. `global` bounds
/// the summed level-1 cost, `per_provider_max` bounds each provider's summed
/// level-2 cost, and `per_provider_min_send` (when non-empty) demands a
/// minimum expected selection count per provider via negated rows.
/// The `*_baseline` fields keep the unmultiplied random-policy levels for
/// diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintTargets {
    pub global: f64,
    pub per_provider_max: Vec<f64>,
    #[serde(default)]
    pub per_provider_min_send: Vec<f64>,
    pub global_baseline: f64,
    pub per_provider_send_baseline: Vec<f64>,
}

/// One simulation round: the presented users, fixed item representations, and
/// the hidden realized reward/cost tables indexed [user][item].
#[derive(Debug, Clone)]
pub struct EnvironmentRound {
    pub round: usize,
    /// Indices into the environment's user population (synthetic: 0..U).
    pub user_ids: Vec<usize>,
    pub user_contexts: Vec<Vec<f64>>,
    pub item_contexts: Vec<Vec<f64>>,
    pub provider_of: Vec<usize>,
    pub rewards: Vec<Vec<f64>>,
    pub cost1: Vec<Vec<f64>>,
    pub cost2: Vec<Vec<f64>>,
    /// Noiseless oracle means backing the realized tables (equal to the
    /// realized tables when the oracle is a fixed matrix).
    pub mean_rewards: Vec<Vec<f64>>,
    pub mean_cost1: Vec<Vec<f64>>,
    pub mean_cost2: Vec<Vec<f64>>,
}

impl EnvironmentRound {
    pub fn num_round_users(&self) -> usize {
        self.user_contexts.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_contexts.len()
    }

    /// Joint model context for a (user, item) pair: user features followed by
    /// item features (one-hot in the replay environment).
    pub fn joint_context(&self, u: usize, i: usize) -> Vec<f64> {
        let mut z = self.user_contexts[u].clone();
        z.extend_from_slice(&self.item_contexts[i]);
        z
    }

    pub fn context_dim(&self) -> usize {
        self.user_contexts[0].len() + self.item_contexts[0].len()
    }
}

/// Either environment behind one interface.
pub enum Environment {
    Synthetic(SyntheticEnv),
    Replay(ReplayEnv),
}

impl Environment {
    pub fn gen_round(&self, t: usize) -> EnvironmentRound {
        match self {
            Environment::Synthetic(env) => env.gen_round(t),
            Environment::Replay(env) => env.gen_round(t),
        }
    }

    pub fn biased_logging_data(&self, rounds: usize) -> Result<Vec<LoggedInteraction>, EnvError> {
        match self {
            Environment::Synthetic(env) => env.biased_logging_data(rounds),
            Environment::Replay(env) => env.biased_logging_data(rounds),
        }
    }

    pub fn compute_constraint_targets(&self) -> ConstraintTargets {
        match self {
            Environment::Synthetic(env) => env.compute_constraint_targets(),
            Environment::Replay(env) => env.compute_constraint_targets(),
        }
    }

    pub fn num_items(&self) -> usize {
        match self {
            Environment::Synthetic(env) => env.config.num_items,
            Environment::Replay(env) => env.dataset.num_items,
        }
    }

    pub fn num_providers(&self) -> usize {
        match self {
            Environment::Synthetic(env) => env.config.num_providers,
            Environment::Replay(env) => env.config.num_providers,
        }
    }

    pub fn user_cap(&self) -> usize {
        match self {
            Environment::Synthetic(env) => env.config.user_cap,
            Environment::Replay(env) => env.config.user_cap,
        }
    }

    pub fn context_dim(&self) -> usize {
        match self {
            Environment::Synthetic(env) => env.config.user_dim + env.config.item_dim,
            Environment::Replay(env) => env.dataset.feature_dim + env.dataset.num_items,
        }
    }

    /// Rewards are real-valued in the synthetic environment and binary clicks
    /// in the replay environment.
    pub fn reward_head(&self) -> crate::bayes::Head {
        match self {
            Environment::Synthetic(_) => crate::bayes::Head::Gaussian,
            Environment::Replay(_) => crate::bayes::Head::Binary,
        }
    }
}
