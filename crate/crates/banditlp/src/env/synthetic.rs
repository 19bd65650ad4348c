//! Synthetic multi-stakeholder environment.
//!
//! Hidden ground truth: one linear index per head, `v = z_u'b_u + z_i'b_i`,
//! with weights drawn once at seed time from N(0, 0.6^2). Rewards pass the
//! index through a sum of sigmoids plus a ripple; both cost levels pass it
//! through a tanh bump. Realized values add gaussian noise. Fresh users are
//! drawn every round; item features are fixed for the life of the seed.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ConstraintTargets, EnvError, EnvironmentRound, LoggedInteraction};
use crate::linalg::dot;
use crate::seeds;

/// `mu_r(v) = sigmoid(a1 v + b1) + gain2 sigmoid(a2 v + b2) + ripple sin(freq v)`
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardShape {
    pub a1: f64,
    pub b1: f64,
    pub gain2: f64,
    pub a2: f64,
    pub b2: f64,
    pub ripple: f64,
    pub ripple_freq: f64,
}

impl Default for RewardShape {
    fn default() -> Self {
        RewardShape {
            a1: -4.0,
            b1: 5.0,
            gain2: 5.0,
            a2: 5.0,
            b2: 5.0,
            ripple: 0.1,
            ripple_freq: 2.0,
        }
    }
}

impl RewardShape {
    pub fn eval(&self, v: f64) -> f64 {
        sigmoid(self.a1 * v + self.b1)
            + self.gain2 * sigmoid(self.a2 * v + self.b2)
            + self.ripple * (self.ripple_freq * v).sin()
    }
}

/// `mu_c(v) = base + amp tanh(rate v)`
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostShape {
    pub base: f64,
    pub amp: f64,
    pub rate: f64,
}

impl Default for CostShape {
    fn default() -> Self {
        CostShape { base: 1.0, amp: 0.1, rate: 0.5 }
    }
}

impl CostShape {
    pub fn eval(&self, v: f64) -> f64 {
        self.base + self.amp * (self.rate * v).tanh()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_providers: usize,
    pub user_dim: usize,
    pub item_dim: usize,
    pub reward_noise_var: f64,
    pub cost_noise_var: f64,
    pub weight_std: f64,
    pub reward_shape: RewardShape,
    pub cost1_shape: CostShape,
    pub cost2_shape: CostShape,
    pub global_multiplier: f64,
    pub provider_multiplier: f64,
    pub user_cap: usize,
    pub calibration_users: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_users: 500,
            num_items: 100,
            num_providers: 5,
            user_dim: 10,
            item_dim: 10,
            reward_noise_var: 0.1,
            cost_noise_var: 0.1,
            weight_std: 0.6,
            reward_shape: RewardShape::default(),
            cost1_shape: CostShape::default(),
            cost2_shape: CostShape::default(),
            global_multiplier: 0.8,
            provider_multiplier: 1.5,
            user_cap: 2,
            calibration_users: 5000,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidConfig(msg));
        if self.num_users == 0 || self.num_items == 0 || self.num_providers == 0 {
            return bad("num_users, num_items, num_providers must be positive".into());
        }
        if self.num_items % self.num_providers != 0 {
            return bad(format!(
                "num_items ({}) must be divisible by num_providers ({})",
                self.num_items, self.num_providers
            ));
        }
        if self.user_dim == 0 || self.item_dim == 0 {
            return bad("user_dim and item_dim must be positive".into());
        }
        if self.user_cap == 0 || self.user_cap > self.num_items {
            return bad(format!(
                "user_cap ({}) must be in 1..={}",
                self.user_cap, self.num_items
            ));
        }
        for (name, v) in [
            ("reward_noise_var", self.reward_noise_var),
            ("cost_noise_var", self.cost_noise_var),
            ("weight_std", self.weight_std),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        for (name, v) in [
            ("global_multiplier", self.global_multiplier),
            ("provider_multiplier", self.provider_multiplier),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return bad(format!("{name} must be finite and positive, got {v}"));
            }
        }
        if self.calibration_users == 0 {
            return bad("calibration_users must be positive".into());
        }
        Ok(())
    }
}

/// Hidden weights and fixed item features; exportable for reproducibility.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GroundTruth {
    pub reward_user: Vec<f64>,
    pub reward_item: Vec<f64>,
    pub cost1_user: Vec<f64>,
    pub cost1_item: Vec<f64>,
    pub cost2_user: Vec<f64>,
    pub cost2_item: Vec<f64>,
    pub item_contexts: Vec<Vec<f64>>,
}

pub struct SyntheticEnv {
    pub config: SyntheticConfig,
    pub truth: GroundTruth,
    pub provider_of: Vec<usize>,
    item_score_r: Vec<f64>,
    item_score_c1: Vec<f64>,
    item_score_c2: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SyntheticSnapshot<'a> {
    pub config: &'a SyntheticConfig,
    pub truth: &'a GroundTruth,
    pub provider_of: &'a [usize],
}

impl SyntheticEnv {
    pub fn new(config: SyntheticConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let mut rng = seeds::stream(config.seed, &[seeds::purpose::ENV_GROUND_TRUTH]);
        let normals = |rng: &mut rand_chacha::ChaCha8Rng, n: usize, std: f64| -> Vec<f64> {
            (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * std).collect()
        };
        let truth = GroundTruth {
            reward_user: normals(&mut rng, config.user_dim, config.weight_std),
            reward_item: normals(&mut rng, config.item_dim, config.weight_std),
            cost1_user: normals(&mut rng, config.user_dim, config.weight_std),
            cost1_item: normals(&mut rng, config.item_dim, config.weight_std),
            cost2_user: normals(&mut rng, config.user_dim, config.weight_std),
            cost2_item: normals(&mut rng, config.item_dim, config.weight_std),
            item_contexts: (0..config.num_items)
                .map(|_| normals(&mut rng, config.item_dim, 1.0))
                .collect(),
        };
        Self::from_parts(config, truth)
    }

    /// Build with an injected ground truth (reproducibility, oracle overrides
    /// in experiments).
    pub fn from_parts(config: SyntheticConfig, truth: GroundTruth) -> Result<Self, EnvError> {
        config.validate()?;
        let d_u = config.user_dim;
        let d_i = config.item_dim;
        for (name, v, want) in [
            ("reward_user", &truth.reward_user, d_u),
            ("reward_item", &truth.reward_item, d_i),
            ("cost1_user", &truth.cost1_user, d_u),
            ("cost1_item", &truth.cost1_item, d_i),
            ("cost2_user", &truth.cost2_user, d_u),
            ("cost2_item", &truth.cost2_item, d_i),
        ] {
            if v.len() != want {
                return Err(EnvError::InvalidConfig(format!(
                    "ground truth {name} has length {}, expected {want}",
                    v.len()
                )));
            }
        }
        if truth.item_contexts.len() != config.num_items
            || truth.item_contexts.iter().any(|z| z.len() != d_i)
        {
            return Err(EnvError::InvalidConfig(
                "ground truth item_contexts shape mismatch".into(),
            ));
        }
        let block = config.num_items / config.num_providers;
        let provider_of: Vec<usize> = (0..config.num_items).map(|i| i / block).collect();
        let score = |weights: &[f64]| -> Vec<f64> {
            truth.item_contexts.iter().map(|z| dot(z, weights)).collect()
        };
        let item_score_r = score(&truth.reward_item);
        let item_score_c1 = score(&truth.cost1_item);
        let item_score_c2 = score(&truth.cost2_item);
        Ok(SyntheticEnv {
            config,
            truth,
            provider_of,
            item_score_r,
            item_score_c1,
            item_score_c2,
        })
    }

    pub fn snapshot(&self) -> SyntheticSnapshot<'_> {
        SyntheticSnapshot {
            config: &self.config,
            truth: &self.truth,
            provider_of: &self.provider_of,
        }
    }

    /// Linear reward index for a user context against one item.
    pub fn reward_score(&self, user_context: &[f64], item: usize) -> f64 {
        dot(user_context, &self.truth.reward_user) + self.item_score_r[item]
    }

    fn draw_user_context(&self, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
        (0..self.config.user_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Mean and realized triples for one (user, item) pair, in the fixed draw
    /// order reward, cost1, cost2.
    fn draw_pair(
        &self,
        user_context: &[f64],
        item: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> ((f64, f64, f64), (f64, f64, f64)) {
        let cfg = &self.config;
        let v_r = dot(user_context, &self.truth.reward_user) + self.item_score_r[item];
        let v_c1 = dot(user_context, &self.truth.cost1_user) + self.item_score_c1[item];
        let v_c2 = dot(user_context, &self.truth.cost2_user) + self.item_score_c2[item];
        let m_r = cfg.reward_shape.eval(v_r);
        let m_c1 = cfg.cost1_shape.eval(v_c1);
        let m_c2 = cfg.cost2_shape.eval(v_c2);
        let r_std = cfg.reward_noise_var.sqrt();
        let c_std = cfg.cost_noise_var.sqrt();
        let r = m_r + r_std * rng.sample::<f64, _>(StandardNormal);
        let c1 = m_c1 + c_std * rng.sample::<f64, _>(StandardNormal);
        let c2 = m_c2 + c_std * rng.sample::<f64, _>(StandardNormal);
        ((m_r, m_c1, m_c2), (r, c1, c2))
    }

    pub fn gen_round(&self, t: usize) -> EnvironmentRound {
        let cfg = &self.config;
        let mut rng = seeds::stream(cfg.seed, &[seeds::purpose::ENV_ROUND, t as u64]);
        let user_contexts: Vec<Vec<f64>> =
            (0..cfg.num_users).map(|_| self.draw_user_context(&mut rng)).collect();
        let (n_u, n_i) = (cfg.num_users, cfg.num_items);
        let mut rewards = vec![vec![0.0; n_i]; n_u];
        let mut cost1 = vec![vec![0.0; n_i]; n_u];
        let mut cost2 = vec![vec![0.0; n_i]; n_u];
        let mut mean_rewards = vec![vec![0.0; n_i]; n_u];
        let mut mean_cost1 = vec![vec![0.0; n_i]; n_u];
        let mut mean_cost2 = vec![vec![0.0; n_i]; n_u];
        for u in 0..n_u {
            for i in 0..n_i {
                let ((m_r, m_c1, m_c2), (r, c1, c2)) =
                    self.draw_pair(&user_contexts[u], i, &mut rng);
                mean_rewards[u][i] = m_r;
                mean_cost1[u][i] = m_c1;
                mean_cost2[u][i] = m_c2;
                rewards[u][i] = r;
                cost1[u][i] = c1;
                cost2[u][i] = c2;
            }
        }
        EnvironmentRound {
            round: t,
            user_ids: (0..n_u).collect(),
            user_contexts,
            item_contexts: self.truth.item_contexts.clone(),
            provider_of: self.provider_of.clone(),
            rewards,
            cost1,
            cost2,
            mean_rewards,
            mean_cost1,
            mean_cost2,
        }
    }

    /// Logging policy restricted to pairs with a negative linear reward
    /// index, sampled uniformly up to the user cap.
    pub fn biased_logging_data(
        &self,
        rounds: usize,
    ) -> Result<Vec<LoggedInteraction>, EnvError> {
        let cfg = &self.config;
        let mut log = Vec::new();
        for pass in 0..rounds {
            let mut rng =
                seeds::stream(cfg.seed, &[seeds::purpose::ENV_LOGGING, pass as u64]);
            let user_contexts: Vec<Vec<f64>> =
                (0..cfg.num_users).map(|_| self.draw_user_context(&mut rng)).collect();
            for (u, z_u) in user_contexts.iter().enumerate() {
                let eligible: Vec<usize> = (0..cfg.num_items)
                    .filter(|&i| self.reward_score(z_u, i) < 0.0)
                    .collect();
                if eligible.is_empty() {
                    continue;
                }
                let take = cfg.user_cap.min(eligible.len());
                let picks = rand::seq::index::sample(&mut rng, eligible.len(), take);
                for p in picks.iter() {
                    let i = eligible[p];
                    let (_, (r, c1, c2)) = self.draw_pair(z_u, i, &mut rng);
                    let mut context = z_u.clone();
                    context.extend_from_slice(&self.truth.item_contexts[i]);
                    log.push(LoggedInteraction {
                        user: u,
                        item: i,
                        context,
                        reward: r,
                        cost1: c1,
                        cost2: c2,
                    });
                }
            }
        }
        if log.is_empty() {
            return Err(EnvError::EmptyRegion);
        }
        Ok(log)
    }

    /// Simulate a uniform random policy over `calibration_users` fresh users,
    /// then rescale the realized cost totals to the round population and apply
    /// the multipliers.
    pub fn compute_constraint_targets(&self) -> ConstraintTargets {
        let cfg = &self.config;
        let mut rng = seeds::stream(cfg.seed, &[seeds::purpose::TARGETS]);
        let mut sum1 = 0.0;
        let mut sum2 = vec![0.0; cfg.num_providers];
        let mut count = vec![0.0; cfg.num_providers];
        for _ in 0..cfg.calibration_users {
            let z_u = self.draw_user_context(&mut rng);
            let picks = rand::seq::index::sample(&mut rng, cfg.num_items, cfg.user_cap);
            for i in picks.iter() {
                let (_, (_, c1, c2)) = self.draw_pair(&z_u, i, &mut rng);
                sum1 += c1;
                sum2[self.provider_of[i]] += c2;
                count[self.provider_of[i]] += 1.0;
            }
        }
        let scale = cfg.num_users as f64 / cfg.calibration_users as f64;
        let global_baseline = sum1 * scale;
        let per_provider_send_baseline: Vec<f64> = count.iter().map(|c| c * scale).collect();
        ConstraintTargets {
            global: cfg.global_multiplier * global_baseline,
            per_provider_max: sum2
                .iter()
                .map(|s| cfg.provider_multiplier * s * scale)
                .collect(),
            per_provider_min_send: Vec::new(),
            global_baseline,
            per_provider_send_baseline,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            num_users: 8,
            num_items: 10,
            num_providers: 5,
            user_dim: 3,
            item_dim: 2,
            calibration_users: 200,
            seed,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn cost_shape_at_zero_is_base() {
        assert_eq!(CostShape::default().eval(0.0), 1.0);
    }

    #[test]
    fn reward_shape_at_zero_is_six_sigmoids() {
        let expected = 6.0 / (1.0 + (-5.0f64).exp());
        assert!((RewardShape::default().eval(0.0) - expected).abs() < 1e-12);
        assert!((expected - 5.9598).abs() < 1e-3);
    }

    #[test]
    fn equal_seeds_reproduce_truth_and_rounds() {
        let a = SyntheticEnv::new(small_config(7)).unwrap();
        let b = SyntheticEnv::new(small_config(7)).unwrap();
        assert_eq!(a.truth, b.truth);
        let ra = a.gen_round(3);
        let rb = b.gen_round(3);
        assert_eq!(ra.rewards, rb.rewards);
        assert_eq!(ra.cost1, rb.cost1);
        assert_eq!(ra.user_contexts, rb.user_contexts);
    }

    #[test]
    fn different_rounds_differ() {
        let env = SyntheticEnv::new(small_config(7)).unwrap();
        let r0 = env.gen_round(0);
        let r1 = env.gen_round(1);
        assert_ne!(r0.rewards, r1.rewards);
        assert_eq!(r0.item_contexts, r1.item_contexts);
    }

    #[test]
    fn providers_partition_items_evenly() {
        let env = SyntheticEnv::new(small_config(1)).unwrap();
        let mut counts = vec![0usize; env.config.num_providers];
        for &l in &env.provider_of {
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c == 2));
    }

    #[test]
    fn zero_noise_makes_draws_equal_means() {
        let mut cfg = small_config(3);
        cfg.reward_noise_var = 0.0;
        cfg.cost_noise_var = 0.0;
        let env = SyntheticEnv::new(cfg).unwrap();
        let round = env.gen_round(0);
        assert_eq!(round.rewards, round.mean_rewards);
        assert_eq!(round.cost1, round.mean_cost1);
        assert_eq!(round.cost2, round.mean_cost2);
    }

    #[test]
    fn round_means_match_golden_recomputation() {
        let env = SyntheticEnv::new(small_config(11)).unwrap();
        let round = env.gen_round(2);
        for u in 0..env.config.num_users {
            for i in 0..env.config.num_items {
                let v = dot(&round.user_contexts[u], &env.truth.reward_user)
                    + dot(&round.item_contexts[i], &env.truth.reward_item);
                let want = env.config.reward_shape.eval(v);
                assert!((round.mean_rewards[u][i] - want).abs() < 1e-12);
                let v1 = dot(&round.user_contexts[u], &env.truth.cost1_user)
                    + dot(&round.item_contexts[i], &env.truth.cost1_item);
                assert!((round.mean_cost1[u][i] - env.config.cost1_shape.eval(v1)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn logged_pairs_have_negative_scores_and_respect_cap() {
        let env = SyntheticEnv::new(small_config(5)).unwrap();
        let log = env.biased_logging_data(1).unwrap();
        assert!(!log.is_empty());
        let mut per_user = vec![0usize; env.config.num_users];
        for rec in &log {
            let z_u = &rec.context[..env.config.user_dim];
            assert!(env.reward_score(z_u, rec.item) < 0.0);
            per_user[rec.user] += 1;
        }
        assert!(per_user.iter().all(|&c| c <= env.config.user_cap));
    }

    #[test]
    fn all_positive_scores_yield_empty_region() {
        let cfg = small_config(5);
        let truth = GroundTruth {
            reward_user: vec![0.0; cfg.user_dim],
            reward_item: vec![1.0, 0.0],
            cost1_user: vec![0.0; cfg.user_dim],
            cost1_item: vec![0.0; cfg.item_dim],
            cost2_user: vec![0.0; cfg.user_dim],
            cost2_item: vec![0.0; cfg.item_dim],
            item_contexts: (0..cfg.num_items).map(|i| vec![1.0 + i as f64, 0.0]).collect(),
        };
        let env = SyntheticEnv::from_parts(cfg, truth).unwrap();
        assert!(matches!(env.biased_logging_data(2), Err(EnvError::EmptyRegion)));
    }

    #[test]
    fn forced_unit_costs_hit_exact_global_target() {
        let mut cfg = small_config(9);
        cfg.cost1_shape = CostShape { base: 1.0, amp: 0.0, rate: 0.5 };
        cfg.cost_noise_var = 0.0;
        let env = SyntheticEnv::new(cfg.clone()).unwrap();
        let targets = env.compute_constraint_targets();
        let want = cfg.global_multiplier * (cfg.user_cap * cfg.num_users) as f64;
        assert!((targets.global - want).abs() < 1e-9);
    }

    #[test]
    fn default_targets_are_symmetric_across_providers() {
        let env = SyntheticEnv::new(SyntheticConfig::default()).unwrap();
        let targets = env.compute_constraint_targets();
        let mean = targets.per_provider_max.iter().sum::<f64>()
            / targets.per_provider_max.len() as f64;
        for c in &targets.per_provider_max {
            assert!((c - mean).abs() / mean < 0.10, "provider target {c} vs mean {mean}");
        }
        assert!(targets.global > 0.0);
        assert_eq!(targets.per_provider_min_send.len(), 0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small_config(0);
        cfg.num_items = 9;
        assert!(matches!(SyntheticEnv::new(cfg), Err(EnvError::InvalidConfig(_))));
        let mut cfg = small_config(0);
        cfg.user_cap = 0;
        assert!(SyntheticEnv::new(cfg).is_err());
        let mut cfg = small_config(0);
        cfg.reward_noise_var = -1.0;
        assert!(SyntheticEnv::new(cfg).is_err());
    }
}
