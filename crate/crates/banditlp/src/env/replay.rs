//! Replay environment over a logged bandit dataset.
//!
//! The sparse log is densified once with KNN imputation: for each unobserved
//! (user, item) cell, the k nearest users (Euclidean distance in feature
//! space) who interacted with the item vote with their mean reward, and a
//! Bernoulli sample of that mean fills the cell. Items with fewer than k
//! interacting users fall back to their global CTR (counted in the report).
//! The dense matrix is the reward oracle for every subsequent round. Costs
//! are synthesized from the logged user features and latent item features,
//! mirroring the synthetic generator.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::synthetic::CostShape;
use super::{ConstraintTargets, EnvError, EnvironmentRound, LoggedInteraction};
use crate::linalg::dot;
use crate::seeds;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    /// KNN neighborhood size for imputation.
    pub knn_k: usize,
    /// Cap on distinct users kept from the log (seeded subsample above it).
    pub user_sample_size: usize,
    /// Users presented per round; `None` presents the whole population.
    pub users_per_round: Option<usize>,
    pub user_cap: usize,
    pub num_providers: usize,
    /// Fraction of items (by CTR) the biased logging policy may touch.
    pub top_fraction: f64,
    /// Latent item feature dimension for the synthesized costs.
    pub item_latent_dim: usize,
    pub cost_noise_var: f64,
    pub weight_std: f64,
    pub cost1_shape: CostShape,
    pub cost2_shape: CostShape,
    pub global_multiplier: f64,
    pub provider_multiplier: f64,
    pub calibration_users: usize,
    pub seed: u64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            knn_k: 10,
            user_sample_size: 10_000,
            users_per_round: None,
            user_cap: 2,
            num_providers: 5,
            top_fraction: 0.3,
            item_latent_dim: 10,
            cost_noise_var: 0.1,
            weight_std: 0.6,
            cost1_shape: CostShape::default(),
            cost2_shape: CostShape::default(),
            global_multiplier: 0.8,
            provider_multiplier: 1.5,
            calibration_users: 5000,
            seed: 0,
        }
    }
}

impl ReplayConfig {
    /// Dataset-independent sanity checks; `ReplayEnv::new` additionally
    /// validates the limits that depend on the loaded log.
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidConfig(msg));
        if self.knn_k == 0 || self.user_cap == 0 || self.num_providers == 0 {
            return bad("knn_k, user_cap, num_providers must be positive".into());
        }
        if self.user_sample_size == 0 {
            return bad("user_sample_size must be positive".into());
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return bad(format!(
                "top_fraction must be in (0, 1], got {}",
                self.top_fraction
            ));
        }
        if self.item_latent_dim == 0 || self.calibration_users == 0 {
            return bad("item_latent_dim and calibration_users must be positive".into());
        }
        Ok(())
    }
}

/// Sparse logged interactions with dense remapped ids.
#[derive(Debug, Clone)]
pub struct LoggedDataset {
    pub user_features: Vec<Vec<f64>>,
    /// (user, item, reward) with reward in {0, 1}.
    pub rows: Vec<(usize, usize, f64)>,
    pub num_items: usize,
    pub feature_dim: usize,
}

impl LoggedDataset {
    /// Read `user_id,item_id,f0..f{d-1},reward` rows. Ids are remapped to
    /// dense indices ordered by original id; the first feature vector seen
    /// for a user wins.
    pub fn from_csv(path: &Path) -> Result<Self, EnvError> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.len() < 3
            || headers.get(0) != Some("user_id")
            || headers.get(1) != Some("item_id")
            || headers.get(headers.len() - 1) != Some("reward")
        {
            return Err(EnvError::BadData(format!(
                "expected header user_id,item_id,f0..,reward; got {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let feature_dim = headers.len() - 3;
        let mut raw: Vec<(u64, u64, Vec<f64>, f64)> = Vec::new();
        for record in reader.records() {
            let record = record?;
            if record.len() != headers.len() {
                return Err(EnvError::BadData(format!(
                    "row has {} fields, expected {}",
                    record.len(),
                    headers.len()
                )));
            }
            let parse = |s: &str, what: &str| -> Result<f64, EnvError> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| EnvError::BadData(format!("bad {what}: {s:?}")))
            };
            let user_id = parse(&record[0], "user_id")? as u64;
            let item_id = parse(&record[1], "item_id")? as u64;
            let features: Vec<f64> = (0..feature_dim)
                .map(|j| parse(&record[2 + j], "feature"))
                .collect::<Result<_, _>>()?;
            let reward = parse(&record[headers.len() - 1], "reward")?;
            if reward != 0.0 && reward != 1.0 {
                return Err(EnvError::BadData(format!(
                    "reward must be 0 or 1, got {reward}"
                )));
            }
            raw.push((user_id, item_id, features, reward));
        }
        if raw.is_empty() {
            return Err(EnvError::BadData("dataset has no rows".into()));
        }
        let mut user_ids: Vec<u64> = raw.iter().map(|r| r.0).collect();
        user_ids.sort_unstable();
        user_ids.dedup();
        let mut item_ids: Vec<u64> = raw.iter().map(|r| r.1).collect();
        item_ids.sort_unstable();
        item_ids.dedup();
        let user_index = |id: u64| user_ids.binary_search(&id).unwrap();
        let item_index = |id: u64| item_ids.binary_search(&id).unwrap();
        let mut user_features = vec![Vec::new(); user_ids.len()];
        let mut rows = Vec::with_capacity(raw.len());
        for (uid, iid, features, reward) in raw {
            let u = user_index(uid);
            if user_features[u].is_empty() {
                user_features[u] = features;
            }
            rows.push((u, item_index(iid), reward));
        }
        Ok(LoggedDataset {
            user_features,
            rows,
            num_items: item_ids.len(),
            feature_dim,
        })
    }

    pub fn num_users(&self) -> usize {
        self.user_features.len()
    }

    /// Mean logged reward per item; `None` when the item has no rows.
    pub fn item_ctrs(&self) -> Vec<Option<f64>> {
        let mut sum = vec![0.0; self.num_items];
        let mut n = vec![0usize; self.num_items];
        for &(_, i, r) in &self.rows {
            sum[i] += r;
            n[i] += 1;
        }
        (0..self.num_items)
            .map(|i| (n[i] > 0).then(|| sum[i] / n[i] as f64))
            .collect()
    }

    /// Keep at most `max_users` users (seeded uniform subsample, order
    /// preserved), remapping ids densely.
    pub fn subsample_users(self, max_users: usize, seed: u64) -> LoggedDataset {
        let n = self.num_users();
        if n <= max_users {
            return self;
        }
        let mut rng = seeds::stream(seed, &[seeds::purpose::REPLAY_INIT]);
        let mut keep: Vec<usize> =
            rand::seq::index::sample(&mut rng, n, max_users).into_vec();
        keep.sort_unstable();
        let mut remap = vec![usize::MAX; n];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let user_features = keep.iter().map(|&u| self.user_features[u].clone()).collect();
        let rows = self
            .rows
            .into_iter()
            .filter_map(|(u, i, r)| (remap[u] != usize::MAX).then(|| (remap[u], i, r)))
            .collect();
        LoggedDataset {
            user_features,
            rows,
            num_items: self.num_items,
            feature_dim: self.feature_dim,
        }
    }
}

/// Indices of the ceil(fraction * I) items with the highest CTR (ties broken
/// toward lower index).
pub fn top_ctr_items(dataset: &LoggedDataset, fraction: f64) -> Vec<usize> {
    let ctrs = dataset.item_ctrs();
    let mut order: Vec<usize> = (0..dataset.num_items).collect();
    order.sort_by(|&a, &b| {
        let ca = ctrs[a].unwrap_or(f64::NEG_INFINITY);
        let cb = ctrs[b].unwrap_or(f64::NEG_INFINITY);
        cb.total_cmp(&ca).then(a.cmp(&b))
    });
    let take = ((fraction * dataset.num_items as f64).ceil() as usize)
        .clamp(1, dataset.num_items);
    let mut top: Vec<usize> = order.into_iter().take(take).collect();
    top.sort_unstable();
    top
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ImputationReport {
    /// Cells imputed from the global item CTR because fewer than k users
    /// interacted with the item.
    pub fallback_cells: usize,
    pub imputed_cells: usize,
    pub observed_cells: usize,
}

/// Densify the logged reward matrix. Observed cells keep their logged value
/// (duplicates average; a fractional average is resolved by one Bernoulli
/// draw). Unobserved cells draw Bernoulli(p) with p the mean reward of the k
/// nearest interacting users, or the item CTR when fewer than k interacted.
pub fn impute_reward_matrix(
    dataset: &LoggedDataset,
    k: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, ImputationReport), EnvError> {
    let n_u = dataset.num_users();
    let n_i = dataset.num_items;
    let mut sum = vec![vec![0.0; n_i]; n_u];
    let mut count = vec![vec![0usize; n_i]; n_u];
    for &(u, i, r) in &dataset.rows {
        sum[u][i] += r;
        count[u][i] += 1;
    }
    // Per item: the users who interacted with it and their mean rewards.
    let mut interactors: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_i];
    for i in 0..n_i {
        for u in 0..n_u {
            if count[u][i] > 0 {
                interactors[i].push((u, sum[u][i] / count[u][i] as f64));
            }
        }
        if interactors[i].is_empty() {
            return Err(EnvError::NoInteractions { item: i });
        }
    }
    let ctrs = dataset.item_ctrs();
    let mut matrix = vec![vec![0.0; n_i]; n_u];
    let mut report = ImputationReport::default();
    let bernoulli = |p: f64, u: usize, i: usize| -> f64 {
        if p <= 0.0 {
            0.0
        } else if p >= 1.0 {
            1.0
        } else {
            let mut rng =
                seeds::stream(seed, &[seeds::purpose::IMPUTE, u as u64, i as u64]);
            if rng.random::<f64>() < p {
                1.0
            } else {
                0.0
            }
        }
    };
    for u in 0..n_u {
        for i in 0..n_i {
            if count[u][i] > 0 {
                let mean = sum[u][i] / count[u][i] as f64;
                matrix[u][i] = if mean == 0.0 || mean == 1.0 {
                    mean
                } else {
                    bernoulli(mean, u, i)
                };
                report.observed_cells += 1;
            } else {
                let p = if interactors[i].len() < k {
                    report.fallback_cells += 1;
                    ctrs[i].expect("interacting item has a ctr")
                } else {
                    knn_mean(dataset, u, i, k, &interactors[i])
                };
                matrix[u][i] = bernoulli(p, u, i);
                report.imputed_cells += 1;
            }
        }
    }
    Ok((matrix, report))
}

/// Mean reward of the k users nearest to `u` among the item's interactors.
/// Distance ties break toward the lower user index.
pub fn knn_mean(
    dataset: &LoggedDataset,
    u: usize,
    _item: usize,
    k: usize,
    interactors: &[(usize, f64)],
) -> f64 {
    let me = &dataset.user_features[u];
    let mut scored: Vec<(f64, usize, f64)> = interactors
        .iter()
        .map(|&(v, reward)| {
            let d2 = me
                .iter()
                .zip(&dataset.user_features[v])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            (d2, v, reward)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let take = k.min(scored.len());
    scored.iter().take(take).map(|t| t.2).sum::<f64>() / take as f64
}

pub struct ReplayEnv {
    pub config: ReplayConfig,
    pub dataset: LoggedDataset,
    pub reward_matrix: Vec<Vec<f64>>,
    pub imputation: ImputationReport,
    pub provider_of: Vec<usize>,
    pub eligible_items: Vec<usize>,
    cost1: Vec<Vec<f64>>,
    cost2: Vec<Vec<f64>>,
    mean_cost1: Vec<Vec<f64>>,
    mean_cost2: Vec<Vec<f64>>,
    item_onehot: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplaySnapshot<'a> {
    pub config: &'a ReplayConfig,
    pub imputation: &'a ImputationReport,
    pub provider_of: &'a [usize],
    pub eligible_items: &'a [usize],
    pub num_users: usize,
    pub num_items: usize,
}

impl ReplayEnv {
    pub fn new(dataset: LoggedDataset, config: ReplayConfig) -> Result<Self, EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidConfig(msg));
        config.validate()?;
        if config.num_providers > dataset.num_items {
            return bad(format!(
                "num_providers ({}) exceeds item count ({})",
                config.num_providers, dataset.num_items
            ));
        }
        let dataset = dataset.subsample_users(config.user_sample_size, config.seed);
        if config.user_cap > dataset.num_items {
            return bad(format!(
                "user_cap ({}) exceeds item count ({})",
                config.user_cap, dataset.num_items
            ));
        }
        if let Some(upr) = config.users_per_round {
            if upr == 0 || upr > dataset.num_users() {
                return bad(format!(
                    "users_per_round ({upr}) must be in 1..={}",
                    dataset.num_users()
                ));
            }
        }
        if dataset.user_features.iter().any(|f| f.len() != dataset.feature_dim) {
            return bad("user feature width is inconsistent".into());
        }
        let (reward_matrix, imputation) =
            impute_reward_matrix(&dataset, config.knn_k, config.seed)?;

        let n_u = dataset.num_users();
        let n_i = dataset.num_items;
        // Synthesized cost oracle: logged user features and latent item
        // features through the tanh shapes, drawn once.
        let mut rng = seeds::stream(config.seed, &[seeds::purpose::ENV_GROUND_TRUTH]);
        let normals = |rng: &mut rand_chacha::ChaCha8Rng, n: usize, std: f64| -> Vec<f64> {
            (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * std).collect()
        };
        let cost1_user = normals(&mut rng, dataset.feature_dim, config.weight_std);
        let cost1_item_w = normals(&mut rng, config.item_latent_dim, config.weight_std);
        let cost2_user = normals(&mut rng, dataset.feature_dim, config.weight_std);
        let cost2_item_w = normals(&mut rng, config.item_latent_dim, config.weight_std);
        let item_latents: Vec<Vec<f64>> = (0..n_i)
            .map(|_| normals(&mut rng, config.item_latent_dim, 1.0))
            .collect();
        let item_score_c1: Vec<f64> =
            item_latents.iter().map(|z| dot(z, &cost1_item_w)).collect();
        let item_score_c2: Vec<f64> =
            item_latents.iter().map(|z| dot(z, &cost2_item_w)).collect();
        let c_std = config.cost_noise_var.sqrt();
        let mut cost1 = vec![vec![0.0; n_i]; n_u];
        let mut cost2 = vec![vec![0.0; n_i]; n_u];
        let mut mean_cost1 = vec![vec![0.0; n_i]; n_u];
        let mut mean_cost2 = vec![vec![0.0; n_i]; n_u];
        for u in 0..n_u {
            let s1 = dot(&dataset.user_features[u], &cost1_user);
            let s2 = dot(&dataset.user_features[u], &cost2_user);
            for i in 0..n_i {
                let m1 = config.cost1_shape.eval(s1 + item_score_c1[i]);
                let m2 = config.cost2_shape.eval(s2 + item_score_c2[i]);
                mean_cost1[u][i] = m1;
                mean_cost2[u][i] = m2;
                cost1[u][i] = m1 + c_std * rng.sample::<f64, _>(StandardNormal);
                cost2[u][i] = m2 + c_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        // Even contiguous provider blocks (sizes differ by at most one).
        let provider_of: Vec<usize> = (0..n_i)
            .map(|i| i * config.num_providers / n_i)
            .collect();
        let eligible_items = top_ctr_items(&dataset, config.top_fraction);
        let item_onehot: Vec<Vec<f64>> = (0..n_i)
            .map(|i| {
                let mut e = vec![0.0; n_i];
                e[i] = 1.0;
                e
            })
            .collect();
        Ok(ReplayEnv {
            config,
            dataset,
            reward_matrix,
            imputation,
            provider_of,
            eligible_items,
            cost1,
            cost2,
            mean_cost1,
            mean_cost2,
            item_onehot,
        })
    }

    pub fn from_csv(path: &Path, config: ReplayConfig) -> Result<Self, EnvError> {
        let dataset = LoggedDataset::from_csv(path)?;
        ReplayEnv::new(dataset, config)
    }

    pub fn snapshot(&self) -> ReplaySnapshot<'_> {
        ReplaySnapshot {
            config: &self.config,
            imputation: &self.imputation,
            provider_of: &self.provider_of,
            eligible_items: &self.eligible_items,
            num_users: self.dataset.num_users(),
            num_items: self.dataset.num_items,
        }
    }

    fn round_users(&self, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
        let n = self.dataset.num_users();
        match self.config.users_per_round {
            Some(m) if m < n => {
                let mut ids: Vec<usize> = rand::seq::index::sample(rng, n, m).into_vec();
                ids.sort_unstable();
                ids
            }
            _ => (0..n).collect(),
        }
    }

    pub fn gen_round(&self, t: usize) -> EnvironmentRound {
        let mut rng =
            seeds::stream(self.config.seed, &[seeds::purpose::ENV_ROUND, t as u64]);
        let ids = self.round_users(&mut rng);
        let pick = |m: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            ids.iter().map(|&u| m[u].clone()).collect()
        };
        EnvironmentRound {
            round: t,
            user_contexts: ids
                .iter()
                .map(|&u| self.dataset.user_features[u].clone())
                .collect(),
            user_ids: ids.clone(),
            item_contexts: self.item_onehot.clone(),
            provider_of: self.provider_of.clone(),
            rewards: pick(&self.reward_matrix),
            cost1: pick(&self.cost1),
            cost2: pick(&self.cost2),
            // The imputed matrix is the oracle: its cells are the means.
            mean_rewards: pick(&self.reward_matrix),
            mean_cost1: pick(&self.mean_cost1),
            mean_cost2: pick(&self.mean_cost2),
        }
    }

    /// Logging restricted to the top-CTR item slice, uniform up to the cap.
    pub fn biased_logging_data(
        &self,
        rounds: usize,
    ) -> Result<Vec<LoggedInteraction>, EnvError> {
        if self.eligible_items.is_empty() {
            return Err(EnvError::EmptyRegion);
        }
        let mut log = Vec::new();
        for pass in 0..rounds {
            let mut rng = seeds::stream(
                self.config.seed,
                &[seeds::purpose::ENV_LOGGING, pass as u64],
            );
            let ids = self.round_users(&mut rng);
            for &u in &ids {
                let take = self.config.user_cap.min(self.eligible_items.len());
                let picks =
                    rand::seq::index::sample(&mut rng, self.eligible_items.len(), take);
                for p in picks.iter() {
                    let i = self.eligible_items[p];
                    let mut context = self.dataset.user_features[u].clone();
                    context.extend_from_slice(&self.item_onehot[i]);
                    log.push(LoggedInteraction {
                        user: u,
                        item: i,
                        context,
                        reward: self.reward_matrix[u][i],
                        cost1: self.cost1[u][i],
                        cost2: self.cost2[u][i],
                    });
                }
            }
        }
        if log.is_empty() {
            return Err(EnvError::EmptyRegion);
        }
        Ok(log)
    }

    /// Uniform random policy over resampled users, rescaled to the per-round
    /// population size.
    pub fn compute_constraint_targets(&self) -> ConstraintTargets {
        let cfg = &self.config;
        let n_u = self.dataset.num_users();
        let n_i = self.dataset.num_items;
        let round_population = cfg.users_per_round.unwrap_or(n_u);
        let mut rng = seeds::stream(cfg.seed, &[seeds::purpose::TARGETS]);
        let mut sum1 = 0.0;
        let mut sum2 = vec![0.0; cfg.num_providers];
        let mut count = vec![0.0; cfg.num_providers];
        for _ in 0..cfg.calibration_users {
            let u = rng.random_range(0..n_u);
            let picks = rand::seq::index::sample(&mut rng, n_i, cfg.user_cap.min(n_i));
            for i in picks.iter() {
                sum1 += self.cost1[u][i];
                sum2[self.provider_of[i]] += self.cost2[u][i];
                count[self.provider_of[i]] += 1.0;
            }
        }
        let scale = round_population as f64 / cfg.calibration_users as f64;
        let global_baseline = sum1 * scale;
        ConstraintTargets {
            global: cfg.global_multiplier * global_baseline,
            per_provider_max: sum2
                .iter()
                .map(|s| cfg.provider_multiplier * s * scale)
                .collect(),
            per_provider_min_send: Vec::new(),
            global_baseline,
            per_provider_send_baseline: count.iter().map(|c| c * scale).collect(),
        }
    }
}
