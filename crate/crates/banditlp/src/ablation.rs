//! Single-round sensitivity study: how allocation quality and stability react
//! to model quality and deliberate exploration.
//!
//! One fixed ground truth (conversion and unsubscribe probabilities, LTV) is
//! drawn per study. Each run then draws quality-controlled noisy predictions
//! (logit-space gaussian noise, sigma set by the quality level) and
//! temperature-scaled moment-matched Beta perturbations, solves the
//! one-item-per-user LP, and scores the allocation against the truth. The
//! reported tables are the relative uplift consumption change (RUC) against
//! the zero-temperature baseline and the across-run allocation variance (AV).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{self, AllocationProblem, GlobalRow, SolveConfig, UserCaps};
use crate::seeds;

#[derive(Debug, Error)]
pub enum AblationError {
    #[error("invalid ablation config: {0}")]
    InvalidConfig(String),
    #[error("baseline uplift consumption is zero for quality index {quality_index}; RUC undefined")]
    DivisionByZero { quality_index: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub users: usize,
    pub items: usize,
    /// Conversion probability law: Beta(a, b) scaled by `conv_scale`.
    pub conv_beta: (f64, f64),
    pub conv_scale: f64,
    /// Unsubscribe probability law: Beta(a, b) scaled by `unsub_scale`.
    pub unsub_beta: (f64, f64),
    pub unsub_scale: f64,
    /// Lifetime-value law: Gamma(shape, scale), mean = shape * scale.
    pub ltv_shape: f64,
    pub ltv_scale: f64,
    /// Model quality levels as logit-noise standard deviations (low sigma =
    /// high quality).
    pub quality_grid: Vec<f64>,
    /// Exploration temperatures; must contain 0 (the RUC baseline).
    pub tau_grid: Vec<f64>,
    /// Scale on the |p_hat - p| miscalibration term of the uncertainty width.
    pub u_scale: f64,
    /// Floor on the uncertainty width.
    pub u_floor: f64,
    /// Unsubscribe budget; when unset, `budget_multiplier` times the expected
    /// unsub of a greedy best-quality allocation, computed once per study.
    pub budget: Option<f64>,
    pub budget_multiplier: f64,
    pub runs_per_cell: usize,
    pub seed: u64,
    /// Overrides the scale-derived quadratic perturbation of the LP.
    pub gamma: Option<f64>,
    pub lp: SolveConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            users: 100,
            items: 20,
            conv_beta: (2.0, 18.0),
            conv_scale: 1e-2,
            unsub_beta: (1.0, 9.0),
            unsub_scale: 1e-1,
            ltv_shape: 2.0,
            ltv_scale: 150.0,
            quality_grid: vec![0.1, 0.3, 0.6, 1.0],
            tau_grid: vec![0.0, 0.5, 1.0, 2.0],
            u_scale: 1.0,
            u_floor: 1e-4,
            budget: None,
            budget_multiplier: 0.8,
            runs_per_cell: 30,
            seed: 0,
            gamma: None,
            lp: SolveConfig::default(),
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<(), AblationError> {
        let bad = |msg: String| Err(AblationError::InvalidConfig(msg));
        if self.users == 0 || self.items == 0 {
            return bad("users and items must be positive".into());
        }
        for (name, v) in [
            ("conv_beta.0", self.conv_beta.0),
            ("conv_beta.1", self.conv_beta.1),
            ("unsub_beta.0", self.unsub_beta.0),
            ("unsub_beta.1", self.unsub_beta.1),
            ("ltv_shape", self.ltv_shape),
            ("ltv_scale", self.ltv_scale),
            ("u_scale", self.u_scale),
            ("budget_multiplier", self.budget_multiplier),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return bad(format!("{name} must be finite and positive, got {v}"));
            }
        }
        for (name, v) in [("conv_scale", self.conv_scale), ("unsub_scale", self.unsub_scale)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {v}"));
            }
        }
        if !self.u_floor.is_finite() || self.u_floor < 0.0 {
            return bad(format!("u_floor must be finite and >= 0, got {}", self.u_floor));
        }
        if self.quality_grid.is_empty()
            || self.quality_grid.iter().any(|s| !s.is_finite() || *s < 0.0)
        {
            return bad("quality_grid must be non-empty with sigma >= 0".into());
        }
        if self.tau_grid.is_empty()
            || self.tau_grid.iter().any(|t| !t.is_finite() || *t < 0.0)
        {
            return bad("tau_grid must be non-empty with tau >= 0".into());
        }
        if !self.tau_grid.contains(&0.0) {
            return bad("tau_grid must contain 0 (the RUC baseline)".into());
        }
        if let Some(b) = self.budget {
            if !b.is_finite() || b <= 0.0 {
                return bad(format!("budget must be finite and positive, got {b}"));
            }
        }
        if self.runs_per_cell == 0 {
            return bad("runs_per_cell must be positive".into());
        }
        Ok(())
    }

    /// Index of the best quality level (smallest logit noise).
    pub fn best_quality_index(&self) -> usize {
        self.quality_grid
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("validated non-empty grid")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthTables {
    pub conv: Vec<Vec<f64>>,
    pub unsub: Vec<Vec<f64>>,
    pub ltv: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct PredictionTables {
    pub conv: Vec<Vec<f64>>,
    pub unsub: Vec<Vec<f64>>,
}

pub fn truth_stream(seed: u64) -> ChaCha8Rng {
    seeds::stream(seed, &[seeds::purpose::ABLATION_TRUTH])
}

/// Noise draws are keyed by (quality, run) only, so temperature cells at the
/// same run index see the same noisy predictions (paired comparison).
pub fn noise_stream(seed: u64, quality_index: usize, run: u64) -> ChaCha8Rng {
    seeds::stream(
        seed,
        &[seeds::purpose::ABLATION_NOISE, quality_index as u64, run],
    )
}

pub fn perturb_stream(seed: u64, quality_index: usize, tau_index: usize, run: u64) -> ChaCha8Rng {
    seeds::stream(
        seed,
        &[
            seeds::purpose::ABLATION_PERTURB,
            quality_index as u64,
            tau_index as u64,
            run,
        ],
    )
}

const PROB_EPS: f64 = 1e-12;

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// I.i.d. ground-truth tables from the three laws.
pub fn gen_ground_truth(config: &AblationConfig, rng: &mut ChaCha8Rng) -> TruthTables {
    let conv_law = Beta::new(config.conv_beta.0, config.conv_beta.1)
        .expect("validated Beta parameters");
    let unsub_law = Beta::new(config.unsub_beta.0, config.unsub_beta.1)
        .expect("validated Beta parameters");
    let ltv_law =
        Gamma::new(config.ltv_shape, config.ltv_scale).expect("validated Gamma parameters");
    let table = |rng: &mut ChaCha8Rng, f: &mut dyn FnMut(&mut ChaCha8Rng) -> f64| {
        (0..config.users)
            .map(|_| (0..config.items).map(|_| f(rng)).collect())
            .collect::<Vec<Vec<f64>>>()
    };
    let clamp = |p: f64| p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    TruthTables {
        conv: table(rng, &mut |r| clamp(conv_law.sample(r) * config.conv_scale)),
        unsub: table(rng, &mut |r| clamp(unsub_law.sample(r) * config.unsub_scale)),
        ltv: table(rng, &mut |r| ltv_law.sample(r)),
    }
}

/// Gaussian noise in logit space, per cell; sigma = 0 copies the truth
/// bit-exactly. LTV passes through untouched.
pub fn noisy_predictions(
    truth: &TruthTables,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> PredictionTables {
    let noisy_table = |table: &Vec<Vec<f64>>, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        table
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&p| {
                        if sigma == 0.0 {
                            p
                        } else {
                            let eps: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
                            expit(logit(p) + eps).clamp(PROB_EPS, 1.0 - PROB_EPS)
                        }
                    })
                    .collect()
            })
            .collect()
    };
    PredictionTables {
        conv: noisy_table(&truth.conv, rng),
        unsub: noisy_table(&truth.unsub, rng),
    }
}

/// One moment-matched Beta perturbation: width U = tau * u_scale * |p_hat -
/// p| + u_floor, clamped below sqrt(p_hat (1 - p_hat)) so the matched sample
/// size n = p_hat(1-p_hat)/U^2 - 1 stays positive; then p_tilde ~
/// Beta(p_hat n, (1-p_hat) n), whose mean is exactly p_hat and variance
/// exactly U^2 (before clamping).
pub fn perturb_cell(
    p_hat: f64,
    p_true: f64,
    tau: f64,
    u_scale: f64,
    u_floor: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut width = tau * u_scale * (p_hat - p_true).abs() + u_floor;
    if width == 0.0 {
        return p_hat;
    }
    let spread = p_hat * (1.0 - p_hat);
    let cap = (0.99 * spread).sqrt();
    if width > cap {
        width = cap;
    }
    let n = spread / (width * width) - 1.0;
    let law = Beta::new(p_hat * n, (1.0 - p_hat) * n).expect("positive Beta parameters");
    law.sample(rng).clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Perturb both probability tables of a prediction set.
pub fn perturb(
    predictions: &PredictionTables,
    truth: &TruthTables,
    tau: f64,
    u_scale: f64,
    u_floor: f64,
    rng: &mut ChaCha8Rng,
) -> PredictionTables {
    let run = |pred: &Vec<Vec<f64>>, tru: &Vec<Vec<f64>>, rng: &mut ChaCha8Rng| {
        pred.iter()
            .zip(tru)
            .map(|(prow, trow)| {
                prow.iter()
                    .zip(trow)
                    .map(|(&p_hat, &p)| perturb_cell(p_hat, p, tau, u_scale, u_floor, rng))
                    .collect()
            })
            .collect::<Vec<Vec<f64>>>()
    };
    PredictionTables {
        conv: run(&predictions.conv, &truth.conv, rng),
        unsub: run(&predictions.unsub, &truth.unsub, rng),
    }
}

/// Greedy best-quality allocation's expected unsub level, times the budget
/// multiplier: the default budget when none is configured.
pub fn default_budget(config: &AblationConfig, truth: &TruthTables) -> f64 {
    let best_q = config.best_quality_index();
    let sigma = config.quality_grid[best_q];
    let mut rng = noise_stream(config.seed, best_q, u64::MAX);
    let predictions = noisy_predictions(truth, sigma, &mut rng);
    let mut expected_unsub = 0.0;
    for u in 0..config.users {
        let best_item = (0..config.items)
            .max_by(|&a, &b| {
                let va = predictions.conv[u][a] * truth.ltv[u][a];
                let vb = predictions.conv[u][b] * truth.ltv[u][b];
                va.total_cmp(&vb).then(b.cmp(&a))
            })
            .expect("items > 0");
        expected_unsub += truth.unsub[u][best_item];
    }
    config.budget_multiplier * expected_unsub
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    /// Realized uplift against the truth tables.
    pub truth_reward: f64,
    /// Realized unsub level against the truth tables.
    pub truth_unsub: f64,
    /// Unsub level against the perturbed table the LP actually constrained.
    pub perturbed_unsub: f64,
    pub converged: bool,
    pub iterations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AblationCell {
    pub quality_index: usize,
    pub tau_index: usize,
    pub sigma: f64,
    pub tau: f64,
    pub budget: f64,
    pub runs: Vec<RunRecord>,
    /// Per-run fractional allocations, kept for the variance metric.
    pub allocations: Vec<Vec<Vec<f64>>>,
}

impl AblationCell {
    pub fn mean_truth_reward(&self) -> f64 {
        mean(self.runs.iter().map(|r| r.truth_reward))
    }

    pub fn mean_truth_unsub(&self) -> f64 {
        mean(self.runs.iter().map(|r| r.truth_unsub))
    }

    /// Mean over (user, item) cells of the across-run sample variance of x.
    pub fn allocation_variance(&self) -> f64 {
        let n = self.allocations.len();
        if n < 2 {
            return 0.0;
        }
        let users = self.allocations[0].len();
        let items = self.allocations[0][0].len();
        let mut total = 0.0;
        for u in 0..users {
            for i in 0..items {
                let vals: Vec<f64> = self.allocations.iter().map(|x| x[u][i]).collect();
                let m = mean(vals.iter().copied());
                let var =
                    vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n as f64 - 1.0);
                total += var;
            }
        }
        total / (users * items) as f64
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// All runs for one (quality, temperature) grid cell against a fixed truth.
pub fn run_cell(
    config: &AblationConfig,
    truth: &TruthTables,
    quality_index: usize,
    tau_index: usize,
    budget: f64,
) -> AblationCell {
    let sigma = config.quality_grid[quality_index];
    let tau = config.tau_grid[tau_index];
    let mut runs = Vec::with_capacity(config.runs_per_cell);
    let mut allocations = Vec::with_capacity(config.runs_per_cell);
    for s in 0..config.runs_per_cell {
        let mut noise_rng = noise_stream(config.seed, quality_index, s as u64);
        let predictions = noisy_predictions(truth, sigma, &mut noise_rng);
        let mut perturb_rng = perturb_stream(config.seed, quality_index, tau_index, s as u64);
        let explored = perturb(
            &predictions,
            truth,
            tau,
            config.u_scale,
            config.u_floor,
            &mut perturb_rng,
        );
        let problem = cell_problem(config, truth, &explored, budget);
        match lp::solve(&problem, &config.lp) {
            Ok(solution) => {
                let mut truth_reward = 0.0;
                let mut truth_unsub = 0.0;
                let mut perturbed_unsub = 0.0;
                for u in 0..config.users {
                    for i in 0..config.items {
                        let x = solution.x[u][i];
                        truth_reward += x * truth.conv[u][i] * truth.ltv[u][i];
                        truth_unsub += x * truth.unsub[u][i];
                        perturbed_unsub += x * explored.unsub[u][i];
                    }
                }
                runs.push(RunRecord {
                    run: s,
                    truth_reward,
                    truth_unsub,
                    perturbed_unsub,
                    converged: solution.converged,
                    iterations: solution.iterations,
                    error: None,
                });
                allocations.push(solution.x);
            }
            Err(e) => runs.push(RunRecord {
                run: s,
                truth_reward: 0.0,
                truth_unsub: 0.0,
                perturbed_unsub: 0.0,
                converged: false,
                iterations: 0,
                error: Some(e.to_string()),
            }),
        }
    }
    AblationCell {
        quality_index,
        tau_index,
        sigma,
        tau,
        budget,
        runs,
        allocations,
    }
}

/// The cell LP: maximize perturbed uplift under one perturbed unsub row and
/// one-item-per-user caps.
pub fn cell_problem(
    config: &AblationConfig,
    truth: &TruthTables,
    explored: &PredictionTables,
    budget: f64,
) -> AllocationProblem {
    let objective: Vec<Vec<f64>> = (0..config.users)
        .map(|u| {
            (0..config.items)
                .map(|i| -explored.conv[u][i] * truth.ltv[u][i])
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    if budget.is_finite() {
        let mut entries = Vec::with_capacity(config.users * config.items);
        for u in 0..config.users {
            for i in 0..config.items {
                entries.push((u, i, explored.unsub[u][i]));
            }
        }
        rows.push(GlobalRow {
            entries,
            bound: budget,
            label: "unsub-budget".into(),
        });
    }
    let max_abs = objective
        .iter()
        .flatten()
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    AllocationProblem {
        num_users: config.users,
        num_items: config.items,
        gamma: config
            .gamma
            .unwrap_or_else(|| AllocationProblem::default_gamma(max_abs)),
        objective,
        rows,
        user_caps: Some(UserCaps::uniform(config.users, config.items, 1.0)),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyMetrics {
    /// Percent change of mean truth-unsub versus the tau = 0 cell, per
    /// (quality, temperature).
    pub ruc: Vec<Vec<f64>>,
    /// Across-run allocation variance per (quality, temperature).
    pub av: Vec<Vec<f64>>,
    pub mean_reward: Vec<Vec<f64>>,
    pub mean_unsub: Vec<Vec<f64>>,
}

/// Aggregate cells (indexed [quality][tau]) into the study tables.
pub fn metrics(
    cells: &[Vec<AblationCell>],
    tau_grid: &[f64],
) -> Result<StudyMetrics, AblationError> {
    let baseline_tau = tau_grid
        .iter()
        .position(|&t| t == 0.0)
        .expect("validated grid contains 0");
    let mut ruc = Vec::new();
    let mut av = Vec::new();
    let mut mean_reward = Vec::new();
    let mut mean_unsub = Vec::new();
    for (q, row) in cells.iter().enumerate() {
        let base = row[baseline_tau].mean_truth_unsub();
        if base == 0.0 {
            return Err(AblationError::DivisionByZero { quality_index: q });
        }
        ruc.push(
            row.iter()
                .map(|cell| (cell.mean_truth_unsub() - base) / base * 100.0)
                .collect(),
        );
        av.push(row.iter().map(|c| c.allocation_variance()).collect());
        mean_reward.push(row.iter().map(|c| c.mean_truth_reward()).collect());
        mean_unsub.push(row.iter().map(|c| c.mean_truth_unsub()).collect());
    }
    Ok(StudyMetrics {
        ruc,
        av,
        mean_reward,
        mean_unsub,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyResult {
    pub config: AblationConfig,
    pub budget: f64,
    #[serde(skip)]
    pub cells: Vec<Vec<AblationCell>>,
    pub metrics: StudyMetrics,
}

/// Run the full (quality x temperature) grid against one fixed truth.
pub fn run_study(config: &AblationConfig) -> Result<StudyResult, AblationError> {
    config.validate()?;
    let truth = gen_ground_truth(config, &mut truth_stream(config.seed));
    let budget = config.budget.unwrap_or_else(|| default_budget(config, &truth));
    let grid: Vec<(usize, usize)> = (0..config.quality_grid.len())
        .flat_map(|q| (0..config.tau_grid.len()).map(move |t| (q, t)))
        .collect();
    let mut flat: Vec<AblationCell> = grid
        .par_iter()
        .map(|&(q, t)| run_cell(config, &truth, q, t, budget))
        .collect();
    let mut cells: Vec<Vec<AblationCell>> = Vec::with_capacity(config.quality_grid.len());
    for _ in 0..config.quality_grid.len() {
        let rest = flat.split_off(config.tau_grid.len());
        cells.push(flat);
        flat = rest;
    }
    let metrics = metrics(&cells, &config.tau_grid)?;
    Ok(StudyResult {
        config: config.clone(),
        budget,
        cells,
        metrics,
    })
}
