//! Allocation policies.
//!
//! Five agents share one interface: the constrained Thompson sampler
//! (posterior draws for rewards and costs feeding the perturbed LP), an
//! unconstrained neural Thompson sampler (per-user top-cap by drawn reward),
//! a LinUCB variant that plugs optimistic linear estimates into the same LP,
//! a pure exploit policy (posterior means into the LP, no sampling), and a
//! uniform random baseline. Each policy owns its feedback log; an update only
//! accepts decisions stamped with the policy's own index.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayes::{
    fit_laplace, train_map_warm, BayesError, Head, LaplaceState, Mlp, MlpSpec, TrainSchedule,
};
use crate::calibration::{fit_isotonic, CalibrationError, IsotonicModel};
use crate::env::{ConstraintTargets, EnvironmentRound, LoggedInteraction};
use crate::linalg::{dot, matvec};
use crate::lp::{self, AllocationProblem, GlobalRow, LpError, SolveConfig, UserCaps};
use crate::seeds;

/// Parallelize per-user estimate computation above this round size.
const PAR_USERS: usize = 32;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("decision from policy {decision} was offered to policy {policy}")]
    ForeignFeedback { decision: usize, policy: usize },
    #[error("invalid policy spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Solver(#[from] LpError),
    #[error(transparent)]
    Bayes(#[from] BayesError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Banditlp,
    Nnts,
    LinucbLp,
    NnLp,
    Random,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Banditlp => "banditlp",
            PolicyKind::Nnts => "nnts",
            PolicyKind::LinucbLp => "linucb_lp",
            PolicyKind::NnLp => "nn_lp",
            PolicyKind::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    /// Thompson temperature for the reward head.
    pub tau: f64,
    /// Thompson temperature for the cost heads; falls back to `tau`.
    pub cost_tau: Option<f64>,
    /// LinUCB exploration width.
    pub alpha: f64,
    /// LinUCB ridge regularizer.
    pub ridge: f64,
    pub hidden_layer_sizes: Vec<usize>,
    pub prior_variance: f64,
    pub noise_variance: f64,
    /// Isotonic-calibrate binary reward scores after each refit.
    pub calibrate: bool,
    pub epochs_init: usize,
    pub epochs_update: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lp: SolveConfig,
    /// Overrides the scale-derived quadratic perturbation when set.
    pub gamma: Option<f64>,
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec {
            kind: PolicyKind::Banditlp,
            tau: 1.0,
            cost_tau: None,
            alpha: 1.0,
            ridge: 1.0,
            hidden_layer_sizes: vec![32, 32],
            prior_variance: 1.0,
            noise_variance: 0.1,
            calibrate: true,
            epochs_init: 200,
            epochs_update: 50,
            batch_size: 32,
            learning_rate: 0.05,
            lp: SolveConfig::default(),
            gamma: None,
        }
    }
}

impl PolicySpec {
    pub fn cost_tau(&self) -> f64 {
        self.cost_tau.unwrap_or(self.tau)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |msg: String| Err(PolicyError::InvalidSpec(msg));
        if !self.tau.is_finite() || self.tau < 0.0 {
            return bad(format!("tau must be finite and >= 0, got {}", self.tau));
        }
        if let Some(ct) = self.cost_tau {
            if !ct.is_finite() || ct < 0.0 {
                return bad(format!("cost_tau must be finite and >= 0, got {ct}"));
            }
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if !self.ridge.is_finite() || self.ridge <= 0.0 {
            return bad(format!("ridge must be finite and > 0, got {}", self.ridge));
        }
        for (name, v) in [
            ("prior_variance", self.prior_variance),
            ("noise_variance", self.noise_variance),
            ("learning_rate", self.learning_rate),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return bad(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if let Some(g) = self.gamma {
            if !g.is_finite() || g <= 0.0 {
                return bad(format!("gamma must be finite and > 0, got {g}"));
            }
        }
        Ok(())
    }
}

/// Realized feedback for one chosen (user, item) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackItem {
    pub context: Vec<f64>,
    pub reward: f64,
    pub cost1: f64,
    pub cost2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpSummary {
    pub converged: bool,
    pub iterations: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub max_row_violation: f64,
}

/// A policy's output for one round: the fractional allocation (when an LP
/// ran), the realized per-user item sets, and the estimates that drove them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundDecision {
    pub policy_index: usize,
    pub round: usize,
    pub x: Option<Vec<Vec<f64>>>,
    pub actions: Vec<Vec<usize>>,
    pub reward_estimates: Vec<Vec<f64>>,
    pub cost1_estimates: Option<Vec<Vec<f64>>>,
    pub cost2_estimates: Option<Vec<Vec<f64>>>,
    pub lp: Option<LpSummary>,
}

struct NeuralState {
    reward: LaplaceState,
    cost1: Option<LaplaceState>,
    cost2: Option<LaplaceState>,
    calibrator: Option<IsotonicModel>,
}

struct LinearState {
    a_inv: Vec<Vec<f64>>,
    b_reward: Vec<f64>,
    b_cost1: Vec<f64>,
    b_cost2: Vec<f64>,
}

enum State {
    Neural(NeuralState),
    Linear(LinearState),
    Random,
}

mod head_tag {
    pub const REWARD: u64 = 0;
    pub const COST1: u64 = 1;
    pub const COST2: u64 = 2;
}

pub struct Policy {
    pub spec: PolicySpec,
    pub index: usize,
    seed: u64,
    context_dim: usize,
    reward_head: Head,
    user_cap: usize,
    state: State,
    log: Vec<FeedbackItem>,
}

impl Policy {
    pub fn new(
        spec: PolicySpec,
        index: usize,
        seed: u64,
        context_dim: usize,
        reward_head: Head,
        user_cap: usize,
    ) -> Result<Self, PolicyError> {
        spec.validate()?;
        if context_dim == 0 || user_cap == 0 {
            return Err(PolicyError::InvalidSpec(
                "context_dim and user_cap must be positive".into(),
            ));
        }
        let mlp_spec = |head: Head| MlpSpec {
            input_dim: context_dim,
            hidden_layer_sizes: spec.hidden_layer_sizes.clone(),
            activation: crate::bayes::Activation::Tanh,
            head,
            prior_variance: spec.prior_variance,
            noise_variance: spec.noise_variance,
            output_bias: true,
        };
        let prior_state = |head: Head, tag: u64, tau: f64| -> Result<LaplaceState, PolicyError> {
            let model = Mlp::init(mlp_spec(head), seeds::derive(seed, &[tag]))?;
            Ok(fit_laplace(&model, &[], tau)?)
        };
        let state = match spec.kind {
            PolicyKind::Banditlp | PolicyKind::NnLp => State::Neural(NeuralState {
                reward: prior_state(reward_head, head_tag::REWARD, spec.tau)?,
                cost1: Some(prior_state(Head::Gaussian, head_tag::COST1, spec.cost_tau())?),
                cost2: Some(prior_state(Head::Gaussian, head_tag::COST2, spec.cost_tau())?),
                calibrator: None,
            }),
            PolicyKind::Nnts => State::Neural(NeuralState {
                reward: prior_state(reward_head, head_tag::REWARD, spec.tau)?,
                cost1: None,
                cost2: None,
                calibrator: None,
            }),
            PolicyKind::LinucbLp => State::Linear(LinearState {
                a_inv: identity_scaled(context_dim, 1.0 / spec.ridge),
                b_reward: vec![0.0; context_dim],
                b_cost1: vec![0.0; context_dim],
                b_cost2: vec![0.0; context_dim],
            }),
            PolicyKind::Random => State::Random,
        };
        Ok(Policy {
            spec,
            index,
            seed,
            context_dim,
            reward_head,
            user_cap,
            state,
            log: Vec::new(),
        })
    }

    pub fn kind(&self) -> PolicyKind {
        self.spec.kind
    }

    pub fn log_len(&self) -> usize {
        self.log.len()
    }

    /// Joint context width this policy was built for; rounds fed to it must
    /// produce contexts of exactly this length.
    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn reward_posterior(&self) -> Option<&LaplaceState> {
        match &self.state {
            State::Neural(ns) => Some(&ns.reward),
            _ => None,
        }
    }

    pub fn calibrator(&self) -> Option<&IsotonicModel> {
        match &self.state {
            State::Neural(ns) => ns.calibrator.as_ref(),
            _ => None,
        }
    }

    /// Train on the biased logging pool before the first round.
    pub fn initialize(&mut self, log: &[LoggedInteraction]) -> Result<(), PolicyError> {
        let items: Vec<FeedbackItem> = log
            .iter()
            .map(|r| FeedbackItem {
                context: r.context.clone(),
                reward: r.reward,
                cost1: r.cost1,
                cost2: r.cost2,
            })
            .collect();
        self.ingest(&items, self.spec.epochs_init, 0)
    }

    /// Fold in the policy's own realized feedback for a finished round.
    pub fn update(
        &mut self,
        decision: &RoundDecision,
        round: &EnvironmentRound,
    ) -> Result<(), PolicyError> {
        if decision.policy_index != self.index {
            return Err(PolicyError::ForeignFeedback {
                decision: decision.policy_index,
                policy: self.index,
            });
        }
        let items = collect_feedback(decision, round);
        self.ingest(&items, self.spec.epochs_update, decision.round as u64 + 1)
    }

    fn ingest(
        &mut self,
        items: &[FeedbackItem],
        epochs: usize,
        round_tag: u64,
    ) -> Result<(), PolicyError> {
        if items.is_empty() {
            return Ok(());
        }
        self.log.extend_from_slice(items);
        match &mut self.state {
            State::Random => Ok(()),
            State::Linear(ls) => {
                for item in items {
                    rank_one_update(&mut ls.a_inv, &item.context);
                    for (b, y) in [
                        (&mut ls.b_reward, item.reward),
                        (&mut ls.b_cost1, item.cost1),
                        (&mut ls.b_cost2, item.cost2),
                    ] {
                        for (bj, zj) in b.iter_mut().zip(&item.context) {
                            *bj += zj * y;
                        }
                    }
                }
                Ok(())
            }
            State::Neural(_) => self.retrain_neural(epochs, round_tag),
        }
    }

    /// Warm-start retrain of every head on the pooled log, then refit the
    /// Laplace posterior and (binary rewards only) the isotonic calibrator.
    fn retrain_neural(&mut self, epochs: usize, round_tag: u64) -> Result<(), PolicyError> {
        let State::Neural(ns) = &mut self.state else {
            return Ok(());
        };
        let spec = &self.spec;
        let refit = |state: &LaplaceState,
                     data: &[(Vec<f64>, f64)],
                     head: u64,
                     tau: f64|
         -> Result<LaplaceState, PolicyError> {
            let schedule = TrainSchedule {
                epochs,
                batch_size: spec.batch_size,
                learning_rate: spec.learning_rate,
                seed: seeds::derive(
                    self.seed,
                    &[seeds::purpose::POLICY_TRAIN, round_tag, head],
                ),
            };
            let (model, _) = train_map_warm(state.model.clone(), data, &schedule)?;
            Ok(fit_laplace(&model, data, tau)?)
        };
        let reward_data: Vec<(Vec<f64>, f64)> = self
            .log
            .iter()
            .map(|f| (f.context.clone(), f.reward))
            .collect();
        ns.reward = refit(&ns.reward, &reward_data, head_tag::REWARD, spec.tau)?;
        if let Some(c1) = &ns.cost1 {
            let data: Vec<(Vec<f64>, f64)> =
                self.log.iter().map(|f| (f.context.clone(), f.cost1)).collect();
            ns.cost1 = Some(refit(c1, &data, head_tag::COST1, spec.cost_tau())?);
        }
        if let Some(c2) = &ns.cost2 {
            let data: Vec<(Vec<f64>, f64)> =
                self.log.iter().map(|f| (f.context.clone(), f.cost2)).collect();
            ns.cost2 = Some(refit(c2, &data, head_tag::COST2, spec.cost_tau())?);
        }
        ns.calibrator = if spec.calibrate && self.reward_head == Head::Binary {
            let scores: Vec<f64> = self
                .log
                .iter()
                .map(|f| ns.reward.predict_mean(&f.context))
                .collect();
            let labels: Vec<f64> = self.log.iter().map(|f| f.reward).collect();
            Some(fit_isotonic(&scores, &labels)?)
        } else {
            None
        };
        Ok(())
    }

    pub fn select(
        &self,
        round: &EnvironmentRound,
        targets: &ConstraintTargets,
    ) -> Result<RoundDecision, PolicyError> {
        match (&self.state, self.spec.kind) {
            (State::Random, _) => Ok(self.random_select(round)),
            (State::Linear(ls), _) => self.linucb_lp_select(ls, round, targets),
            (State::Neural(ns), PolicyKind::Nnts) => self.nnts_select(ns, round),
            (State::Neural(ns), PolicyKind::NnLp) => {
                self.neural_lp_select(ns, round, targets, false)
            }
            (State::Neural(ns), _) => self.neural_lp_select(ns, round, targets, true),
        }
    }

    /// Thompson draws (or exploit means) for one head over the whole round,
    /// deterministic per (round, head, user) substream regardless of
    /// scheduling.
    fn head_estimates(
        &self,
        state: &LaplaceState,
        round: &EnvironmentRound,
        head: u64,
        thompson: bool,
    ) -> Vec<Vec<f64>> {
        let row = |u: usize| -> Vec<f64> {
            let n_i = round.num_items();
            let mut rng = seeds::stream(
                self.seed,
                &[seeds::purpose::POLICY_SAMPLE, round.round as u64, head, u as u64],
            );
            (0..n_i)
                .map(|i| {
                    let z = round.joint_context(u, i);
                    if thompson {
                        state.predictive_sample(&z, &mut rng).output
                    } else {
                        state.predict_mean(&z)
                    }
                })
                .collect()
        };
        let n_u = round.num_round_users();
        if n_u >= PAR_USERS {
            (0..n_u).into_par_iter().map(row).collect()
        } else {
            (0..n_u).map(row).collect()
        }
    }

    fn apply_calibrator(&self, ns: &NeuralState, estimates: &mut [Vec<f64>]) {
        if let Some(cal) = &ns.calibrator {
            for row in estimates.iter_mut() {
                for v in row.iter_mut() {
                    *v = cal.apply(*v);
                }
            }
        }
    }

    fn neural_lp_select(
        &self,
        ns: &NeuralState,
        round: &EnvironmentRound,
        targets: &ConstraintTargets,
        thompson: bool,
    ) -> Result<RoundDecision, PolicyError> {
        let mut rewards =
            self.head_estimates(&ns.reward, round, head_tag::REWARD, thompson);
        self.apply_calibrator(ns, &mut rewards);
        let cost1 = ns
            .cost1
            .as_ref()
            .map(|s| self.head_estimates(s, round, head_tag::COST1, thompson))
            .unwrap_or_else(|| zeros_like(round));
        let cost2 = ns
            .cost2
            .as_ref()
            .map(|s| self.head_estimates(s, round, head_tag::COST2, thompson))
            .unwrap_or_else(|| zeros_like(round));
        self.solve_and_realize(round, targets, rewards, cost1, cost2)
    }

    fn linucb_lp_select(
        &self,
        ls: &LinearState,
        round: &EnvironmentRound,
        targets: &ConstraintTargets,
    ) -> Result<RoundDecision, PolicyError> {
        let theta_r = matvec(&ls.a_inv, &ls.b_reward);
        let theta_c1 = matvec(&ls.a_inv, &ls.b_cost1);
        let theta_c2 = matvec(&ls.a_inv, &ls.b_cost2);
        let n_u = round.num_round_users();
        let n_i = round.num_items();
        let mut rewards = vec![vec![0.0; n_i]; n_u];
        let mut cost1 = vec![vec![0.0; n_i]; n_u];
        let mut cost2 = vec![vec![0.0; n_i]; n_u];
        for u in 0..n_u {
            for i in 0..n_i {
                let z = round.joint_context(u, i);
                let bonus = dot(&z, &matvec(&ls.a_inv, &z)).max(0.0).sqrt();
                rewards[u][i] = dot(&theta_r, &z) + self.spec.alpha * bonus;
                cost1[u][i] = dot(&theta_c1, &z);
                cost2[u][i] = dot(&theta_c2, &z);
            }
        }
        self.solve_and_realize(round, targets, rewards, cost1, cost2)
    }

    fn nnts_select(
        &self,
        ns: &NeuralState,
        round: &EnvironmentRound,
    ) -> Result<RoundDecision, PolicyError> {
        let mut rewards = self.head_estimates(&ns.reward, round, head_tag::REWARD, true);
        self.apply_calibrator(ns, &mut rewards);
        let actions: Vec<Vec<usize>> = rewards
            .iter()
            .map(|row| {
                let mut top = crate::exploration::top_k_indices(
                    row,
                    self.user_cap.min(row.len()),
                );
                top.sort_unstable();
                top
            })
            .collect();
        Ok(RoundDecision {
            policy_index: self.index,
            round: round.round,
            x: None,
            actions,
            reward_estimates: rewards,
            cost1_estimates: None,
            cost2_estimates: None,
            lp: None,
        })
    }

    fn random_select(&self, round: &EnvironmentRound) -> RoundDecision {
        let n_i = round.num_items();
        let take = self.user_cap.min(n_i);
        let actions: Vec<Vec<usize>> = (0..round.num_round_users())
            .map(|u| {
                let mut rng = seeds::stream(
                    self.seed,
                    &[seeds::purpose::REALIZATION, round.round as u64, u as u64],
                );
                let mut picks: Vec<usize> =
                    rand::seq::index::sample(&mut rng, n_i, take).into_vec();
                picks.sort_unstable();
                picks
            })
            .collect();
        RoundDecision {
            policy_index: self.index,
            round: round.round,
            x: None,
            actions,
            reward_estimates: zeros_like(round),
            cost1_estimates: None,
            cost2_estimates: None,
            lp: None,
        }
    }

    /// Assemble the constrained problem from the estimates, solve it, and
    /// realize per-user actions from the fractional allocation.
    fn solve_and_realize(
        &self,
        round: &EnvironmentRound,
        targets: &ConstraintTargets,
        rewards: Vec<Vec<f64>>,
        cost1: Vec<Vec<f64>>,
        cost2: Vec<Vec<f64>>,
    ) -> Result<RoundDecision, PolicyError> {
        let problem = assemble_problem(
            &rewards,
            &cost1,
            &cost2,
            targets,
            &round.provider_of,
            self.user_cap,
            self.spec.gamma,
        )?;
        let solution = lp::solve(&problem, &self.spec.lp)?;
        let actions = self.realize(&solution.x, round.round);
        Ok(RoundDecision {
            policy_index: self.index,
            round: round.round,
            actions,
            lp: Some(LpSummary {
                converged: solution.converged,
                iterations: solution.iterations,
                primal_objective: solution.primal_objective,
                dual_objective: solution.dual_objective,
                max_row_violation: solution.max_row_violation,
            }),
            x: Some(solution.x),
            reward_estimates: rewards,
            cost1_estimates: Some(cost1),
            cost2_estimates: Some(cost2),
        })
    }

    /// Independent Bernoulli(x) thinning; above-cap overflow keeps the
    /// cap-many largest x (ties toward the lower index).
    fn realize(&self, x: &[Vec<f64>], round: usize) -> Vec<Vec<usize>> {
        x.iter()
            .enumerate()
            .map(|(u, row)| {
                let mut rng = seeds::stream(
                    self.seed,
                    &[seeds::purpose::REALIZATION, round as u64, u as u64],
                );
                let mut chosen: Vec<usize> = Vec::new();
                for (i, &xi) in row.iter().enumerate() {
                    let draw: f64 = rng.random();
                    if draw < xi {
                        chosen.push(i);
                    }
                }
                if chosen.len() > self.user_cap {
                    chosen.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
                    chosen.truncate(self.user_cap);
                    chosen.sort_unstable();
                }
                chosen
            })
            .collect()
    }
}

/// Realized feedback for the pairs a decision actually chose.
pub fn collect_feedback(
    decision: &RoundDecision,
    round: &EnvironmentRound,
) -> Vec<FeedbackItem> {
    let mut items = Vec::new();
    for (u, actions) in decision.actions.iter().enumerate() {
        for &i in actions {
            items.push(FeedbackItem {
                context: round.joint_context(u, i),
                reward: round.rewards[u][i],
                cost1: round.cost1[u][i],
                cost2: round.cost2[u][i],
            });
        }
    }
    items
}

/// Build the per-round allocation problem: objective −r̂, a global row of
/// estimated level-1 costs, per-provider rows of estimated level-2 costs,
/// negated minimum-send rows, and unit-weight user caps.
pub fn assemble_problem(
    rewards: &[Vec<f64>],
    cost1: &[Vec<f64>],
    cost2: &[Vec<f64>],
    targets: &ConstraintTargets,
    provider_of: &[usize],
    user_cap: usize,
    gamma_override: Option<f64>,
) -> Result<AllocationProblem, PolicyError> {
    let n_u = rewards.len();
    let n_i = provider_of.len();
    let objective: Vec<Vec<f64>> =
        rewards.iter().map(|row| row.iter().map(|r| -r).collect()).collect();
    let mut rows = Vec::new();
    if targets.global.is_finite() {
        let mut entries = Vec::with_capacity(n_u * n_i);
        for u in 0..n_u {
            for i in 0..n_i {
                entries.push((u, i, cost1[u][i]));
            }
        }
        rows.push(GlobalRow {
            entries,
            bound: targets.global,
            label: "global-cost".into(),
        });
    }
    for (l, &bound) in targets.per_provider_max.iter().enumerate() {
        if !bound.is_finite() {
            continue;
        }
        let mut entries = Vec::new();
        for u in 0..n_u {
            for i in 0..n_i {
                if provider_of[i] == l {
                    entries.push((u, i, cost2[u][i]));
                }
            }
        }
        rows.push(GlobalRow {
            entries,
            bound,
            label: format!("provider-max-{l}"),
        });
    }
    for (l, &floor) in targets.per_provider_min_send.iter().enumerate() {
        if !(floor > 0.0) {
            continue;
        }
        let mut entries = Vec::new();
        for u in 0..n_u {
            for i in 0..n_i {
                if provider_of[i] == l {
                    entries.push((u, i, -1.0));
                }
            }
        }
        rows.push(GlobalRow {
            entries,
            bound: -floor,
            label: format!("provider-min-send-{l}"),
        });
    }
    let max_abs = objective
        .iter()
        .flatten()
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    let problem = AllocationProblem {
        num_users: n_u,
        num_items: n_i,
        gamma: gamma_override.unwrap_or_else(|| AllocationProblem::default_gamma(max_abs)),
        objective,
        rows,
        user_caps: Some(UserCaps::uniform(n_u, n_i, user_cap as f64)),
    };
    problem.validate()?;
    Ok(problem)
}

fn zeros_like(round: &EnvironmentRound) -> Vec<Vec<f64>> {
    vec![vec![0.0; round.num_items()]; round.num_round_users()]
}

fn identity_scaled(n: usize, scale: f64) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = scale;
    }
    m
}

/// Sherman-Morrison downdate of an inverse after adding z z' to the matrix.
fn rank_one_update(a_inv: &mut [Vec<f64>], z: &[f64]) {
    let az = matvec(a_inv, z);
    let denom = 1.0 + dot(z, &az);
    let n = az.len();
    for r in 0..n {
        for c in 0..n {
            a_inv[r][c] -= az[r] * az[c] / denom;
        }
    }
}
