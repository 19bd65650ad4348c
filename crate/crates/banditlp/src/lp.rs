//! Per-round allocation solver.
//!
//! Solves min c'x + (gamma/2)||x||^2 over x in [0,1]^{U x I}, subject to
//! global linear rows Dx <= b and per-user capped blocks sum_i w_{u,i} x_{u,i}
//! <= kappa_u. The sign convention is minimization: reward-maximizing callers
//! negate their reward estimates before building a problem.
//!
//! Only the global rows are dualized. For a fixed multiplier vector the
//! Lagrangian splits across users, and each user block has a closed-form
//! clipped solution (plus a scalar bisection when the cap binds), so the inner
//! minimization is an embarrassingly parallel map. The outer loop is projected
//! ascent on the concave dual with a backtracking step size that halves
//! whenever the dual objective fails to increase.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Parallelize the per-user inner map only past this many users; below it the
/// rayon dispatch overhead dominates.
const PAR_USERS: usize = 64;

/// Bisection tolerance for a user block: |sum w x - kappa| <= BLOCK_TOL * max(1, kappa).
/// Must sit near machine precision: the dual ascent compares dual values whose
/// true per-step differences can be ~1e-12, so a looser block band turns the
/// dual into a sawtooth the outer loop cannot climb.
const BLOCK_TOL: f64 = 1e-14;

/// Fraction of the first-order prediction an accepted dual step must realize.
const ARMIJO_FRACTION: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error(
        "infeasibility suspected: |lambda|_inf reached {lambda_norm:.3e} while the max row violation stalled at {violation:.3e}"
    )]
    InfeasibleSuspected { lambda_norm: f64, violation: f64 },
}

/// One global constraint row: sparse coefficients over (user, item) pairs and
/// an upper bound. A minimum-send constraint sum x >= C is expressed with
/// coefficients -1 and bound -C. A row with bound +infinity never binds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalRow {
    pub entries: Vec<(usize, usize, f64)>,
    pub bound: f64,
    #[serde(default)]
    pub label: String,
}

impl GlobalRow {
    pub fn new(entries: Vec<(usize, usize, f64)>, bound: f64, label: impl Into<String>) -> Self {
        Self {
            entries,
            bound,
            label: label.into(),
        }
    }

    /// D_m x for this row.
    pub fn apply(&self, x: &[Vec<f64>]) -> f64 {
        self.entries
            .iter()
            .map(|&(u, i, coef)| coef * x[u][i])
            .sum()
    }
}

/// Per-user cap structure: weights w[u][i] >= 0 and caps kappa[u], enforcing
/// sum_i w[u][i] x[u][i] <= kappa[u]. Absent caps mean plain box constraints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserCaps {
    pub weights: Vec<Vec<f64>>,
    pub kappa: Vec<f64>,
}

impl UserCaps {
    /// Unit weights with a uniform integer-style cap, the common case where a
    /// user may receive at most `cap` items in expectation.
    pub fn uniform(num_users: usize, num_items: usize, cap: f64) -> Self {
        Self {
            weights: vec![vec![1.0; num_items]; num_users],
            kappa: vec![cap; num_users],
        }
    }
}

/// A canonical allocation instance. `objective` is dense row-major c[u][i],
/// already in minimization sign convention.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationProblem {
    pub num_users: usize,
    pub num_items: usize,
    pub gamma: f64,
    pub objective: Vec<Vec<f64>>,
    #[serde(default)]
    pub rows: Vec<GlobalRow>,
    #[serde(default)]
    pub user_caps: Option<UserCaps>,
}

impl AllocationProblem {
    /// Default regularization strength relative to the objective scale.
    pub fn default_gamma(max_abs_coeff: f64) -> f64 {
        1e-3 * max_abs_coeff.max(1e-6)
    }

    pub fn validate(&self) -> Result<(), LpError> {
        if self.num_users == 0 || self.num_items == 0 {
            return Err(LpError::InvalidProblem(
                "num_users and num_items must be positive".into(),
            ));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(LpError::InvalidProblem(format!(
                "gamma must be positive and finite, got {}",
                self.gamma
            )));
        }
        if self.objective.len() != self.num_users {
            return Err(LpError::InvalidProblem(format!(
                "objective has {} rows, expected {}",
                self.objective.len(),
                self.num_users
            )));
        }
        for (u, row) in self.objective.iter().enumerate() {
            if row.len() != self.num_items {
                return Err(LpError::InvalidProblem(format!(
                    "objective row {u} has {} entries, expected {}",
                    row.len(),
                    self.num_items
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(LpError::InvalidProblem(format!(
                    "objective row {u} contains a non-finite coefficient"
                )));
            }
        }
        for (m, row) in self.rows.iter().enumerate() {
            if row.bound.is_nan() || row.bound == f64::NEG_INFINITY {
                return Err(LpError::InvalidProblem(format!(
                    "row {m} has unusable bound {}",
                    row.bound
                )));
            }
            for &(u, i, coef) in &row.entries {
                if u >= self.num_users || i >= self.num_items {
                    return Err(LpError::InvalidProblem(format!(
                        "row {m} references out-of-range pair ({u},{i})"
                    )));
                }
                if !coef.is_finite() {
                    return Err(LpError::InvalidProblem(format!(
                        "row {m} has a non-finite coefficient at ({u},{i})"
                    )));
                }
            }
        }
        if let Some(caps) = &self.user_caps {
            if caps.weights.len() != self.num_users || caps.kappa.len() != self.num_users {
                return Err(LpError::InvalidProblem(
                    "user_caps dimensions do not match num_users".into(),
                ));
            }
            for (u, w) in caps.weights.iter().enumerate() {
                if w.len() != self.num_items {
                    return Err(LpError::InvalidProblem(format!(
                        "user_caps weights row {u} has {} entries, expected {}",
                        w.len(),
                        self.num_items
                    )));
                }
                if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(LpError::InvalidProblem(format!(
                        "user_caps weights row {u} must be finite and nonnegative"
                    )));
                }
            }
            for (u, k) in caps.kappa.iter().enumerate() {
                if k.is_nan() || *k < 0.0 {
                    return Err(LpError::InvalidProblem(format!(
                        "kappa[{u}] must be nonnegative, got {k}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The QP objective c'x + (gamma/2)||x||^2.
    pub fn primal_objective(&self, x: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        for (cu, xu) in self.objective.iter().zip(x) {
            for (c, v) in cu.iter().zip(xu) {
                total += c * v + 0.5 * self.gamma * v * v;
            }
        }
        total
    }

    /// The plain LP part c'x without the quadratic term.
    pub fn linear_objective(&self, x: &[Vec<f64>]) -> f64 {
        self.objective
            .iter()
            .zip(x)
            .map(|(cu, xu)| crate::linalg::dot(cu, xu))
            .sum()
    }

    fn block_weights(&self, u: usize) -> Option<(&[f64], f64)> {
        self.user_caps
            .as_ref()
            .map(|caps| (caps.weights[u].as_slice(), caps.kappa[u]))
    }
}

/// Multiplier state for the dualized global rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: Vec<f64>,
    pub step_size: f64,
    pub iteration: usize,
}

impl DualState {
    pub fn new(num_rows: usize, step_size: f64) -> Self {
        Self {
            lambda: vec![0.0; num_rows],
            step_size,
            iteration: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    pub x: Vec<Vec<f64>>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub max_row_violation: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final multipliers, one per global row; certification recomputes the
    /// dual bound from these without trusting any other solver output.
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub max_iters: usize,
    pub eps_feas: f64,
    pub eps_gap: f64,
    /// Ceiling on |lambda|_inf; exceeding it while the violation stalls is
    /// reported as suspected infeasibility rather than silently relaxed.
    pub lambda_ceiling: f64,
    /// Overrides the 1/||D||_F^2 initial step estimate when set.
    pub initial_step: Option<f64>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            eps_feas: 1e-6,
            eps_gap: 1e-4,
            lambda_ceiling: 1e8,
            initial_step: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub feasible: bool,
    pub rel_gap: f64,
    pub max_row_violation: f64,
    pub max_cap_violation: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
}

/// Objective coefficients adjusted by the dualized rows: a = c + D'lambda.
fn adjusted_costs(problem: &AllocationProblem, lambda: &[f64]) -> Vec<Vec<f64>> {
    let mut a = problem.objective.clone();
    for (row, &lm) in problem.rows.iter().zip(lambda) {
        if lm != 0.0 {
            for &(u, i, coef) in &row.entries {
                a[u][i] += coef * lm;
            }
        }
    }
    a
}

/// Weighted sum of the block solution at multiplier mu (used during bisection).
fn block_at(a: &[f64], w: &[f64], gamma: f64, mu: f64) -> Vec<f64> {
    a.iter()
        .zip(w)
        .map(|(&ai, &wi)| (-(ai + mu * wi) / gamma).clamp(0.0, 1.0))
        .collect()
}

fn weighted_sum(w: &[f64], x: &[f64]) -> f64 {
    crate::linalg::dot(w, x)
}

/// Exact minimizer of a'x + (gamma/2)||x||^2 over the capped box of one user.
fn minimize_block(a: &[f64], caps: Option<(&[f64], f64)>, gamma: f64) -> Vec<f64> {
    let y: Vec<f64> = a.iter().map(|&ai| (-ai / gamma).clamp(0.0, 1.0)).collect();
    let (w, kappa) = match caps {
        None => return y,
        Some(pair) => pair,
    };
    if weighted_sum(w, &y) <= kappa {
        return y;
    }
    let tol = BLOCK_TOL * kappa.max(1.0);
    // sum w x(mu) is continuous and nonincreasing in mu, above kappa at mu=0.
    // Find an upper bracket by doubling, then bisect to the cap.
    let mut hi = 1.0;
    for _ in 0..200 {
        if weighted_sum(w, &block_at(a, w, gamma, hi)) <= kappa {
            break;
        }
        hi *= 2.0;
    }
    let mut lo = 0.0;
    let mut best = block_at(a, w, gamma, hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let x = block_at(a, w, gamma, mid);
        let s = weighted_sum(w, &x);
        if (s - kappa).abs() <= tol {
            return x;
        }
        if s > kappa {
            lo = mid;
        } else {
            hi = mid;
            best = x;
        }
    }
    // Bisection exhausted without hitting the tolerance band (possible only in
    // pathological scalings); return the last cap-feasible iterate.
    best
}

/// Blockwise minimizer of the partial Lagrangian at fixed multipliers.
///
/// Each user's subproblem is solved independently; the parallel and the
/// sequential paths produce bit-identical results because blocks never share
/// state.
pub fn inner_minimize(problem: &AllocationProblem, dual: &DualState) -> Vec<Vec<f64>> {
    inner_minimize_at(problem, &dual.lambda)
}

fn inner_minimize_at(problem: &AllocationProblem, lambda: &[f64]) -> Vec<Vec<f64>> {
    let a = adjusted_costs(problem, lambda);
    let solve_block = |u: usize| minimize_block(&a[u], problem.block_weights(u), problem.gamma);
    if problem.num_users >= PAR_USERS {
        (0..problem.num_users)
            .into_par_iter()
            .map(solve_block)
            .collect()
    } else {
        (0..problem.num_users).map(solve_block).collect()
    }
}

/// Supergradient of the dual at the inner minimizer: Dx - b per row.
pub fn dual_gradient(problem: &AllocationProblem, x: &[Vec<f64>]) -> Vec<f64> {
    problem.rows.iter().map(|r| r.apply(x) - r.bound).collect()
}

struct Evaluation {
    x: Vec<Vec<f64>>,
    dual: f64,
    primal: f64,
    grad: Vec<f64>,
    max_violation: f64,
}

/// Rows with a finite bound; +infinity bounds never bind and their
/// multipliers stay at zero.
fn active_rows(problem: &AllocationProblem) -> Vec<usize> {
    (0..problem.rows.len())
        .filter(|&m| problem.rows[m].bound.is_finite())
        .collect()
}

fn evaluate(problem: &AllocationProblem, lambda: &[f64], active: &[usize]) -> Evaluation {
    let x = inner_minimize_at(problem, lambda);
    let primal = problem.primal_objective(&x);
    let mut dual = primal;
    let mut grad = vec![0.0; problem.rows.len()];
    let mut max_violation: f64 = 0.0;
    for &m in active {
        let g = problem.rows[m].apply(&x) - problem.rows[m].bound;
        grad[m] = g;
        dual += lambda[m] * g;
        max_violation = max_violation.max(g);
    }
    Evaluation {
        x,
        dual,
        primal,
        grad,
        max_violation,
    }
}

fn pack_solution(eval: Evaluation, lambda: Vec<f64>, iterations: usize, converged: bool) -> Solution {
    Solution {
        x: eval.x,
        primal_objective: eval.primal,
        dual_objective: eval.dual,
        max_row_violation: eval.max_violation,
        iterations,
        converged,
        lambda,
    }
}

/// Exact 1-D maximization of the dual along single multipliers, used when
/// joint gradient steps stall. The dual's partial derivative along lambda_m
/// is row m's residual at the inner minimizer, which is nonincreasing in
/// lambda_m, so each coordinate crest is the residual's root (or the
/// projection boundary at zero). Sweeping rows Gauss-Seidel style cuts
/// through stiff valleys where a shared step size forces microscopic moves:
/// near-zero gamma makes the dual's curvature blow up like 1/gamma along
/// whichever coordinates sit in their transition window, capping any joint
/// step far below the progress available along an individual row.
fn coordinate_rescue(
    problem: &AllocationProblem,
    active: &[usize],
    lambda: &mut [f64],
    eval: &mut Evaluation,
    lambda_cap: f64,
) -> bool {
    let mut moved = false;
    for &m in active {
        let residual_at = |lm: f64, lambda: &mut [f64]| -> f64 {
            let old = lambda[m];
            lambda[m] = lm;
            let x = inner_minimize_at(problem, lambda);
            let r = problem.rows[m].apply(&x) - problem.rows[m].bound;
            lambda[m] = old;
            r
        };
        let r0 = residual_at(lambda[m], lambda);
        let (mut lo, mut hi);
        if r0 > 0.0 {
            lo = lambda[m];
            hi = 2.0 * lambda[m].max(1.0);
            loop {
                if residual_at(hi, lambda) <= 0.0 {
                    break;
                }
                hi *= 2.0;
                if hi > lambda_cap {
                    break;
                }
            }
            if hi > lambda_cap {
                // No crest below the ceiling: leave the row to the
                // infeasibility detector.
                continue;
            }
        } else if r0 < 0.0 && lambda[m] > 0.0 {
            if residual_at(0.0, lambda) <= 0.0 {
                lo = 0.0;
                hi = 0.0;
            } else {
                lo = 0.0;
                hi = lambda[m];
            }
        } else {
            continue;
        }
        while hi > lo {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if residual_at(mid, lambda) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let old = lambda[m];
        if hi == old {
            continue;
        }
        lambda[m] = hi;
        let eval_new = evaluate(problem, lambda, active);
        // The root IS the 1-D argmax, so the dual cannot drop below float
        // noise; ties must be accepted because the value gain of recentering
        // a stiff coordinate (~residual^2 * gamma) is routinely smaller than
        // one ulp of the dual while the residual itself is far from the
        // feasibility certificate.
        if eval_new.dual >= eval.dual {
            *eval = eval_new;
            moved = true;
        } else {
            lambda[m] = old;
        }
    }
    moved
}

/// Projected dual ascent with a trace of accepted dual objective values
/// (useful for asserting monotone ascent in tests).
pub fn solve_traced(
    problem: &AllocationProblem,
    config: &SolveConfig,
) -> (Result<Solution, LpError>, Vec<f64>) {
    let mut trace = Vec::new();
    let result = solve_inner(problem, config, &mut trace);
    (result, trace)
}

pub fn solve(problem: &AllocationProblem, config: &SolveConfig) -> Result<Solution, LpError> {
    let mut trace = Vec::new();
    solve_inner(problem, config, &mut trace)
}

fn solve_inner(
    problem: &AllocationProblem,
    config: &SolveConfig,
    trace: &mut Vec<f64>,
) -> Result<Solution, LpError> {
    problem.validate()?;
    let active = active_rows(problem);
    let bound_scale = 1.0
        + active
            .iter()
            .map(|&m| problem.rows[m].bound.abs())
            .fold(0.0, f64::max);
    let feas_tol = config.eps_feas * bound_scale;

    if active.is_empty() {
        let lambda = vec![0.0; problem.rows.len()];
        let eval = evaluate(problem, &lambda, &active);
        trace.push(eval.dual);
        return Ok(pack_solution(eval, lambda, 1, true));
    }

    let frob_sq: f64 = active
        .iter()
        .map(|&m| {
            problem.rows[m]
                .entries
                .iter()
                .map(|&(_, _, c)| c * c)
                .sum::<f64>()
        })
        .sum();
    let eta0 = config
        .initial_step
        .unwrap_or(if frob_sq > 0.0 { 1.0 / frob_sq } else { 1.0 });
    let mut eta = eta0;

    let mut dual = DualState::new(problem.rows.len(), eta);
    let mut eval = evaluate(problem, &dual.lambda, &active);
    trace.push(eval.dual);
    let mut best_dual = eval.dual;
    let mut best: Option<(Evaluation, Vec<f64>)> = None;
    let mut stall_violation = f64::INFINITY;

    for iter in 1..=config.max_iters {
        dual.iteration = iter;
        let rel_gap = (eval.primal - eval.dual) / (1.0 + eval.primal.abs());
        if eval.max_violation <= feas_tol && rel_gap <= config.eps_gap {
            return Ok(pack_solution(eval, dual.lambda, iter, true));
        }

        // A KKT stall: every multiplier is either pinned at zero with a
        // nonpositive gradient or sits at a zero gradient. No step size can
        // move lambda, so stop and report the best iterate.
        let stalled = active.iter().all(|&m| {
            (dual.lambda[m] == 0.0 && eval.grad[m] <= 0.0) || eval.grad[m] == 0.0
        });
        if stalled {
            break;
        }

        let dual_before = eval.dual;
        let mut accepted = false;
        for _ in 0..60 {
            let mut lam_new = dual.lambda.clone();
            let mut step_sq = 0.0;
            for &m in &active {
                lam_new[m] = (dual.lambda[m] + eta * eval.grad[m]).max(0.0);
                let d = lam_new[m] - dual.lambda[m];
                step_sq += d * d;
            }
            let eval_new = evaluate(problem, &lam_new, &active);
            // Sufficient increase against the projected-step norm. A bare
            // "any strict increase" rule admits microscopically improving
            // steps forever on stiff duals (gamma near zero) and the iterate
            // wanders without nearing the optimum; the margin forces each
            // accepted step to capture a fixed fraction of its first-order
            // prediction, which backtracking can always satisfy on a smooth
            // dual. The margin vanishes with eta, so this is strictly
            // tighter than, and degenerates to, plain improvement.
            if eval_new.dual > eval.dual + ARMIJO_FRACTION * step_sq / eta {
                dual.lambda = lam_new;
                eval = eval_new;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        dual.step_size = eta;
        // When joint steps deliver only floor-level progress while the
        // iterate is still short of the certificate, the shared step size has
        // been pinched by one stiff coordinate (the valley zig-zag of a dual
        // whose curvature scales like 1/gamma). Sweep single rows with the
        // exact 1-D maximization, which moves along the valley floor
        // directly; give up only when that sweep is also at the floor.
        let floor = 1e-12 * (1.0 + eval.dual.abs());
        if eval.dual - dual_before <= floor {
            let moved = coordinate_rescue(
                problem,
                &active,
                &mut dual.lambda,
                &mut eval,
                config.lambda_ceiling,
            );
            if !moved {
                // Joint steps are at the numerical floor and every
                // multiplier already sits on its own crest: a fixed point.
                break;
            }
            accepted = true;
        }
        if !accepted {
            break;
        }
        // Double the step after every accepted move (bounded only against
        // overflow). Far from the optimum the dual is nearly linear in
        // lambda, so doubling covers exponential ground toward large
        // multipliers; the halving loop reins the step back in near the top.
        eta = (eta * 2.0).min(1e24);
        trace.push(eval.dual);
        if eval.dual > best_dual {
            best_dual = eval.dual;
        }

        if iter % 50 == 0 {
            let lambda_norm = dual.lambda.iter().fold(0.0f64, |acc, &l| acc.max(l.abs()));
            if lambda_norm > config.lambda_ceiling
                && eval.max_violation > feas_tol
                && eval.max_violation >= 0.999 * stall_violation
            {
                return Err(LpError::InfeasibleSuspected {
                    lambda_norm,
                    violation: eval.max_violation,
                });
            }
            stall_violation = eval.max_violation;
        }

        if best
            .as_ref()
            .map(|(e, _)| eval.dual > e.dual)
            .unwrap_or(true)
        {
            best = Some((
                Evaluation {
                    x: eval.x.clone(),
                    dual: eval.dual,
                    primal: eval.primal,
                    grad: eval.grad.clone(),
                    max_violation: eval.max_violation,
                },
                dual.lambda.clone(),
            ));
        }
    }

    // Out of iterations (or stalled): return the best accepted iterate. The
    // current iterate competes with the tracker because a final rescue sweep
    // may have landed after the tracker's last update.
    let (eval, lambda) = match best {
        Some((e, l)) if e.dual > eval.dual => (e, l),
        _ => (eval, dual.lambda),
    };
    let rel_gap = (eval.primal - eval.dual) / (1.0 + eval.primal.abs());
    let converged = eval.max_violation <= feas_tol && rel_gap <= config.eps_gap;
    Ok(pack_solution(eval, lambda, dual.iteration, converged))
}

/// Recomputes feasibility and the duality gap of a solution from scratch:
/// the primal objective comes from the stored x, the dual bound from a fresh
/// inner minimization at the stored multipliers. Nothing else from the solve
/// is trusted.
pub fn certify(problem: &AllocationProblem, solution: &Solution) -> Certificate {
    let x = &solution.x;
    let primal = problem.primal_objective(x);

    let mut lambda = solution.lambda.clone();
    lambda.resize(problem.rows.len(), 0.0);
    for l in &mut lambda {
        *l = l.max(0.0);
    }
    let active = active_rows(problem);
    let eval = evaluate(problem, &lambda, &active);
    let dual = eval.dual;

    let mut max_row_violation: f64 = 0.0;
    for &m in &active {
        max_row_violation =
            max_row_violation.max(problem.rows[m].apply(x) - problem.rows[m].bound);
    }
    let mut max_cap_violation: f64 = 0.0;
    let mut box_ok = true;
    for xu in x {
        for &v in xu {
            if !(-1e-12..=1.0 + 1e-12).contains(&v) {
                box_ok = false;
            }
        }
    }
    if let Some(caps) = &problem.user_caps {
        for u in 0..problem.num_users {
            let used = weighted_sum(&caps.weights[u], &x[u]);
            let tol = 1e-8 * caps.kappa[u].max(1.0);
            max_cap_violation = max_cap_violation.max(used - caps.kappa[u] - tol);
        }
    }

    let bound_scale = 1.0
        + active
            .iter()
            .map(|&m| problem.rows[m].bound.abs())
            .fold(0.0, f64::max);
    let feasible = box_ok && max_cap_violation <= 0.0 && max_row_violation <= 1e-6 * bound_scale;
    let rel_gap = (primal - dual) / (1.0 + primal.abs());
    Certificate {
        feasible,
        rel_gap,
        max_row_violation,
        max_cap_violation,
        primal_objective: primal,
        dual_objective: dual,
    }
}
