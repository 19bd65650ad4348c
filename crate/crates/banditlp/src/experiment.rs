//! The S x T simulation protocol and its report plumbing.
//!
//! Per run: build a fresh environment from the run's derived seed, warm-start
//! every policy on the same biased logging pool, then per round let each
//! policy select on the same presented contexts while it observes only the
//! feedback its own actions produced (no cross-learning). Violations are
//! measured against the hidden oracle means, never against policy estimates.
//! Runs execute in parallel; every random draw comes from a seed-derived
//! substream, so reports are identical regardless of scheduling.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{EnvironmentChoice, ExperimentConfig, Scenario};
use crate::env::{
    ConstraintTargets, Environment, EnvironmentRound, EnvError, LoggedDataset, ReplayEnv,
    SyntheticEnv,
};
use crate::policies::{Policy, RoundDecision};
use crate::seeds;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// One (policy, run, round) measurement. `skipped` rows carry an error and
/// zeroed metrics; aggregation ignores them.
#[derive(Debug, Clone, Serialize)]
pub struct RoundRecord {
    pub policy_index: usize,
    pub policy: String,
    pub run: usize,
    pub round: usize,
    /// Realized reward summed over the chosen pairs.
    pub reward: f64,
    pub cumulative_reward: f64,
    /// Oracle-mean level-1 cost of the chosen pairs minus the global target;
    /// no violation if <= 0.
    pub global_violation: f64,
    /// Worst active-row residual per provider; no violation if <= 0.
    pub provider_violations: Vec<f64>,
    pub lp_converged: Option<bool>,
    pub lp_iterations: Option<usize>,
    pub skipped: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub policy_index: usize,
    pub policy: String,
    pub round: usize,
    /// Runs contributing to this cell (skipped rows excluded).
    pub n: usize,
    pub reward_mean: f64,
    pub reward_ci: f64,
    pub cumulative_mean: f64,
    pub cumulative_ci: f64,
    pub global_violation_mean: f64,
    pub global_violation_ci: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProviderSummaryRow {
    pub policy_index: usize,
    pub policy: String,
    pub round: usize,
    pub provider: usize,
    pub n: usize,
    pub violation_mean: f64,
    pub violation_ci: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunFailure {
    pub run: usize,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    /// The materialized config the report was produced from.
    pub config: ExperimentConfig,
    pub rows: Vec<RoundRecord>,
    pub summary: Vec<SummaryRow>,
    pub provider_summary: Vec<ProviderSummaryRow>,
    /// Whole-run construction failures (environment or logging pool).
    pub run_failures: Vec<RunFailure>,
}

/// Mean and 95% normal-approximation half-width (zero when n <= 1).
fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

/// Apply the scenario to freshly computed targets. The email scenario swaps
/// the per-provider cost ceilings for minimum-send floors derived from the
/// random-policy selection baseline.
pub fn scenario_targets(
    mut targets: ConstraintTargets,
    scenario: Scenario,
    min_send_multiplier: f64,
) -> ConstraintTargets {
    match scenario {
        Scenario::Standard => targets,
        Scenario::Email => {
            targets.per_provider_min_send = targets
                .per_provider_send_baseline
                .iter()
                .map(|b| min_send_multiplier * b)
                .collect();
            targets.per_provider_max = vec![f64::INFINITY; targets.per_provider_max.len()];
            targets
        }
    }
}

/// Oracle-side metrics for one decision: realized reward sum, global residual,
/// and the worst active residual per provider.
pub fn round_metrics(
    decision: &RoundDecision,
    round: &EnvironmentRound,
    targets: &ConstraintTargets,
    num_providers: usize,
) -> (f64, f64, Vec<f64>) {
    let mut reward = 0.0;
    let mut global_cost = 0.0;
    let mut provider_cost = vec![0.0; num_providers];
    let mut provider_sends = vec![0usize; num_providers];
    for (u, actions) in decision.actions.iter().enumerate() {
        for &i in actions {
            reward += round.rewards[u][i];
            global_cost += round.mean_cost1[u][i];
            let l = round.provider_of[i];
            provider_cost[l] += round.mean_cost2[u][i];
            provider_sends[l] += 1;
        }
    }
    let global_violation = if targets.global.is_finite() {
        global_cost - targets.global
    } else {
        0.0
    };
    let provider_violations = (0..num_providers)
        .map(|l| {
            let mut residual: Option<f64> = None;
            if let Some(&bound) = targets.per_provider_max.get(l) {
                if bound.is_finite() {
                    let r = provider_cost[l] - bound;
                    residual = Some(residual.map_or(r, |v: f64| v.max(r)));
                }
            }
            if let Some(&floor) = targets.per_provider_min_send.get(l) {
                if floor > 0.0 {
                    let r = floor - provider_sends[l] as f64;
                    residual = Some(residual.map_or(r, |v: f64| v.max(r)));
                }
            }
            residual.unwrap_or(0.0)
        })
        .collect();
    (reward, global_violation, provider_violations)
}

fn build_environment(
    config: &ExperimentConfig,
    dataset: Option<&LoggedDataset>,
    env_seed: u64,
) -> Result<Environment, EnvError> {
    match &config.environment {
        EnvironmentChoice::Synthetic(cfg) => {
            let mut cfg = cfg.clone();
            cfg.seed = env_seed;
            Ok(Environment::Synthetic(SyntheticEnv::new(cfg)?))
        }
        EnvironmentChoice::Replay(src) => {
            let mut cfg = src.config.clone();
            cfg.seed = env_seed;
            let dataset = dataset.expect("replay dataset loaded before runs").clone();
            Ok(Environment::Replay(ReplayEnv::new(dataset, cfg)?))
        }
    }
}

struct RunOutput {
    rows: Vec<RoundRecord>,
    failure: Option<String>,
}

fn skipped_row(
    policy_index: usize,
    policy: &str,
    run: usize,
    round: usize,
    cumulative: f64,
    num_providers: usize,
    error: String,
) -> RoundRecord {
    RoundRecord {
        policy_index,
        policy: policy.to_string(),
        run,
        round,
        reward: 0.0,
        cumulative_reward: cumulative,
        global_violation: 0.0,
        provider_violations: vec![0.0; num_providers],
        lp_converged: None,
        lp_iterations: None,
        skipped: true,
        error: Some(error),
    }
}

fn simulate_run(
    config: &ExperimentConfig,
    dataset: Option<&LoggedDataset>,
    run: usize,
) -> RunOutput {
    let rounds = config.rounds();
    let names: Vec<&'static str> = config.policies.iter().map(|s| s.kind.name()).collect();
    let num_policies = config.policies.len();
    let all_skipped = |num_providers: usize, message: &str| -> Vec<RoundRecord> {
        let mut rows = Vec::with_capacity(rounds * num_policies);
        for t in 0..rounds {
            for pi in 0..num_policies {
                rows.push(skipped_row(
                    pi,
                    names[pi],
                    run,
                    t,
                    0.0,
                    num_providers,
                    message.to_string(),
                ));
            }
        }
        rows
    };

    let env_seed = seeds::derive(config.master_seed, &[seeds::purpose::EXPERIMENT_ENV, run as u64]);
    let env = match build_environment(config, dataset, env_seed) {
        Ok(env) => env,
        Err(e) => {
            let message = format!("environment construction failed: {e}");
            return RunOutput {
                rows: all_skipped(0, &message),
                failure: Some(message),
            };
        }
    };
    let num_providers = env.num_providers();
    let targets = scenario_targets(
        env.compute_constraint_targets(),
        config.scenario,
        config.min_send_multiplier,
    );
    let log = match env.biased_logging_data(config.logging_rounds) {
        Ok(log) => log,
        Err(e) => {
            let message = format!("biased logging failed: {e}");
            return RunOutput {
                rows: all_skipped(num_providers, &message),
                failure: Some(message),
            };
        }
    };

    // `dead[pi]` records a policy-fatal error; later rounds are skipped rows.
    let mut policies: Vec<Option<Policy>> = Vec::with_capacity(num_policies);
    let mut dead: Vec<Option<String>> = vec![None; num_policies];
    for (pi, spec) in config.policies.iter().enumerate() {
        let seed = seeds::derive(
            config.master_seed,
            &[seeds::purpose::EXPERIMENT_POLICY, run as u64, pi as u64],
        );
        match Policy::new(
            spec.clone(),
            pi,
            seed,
            env.context_dim(),
            env.reward_head(),
            env.user_cap(),
        ) {
            Ok(mut policy) => {
                if let Err(e) = policy.initialize(&log) {
                    dead[pi] = Some(format!("initialization failed: {e}"));
                }
                policies.push(Some(policy));
            }
            Err(e) => {
                dead[pi] = Some(format!("construction failed: {e}"));
                policies.push(None);
            }
        }
    }

    let mut rows = Vec::with_capacity(rounds * num_policies);
    let mut cumulative = vec![0.0; num_policies];
    for t in 0..rounds {
        let round = env.gen_round(t);
        for pi in 0..num_policies {
            if let Some(msg) = &dead[pi] {
                rows.push(skipped_row(
                    pi,
                    names[pi],
                    run,
                    t,
                    cumulative[pi],
                    num_providers,
                    msg.clone(),
                ));
                continue;
            }
            let policy = policies[pi].as_mut().expect("live policy present");
            match policy.select(&round, &targets) {
                Ok(decision) => {
                    debug_assert_eq!(
                        decision.policy_index, pi,
                        "decision routed to a foreign policy"
                    );
                    let (reward, global_violation, provider_violations) =
                        round_metrics(&decision, &round, &targets, num_providers);
                    cumulative[pi] += reward;
                    let mut error = None;
                    if let Err(e) = policy.update(&decision, &round) {
                        let msg = format!("update failed: {e}");
                        error = Some(msg.clone());
                        dead[pi] = Some(msg);
                    }
                    rows.push(RoundRecord {
                        policy_index: pi,
                        policy: names[pi].to_string(),
                        run,
                        round: t,
                        reward,
                        cumulative_reward: cumulative[pi],
                        global_violation,
                        provider_violations,
                        lp_converged: decision.lp.as_ref().map(|s| s.converged),
                        lp_iterations: decision.lp.as_ref().map(|s| s.iterations),
                        skipped: false,
                        error,
                    });
                }
                Err(e) => {
                    rows.push(skipped_row(
                        pi,
                        names[pi],
                        run,
                        t,
                        cumulative[pi],
                        num_providers,
                        format!("selection failed: {e}"),
                    ));
                }
            }
        }
    }
    RunOutput {
        rows,
        failure: None,
    }
}

/// Cross-run aggregation: per (policy, round) means with 95% CIs, skipped
/// rows excluded.
pub fn aggregate(rows: &[RoundRecord]) -> (Vec<SummaryRow>, Vec<ProviderSummaryRow>) {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(usize, usize), Vec<&RoundRecord>> = BTreeMap::new();
    for row in rows.iter().filter(|r| !r.skipped) {
        groups
            .entry((row.policy_index, row.round))
            .or_default()
            .push(row);
    }
    let mut summary = Vec::new();
    let mut provider_summary = Vec::new();
    for ((policy_index, round), group) in groups {
        let policy = group[0].policy.clone();
        let n = group.len();
        let collect = |f: &dyn Fn(&RoundRecord) -> f64| -> Vec<f64> {
            group.iter().map(|r| f(r)).collect()
        };
        let (reward_mean, reward_ci) = mean_ci(&collect(&|r| r.reward));
        let (cumulative_mean, cumulative_ci) = mean_ci(&collect(&|r| r.cumulative_reward));
        let (global_violation_mean, global_violation_ci) =
            mean_ci(&collect(&|r| r.global_violation));
        summary.push(SummaryRow {
            policy_index,
            policy: policy.clone(),
            round,
            n,
            reward_mean,
            reward_ci,
            cumulative_mean,
            cumulative_ci,
            global_violation_mean,
            global_violation_ci,
        });
        let num_providers = group
            .iter()
            .map(|r| r.provider_violations.len())
            .max()
            .unwrap_or(0);
        for l in 0..num_providers {
            let values: Vec<f64> = group
                .iter()
                .filter_map(|r| r.provider_violations.get(l).copied())
                .collect();
            let (violation_mean, violation_ci) = mean_ci(&values);
            provider_summary.push(ProviderSummaryRow {
                policy_index,
                policy: policy.clone(),
                round,
                provider: l,
                n: values.len(),
                violation_mean,
                violation_ci,
            });
        }
    }
    (summary, provider_summary)
}

/// Run the full S x T protocol. Per-run environment/policy failures are
/// surfaced inside the report; only config/dataset-level problems abort.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let mut config = config.clone();
    config.materialize();
    config.validate()?;

    let dataset = match &config.environment {
        EnvironmentChoice::Replay(src) => Some(LoggedDataset::from_csv(&src.path)?),
        EnvironmentChoice::Synthetic(_) => None,
    };

    let outputs: Vec<RunOutput> = (0..config.runs())
        .into_par_iter()
        .map(|run| simulate_run(&config, dataset.as_ref(), run))
        .collect();

    let mut rows = Vec::new();
    let mut run_failures = Vec::new();
    for (run, output) in outputs.into_iter().enumerate() {
        rows.extend(output.rows);
        if let Some(message) = output.failure {
            run_failures.push(RunFailure { run, message });
        }
    }
    let (summary, provider_summary) = aggregate(&rows);
    Ok(ExperimentReport {
        config,
        rows,
        summary,
        provider_summary,
        run_failures,
    })
}

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// Write the report as CSV files plus the echoed effective config:
/// `rows.csv`, `provider_rows.csv`, `summary.csv`, `provider_summary.csv`,
/// `run_failures.csv`, and `effective_config.json`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_path(dir.join("rows.csv"))?;
    w.write_record([
        "policy_index",
        "policy",
        "run",
        "round",
        "reward",
        "cumulative_reward",
        "global_violation",
        "max_provider_violation",
        "lp_converged",
        "lp_iterations",
        "skipped",
        "error",
    ])?;
    for r in &report.rows {
        let max_provider = r
            .provider_violations
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let max_provider = if r.provider_violations.is_empty() {
            String::new()
        } else {
            max_provider.to_string()
        };
        w.write_record([
            r.policy_index.to_string(),
            r.policy.clone(),
            r.run.to_string(),
            r.round.to_string(),
            r.reward.to_string(),
            r.cumulative_reward.to_string(),
            r.global_violation.to_string(),
            max_provider,
            fmt_opt(&r.lp_converged),
            fmt_opt(&r.lp_iterations),
            r.skipped.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("provider_rows.csv"))?;
    w.write_record(["policy_index", "policy", "run", "round", "provider", "violation"])?;
    for r in &report.rows {
        for (l, v) in r.provider_violations.iter().enumerate() {
            w.write_record([
                r.policy_index.to_string(),
                r.policy.clone(),
                r.run.to_string(),
                r.round.to_string(),
                l.to_string(),
                v.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record([
        "policy_index",
        "policy",
        "round",
        "n",
        "reward_mean",
        "reward_ci",
        "cumulative_mean",
        "cumulative_ci",
        "global_violation_mean",
        "global_violation_ci",
    ])?;
    for s in &report.summary {
        w.write_record([
            s.policy_index.to_string(),
            s.policy.clone(),
            s.round.to_string(),
            s.n.to_string(),
            s.reward_mean.to_string(),
            s.reward_ci.to_string(),
            s.cumulative_mean.to_string(),
            s.cumulative_ci.to_string(),
            s.global_violation_mean.to_string(),
            s.global_violation_ci.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("provider_summary.csv"))?;
    w.write_record([
        "policy_index",
        "policy",
        "round",
        "provider",
        "n",
        "violation_mean",
        "violation_ci",
    ])?;
    for s in &report.provider_summary {
        w.write_record([
            s.policy_index.to_string(),
            s.policy.clone(),
            s.round.to_string(),
            s.provider.to_string(),
            s.n.to_string(),
            s.violation_mean.to_string(),
            s.violation_ci.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("run_failures.csv"))?;
    w.write_record(["run", "message"])?;
    for f in &report.run_failures {
        w.write_record([f.run.to_string(), f.message.clone()])?;
    }
    w.flush()?;

    let config_json = serde_json::to_string_pretty(&report.config)
        .expect("config serialization cannot fail");
    std::fs::write(dir.join("effective_config.json"), config_json + "\n")?;
    Ok(())
}
