//! Exploration measurement and temperature tuning.
//!
//! Overlap-at-K compares Thompson-sampled rankings against exploit-mode
//! rankings: for each observation, the fraction of the sampled top-K that
//! also appears in the exploit top-K, averaged over observations. Values near
//! 1 mean the sampler rarely deviates from greedy; lower values mean more
//! exploration. The tuner grid-searches the posterior temperature for the
//! largest value that still keeps mean overlap above a safety floor.

use crate::bayes::LaplaceState;
use crate::seeds;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExplorationError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("k = {k} exceeds the {actions} available actions")]
    InvalidK { k: usize, actions: usize },
    #[error("no observations")]
    EmptyInput,
    #[error("p_safe must lie in [0, 1), got {0}")]
    InvalidPSafe(f64),
    #[error("empty temperature grid")]
    EmptyGrid,
    #[error(
        "no grid temperature reaches p_safe = {p_safe}: overlaps {overlaps:?} at taus {tau_grid:?}"
    )]
    NoFeasibleTau {
        tau_grid: Vec<f64>,
        overlaps: Vec<f64>,
        p_safe: f64,
    },
    #[error(transparent)]
    Bayes(#[from] crate::bayes::BayesError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlapReport {
    pub k: usize,
    pub per_observation: Vec<f64>,
    pub mean: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneResult {
    pub tau_grid: Vec<f64>,
    /// Mean overlap per grid temperature, averaged over the sampled draws.
    pub overlap_means: Vec<f64>,
    /// Standard error of each overlap mean across draws.
    pub overlap_std_errors: Vec<f64>,
    pub chosen_tau: f64,
    pub chosen_index: usize,
    pub p_safe: f64,
}

/// Indices of the k largest scores, ties broken by ascending action index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn overlap_of_one(ts: &[f64], exploit: &[f64], k: usize) -> f64 {
    let top_ts = top_k_indices(ts, k);
    let top_ex = top_k_indices(exploit, k);
    let hits = top_ts.iter().filter(|i| top_ex.contains(i)).count();
    hits as f64 / k as f64
}

/// Overlap-at-K between two score tables of identical shape
/// (observations x actions, possibly ragged across observations).
pub fn overlap_at_k(
    ts_scores: &[Vec<f64>],
    exploit_scores: &[Vec<f64>],
    k: usize,
) -> Result<OverlapReport, ExplorationError> {
    if ts_scores.len() != exploit_scores.len() {
        return Err(ExplorationError::ShapeMismatch(format!(
            "{} observations vs {}",
            ts_scores.len(),
            exploit_scores.len()
        )));
    }
    if ts_scores.is_empty() {
        return Err(ExplorationError::EmptyInput);
    }
    if k == 0 {
        return Err(ExplorationError::InvalidK { k, actions: 0 });
    }
    let mut per_observation = Vec::with_capacity(ts_scores.len());
    for (obs, (ts, ex)) in ts_scores.iter().zip(exploit_scores).enumerate() {
        if ts.len() != ex.len() {
            return Err(ExplorationError::ShapeMismatch(format!(
                "observation {obs}: {} actions vs {}",
                ts.len(),
                ex.len()
            )));
        }
        if k > ts.len() {
            return Err(ExplorationError::InvalidK {
                k,
                actions: ts.len(),
            });
        }
        per_observation.push(overlap_of_one(ts, ex, k));
    }
    let mean = per_observation.iter().sum::<f64>() / per_observation.len() as f64;
    Ok(OverlapReport {
        k,
        n: per_observation.len(),
        per_observation,
        mean,
    })
}

/// Feature vectors for one observation's candidate actions.
pub type ObservationContexts = Vec<Vec<f64>>;

fn exploit_table(state: &LaplaceState, observations: &[ObservationContexts]) -> Vec<Vec<f64>> {
    observations
        .iter()
        .map(|actions| actions.iter().map(|z| state.predict_mean(z)).collect())
        .collect()
}

/// Grid-searches the temperature: for each tau, the mean overlap-at-K between
/// `draws_per_tau` independent Thompson rankings and the exploit ranking;
/// picks the largest tau whose mean overlap still reaches p_safe.
///
/// Draw substreams are derived from `seed`, so results do not depend on grid
/// order and are reproducible.
pub fn tune_temperature(
    state: &LaplaceState,
    observations: &[ObservationContexts],
    tau_grid: &[f64],
    k: usize,
    p_safe: f64,
    draws_per_tau: usize,
    seed: u64,
) -> Result<TuneResult, ExplorationError> {
    if tau_grid.is_empty() {
        return Err(ExplorationError::EmptyGrid);
    }
    if !(0.0..1.0).contains(&p_safe) {
        return Err(ExplorationError::InvalidPSafe(p_safe));
    }
    if observations.is_empty() {
        return Err(ExplorationError::EmptyInput);
    }
    let draws = draws_per_tau.max(1);
    let exploit = exploit_table(state, observations);

    let mut overlap_means = Vec::with_capacity(tau_grid.len());
    let mut overlap_std_errors = Vec::with_capacity(tau_grid.len());
    for (ti, &tau) in tau_grid.iter().enumerate() {
        let tempered = state.with_temperature(tau)?;
        let mut samples = Vec::with_capacity(draws);
        for d in 0..draws {
            let mut rng = seeds::stream(
                seed,
                &[seeds::purpose::POLICY_SAMPLE, ti as u64, d as u64],
            );
            let ts: Vec<Vec<f64>> = observations
                .iter()
                .map(|actions| {
                    actions
                        .iter()
                        .map(|z| tempered.predictive_sample(z, &mut rng).output)
                        .collect()
                })
                .collect();
            samples.push(overlap_at_k(&ts, &exploit, k)?.mean);
        }
        let mean = samples.iter().sum::<f64>() / draws as f64;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
            / (draws.max(2) - 1) as f64;
        overlap_means.push(mean);
        overlap_std_errors.push((var / draws as f64).sqrt());
    }

    let chosen_index = tau_grid
        .iter()
        .enumerate()
        .filter(|&(i, _)| overlap_means[i] >= p_safe)
        .max_by(|(_, a), (_, b)| a.total_cmp(b))
        .map(|(i, _)| i);
    match chosen_index {
        Some(i) => Ok(TuneResult {
            tau_grid: tau_grid.to_vec(),
            overlap_means,
            overlap_std_errors,
            chosen_tau: tau_grid[i],
            chosen_index: i,
            p_safe,
        }),
        None => Err(ExplorationError::NoFeasibleTau {
            tau_grid: tau_grid.to_vec(),
            overlaps: overlap_means,
            p_safe,
        }),
    }
}

/// Overlap between the exploit rankings of two model states on the same
/// observations; used to watch for score drift across model refreshes.
pub fn monitor_drift(
    previous: &LaplaceState,
    refreshed: &LaplaceState,
    observations: &[ObservationContexts],
    k: usize,
) -> Result<OverlapReport, ExplorationError> {
    let a = exploit_table(previous, observations);
    let b = exploit_table(refreshed, observations);
    overlap_at_k(&a, &b, k)
}
