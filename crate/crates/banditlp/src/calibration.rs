//! Isotonic probability calibration.
//!
//! Fits a monotone step function g to (score, label) pairs by
//! pool-adjacent-violators and applies it as a piecewise-constant lookup.
//! The intended use is to fit g on exploit-mode predictions and then apply it
//! to Thompson-sampled predictions, which corrects systematic miscalibration
//! without collapsing the sampling spread.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("empty input")]
    EmptyInput,
    #[error("scores and labels have different lengths ({scores} vs {labels})")]
    MismatchedLengths { scores: usize, labels: usize },
    #[error("score at index {0} is not finite")]
    NonFiniteScore(usize),
    #[error("label at index {0} is outside [0,1]")]
    LabelOutOfRange(usize),
}

/// A fitted monotone step function. `breakpoints` are strictly ascending raw
/// scores (the left edge of each step); `values` are the nondecreasing fitted
/// probabilities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsotonicModel {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    start_score: f64,
    sum: f64,
    weight: f64,
}

impl Block {
    fn mean(&self) -> f64 {
        self.sum / self.weight
    }
}

/// Pool-adjacent-violators fit. Equal scores are pooled into one group before
/// the sweep, so the result does not depend on the input order of ties.
pub fn fit_isotonic(scores: &[f64], labels: &[f64]) -> Result<IsotonicModel, CalibrationError> {
    if scores.len() != labels.len() {
        return Err(CalibrationError::MismatchedLengths {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(CalibrationError::EmptyInput);
    }
    for (i, s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(CalibrationError::NonFiniteScore(i));
        }
    }
    for (i, l) in labels.iter().enumerate() {
        if !(0.0..=1.0).contains(l) {
            return Err(CalibrationError::LabelOutOfRange(i));
        }
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Tie-pooled groups in ascending score order.
    let mut groups: Vec<Block> = Vec::new();
    for &i in &order {
        match groups.last_mut() {
            Some(g) if g.start_score == scores[i] => {
                g.sum += labels[i];
                g.weight += 1.0;
            }
            _ => groups.push(Block {
                start_score: scores[i],
                sum: labels[i],
                weight: 1.0,
            }),
        }
    }

    // PAVA sweep: merge a new group into its predecessor while the means
    // decrease, keeping the stack of block means nondecreasing.
    let mut blocks: Vec<Block> = Vec::with_capacity(groups.len());
    for g in groups {
        let mut merged = g;
        while let Some(prev) = blocks.last() {
            if prev.mean() > merged.mean() {
                let prev = blocks.pop().unwrap();
                merged = Block {
                    start_score: prev.start_score,
                    sum: prev.sum + merged.sum,
                    weight: prev.weight + merged.weight,
                };
            } else {
                break;
            }
        }
        blocks.push(merged);
    }

    Ok(IsotonicModel {
        breakpoints: blocks.iter().map(|b| b.start_score).collect(),
        values: blocks.iter().map(|b| b.mean()).collect(),
    })
}

impl IsotonicModel {
    /// Piecewise-constant lookup: the value of the step whose left edge is the
    /// largest breakpoint <= score, clamped to the boundary steps outside the
    /// fitted range.
    pub fn apply(&self, score: f64) -> f64 {
        match self
            .breakpoints
            .partition_point(|b| *b <= score)
            .checked_sub(1)
        {
            None => self.values[0],
            Some(idx) => self.values[idx],
        }
    }

    /// Elementwise application to a batch of Thompson-sampled scores. The
    /// model should have been fitted on exploit-mode scores; applying a fit
    /// refreshed on the sampled scores themselves would shrink the sampling
    /// spread it is supposed to preserve.
    pub fn calibrate_ts_batch(&self, ts_scores: &[f64]) -> Vec<f64> {
        ts_scores.iter().map(|&s| self.apply(s)).collect()
    }
}
