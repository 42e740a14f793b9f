//! Bradley-Terry negative log-likelihood for a linear scorer and its gradient.
//!
//! For a pair with feature vectors `w` (chosen) and `l` (rejected), the score
//! margin is `delta = theta . (w - l)` and the loss is `-ln sigmoid(delta)`,
//! evaluated as `softplus(-delta)` so it stays finite for any margin.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{RewardError, ScorerParams};
use crate::rng::derive_rng;

/// `(chosen features, rejected features)`.
pub type FeaturePair = (Vec<f64>, Vec<f64>);

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic function, stable for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-pair loss `-ln sigmoid(delta)`.
pub fn pair_loss(delta: f64) -> f64 {
    softplus(-delta)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_batch(weights: &[f64], batch: &[FeaturePair]) -> Result<(), RewardError> {
    if batch.is_empty() {
        return Err(RewardError::EmptyBatch);
    }
    let d = weights.len();
    for (i, (w, l)) in batch.iter().enumerate() {
        if w.len() != d || l.len() != d {
            return Err(RewardError::Dimension { expected: d, found: if w.len() != d { w.len() } else { l.len() } });
        }
        if !w.iter().chain(l).all(|x| x.is_finite()) {
            return Err(RewardError::NonFinite(format!("features of pair {i}")));
        }
    }
    if !weights.iter().all(|x| x.is_finite()) {
        return Err(RewardError::NonFinite("weights".into()));
    }
    Ok(())
}

fn margin(weights: &[f64], (w, l): &FeaturePair) -> f64 {
    dot(weights, w) - dot(weights, l)
}

/// Mean BT negative log-likelihood over the batch.
pub fn bt_nll(params: &ScorerParams, batch: &[FeaturePair]) -> Result<f64, RewardError> {
    nll(&params.weights, batch)
}

/// Gradient of [`bt_nll`] with respect to the weights.
pub fn bt_gradient(params: &ScorerParams, batch: &[FeaturePair]) -> Result<Vec<f64>, RewardError> {
    gradient(&params.weights, batch)
}

pub(crate) fn nll(weights: &[f64], batch: &[FeaturePair]) -> Result<f64, RewardError> {
    check_batch(weights, batch)?;
    Ok(batch.iter().map(|p| pair_loss(margin(weights, p))).sum::<f64>() / batch.len() as f64)
}

pub(crate) fn gradient(weights: &[f64], batch: &[FeaturePair]) -> Result<Vec<f64>, RewardError> {
    check_batch(weights, batch)?;
    let mut grad = vec![0.0; weights.len()];
    let n = batch.len() as f64;
    for pair in batch {
        // d/d delta of softplus(-delta) = -sigmoid(-delta)
        let coef = -sigmoid(-margin(weights, pair)) / n;
        for (g, (w, l)) in grad.iter_mut().zip(pair.0.iter().zip(&pair.1)) {
            *g += coef * (w - l);
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub l2: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { lr: 0.1, epochs: 10, batch_size: 64, seed: 0, l2: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub weights: Vec<f64>,
    /// Regularized full-data objective before training.
    pub initial_loss: f64,
    /// Regularized full-data objective after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl FitReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

fn objective(weights: &[f64], pairs: &[FeaturePair], l2: f64) -> Result<f64, RewardError> {
    Ok(nll(weights, pairs)? + l2 * dot(weights, weights))
}

/// Mini-batch gradient descent on the BT loss plus `l2 * |theta|^2`, from zero weights.
pub fn fit_pairs(pairs: &[FeaturePair], dim: usize, config: &FitConfig) -> Result<FitReport, RewardError> {
    if dim == 0 {
        return Err(RewardError::Dimension { expected: 1, found: 0 });
    }
    if pairs.is_empty() {
        return Err(RewardError::EmptyBatch);
    }
    if config.batch_size == 0 || !(config.lr > 0.0) || !(config.l2 >= 0.0) {
        return Err(RewardError::Config(format!("invalid fit config {config:?}")));
    }
    let mut weights = vec![0.0; dim];
    let initial_loss = objective(&weights, pairs, config.l2)?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    let mut batch: Vec<FeaturePair> = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        order.shuffle(&mut derive_rng(config.seed, &["fit-bt".into(), epoch.into()]));
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| pairs[i].clone()));
            let grad = gradient(&weights, &batch)?;
            for (w, g) in weights.iter_mut().zip(&grad) {
                *w -= config.lr * (g + 2.0 * config.l2 * *w);
            }
            step += 1;
            if !weights.iter().all(|w| w.is_finite()) {
                return Err(RewardError::Diverged { step });
            }
        }
        let loss = objective(&weights, pairs, config.l2)?;
        if !loss.is_finite() {
            return Err(RewardError::Diverged { step });
        }
        epoch_losses.push(loss);
    }
    Ok(FitReport { weights, initial_loss, epoch_losses })
}
