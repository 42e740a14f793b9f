//! Clipped-surrogate policy optimization and a tabular toy environment.

mod toy;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use toy::{ppo_update, run_toy_ppo, write_reward_curve, PpoConfig, ToyEnv, ToyPolicy, ToyPrompt, ToyRun, UpdateSample};

use crate::reward::RewardError;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("sample {index}: {reason}")]
    InvalidSample { index: usize, reason: String },
    #[error("need at least 2 episodes to normalize advantages, got {0}")]
    TooFewEpisodes(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("policy parameters became non-finite at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Reward(#[from] RewardError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSample {
    pub state_id: usize,
    pub action_id: usize,
    pub logp_old: f64,
    pub logp_new: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub eps_low: f64,
    pub eps_high: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self { eps_low: 0.2, eps_high: 0.2 }
    }
}

impl ClipConfig {
    pub fn symmetric(eps: f64) -> Self {
        Self { eps_low: eps, eps_high: eps }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let ok = |e: f64| e > 0.0 && e < 1.0;
        if ok(self.eps_low) && ok(self.eps_high) {
            Ok(())
        } else {
            Err(PolicyError::Config(format!("clip epsilons must lie in (0, 1), got {self:?}")))
        }
    }

    pub fn clip(&self, ratio: f64) -> f64 {
        ratio.clamp(1.0 - self.eps_low, 1.0 + self.eps_high)
    }
}

fn ratio(index: usize, s: &StepSample) -> Result<f64, PolicyError> {
    let invalid = |reason: String| PolicyError::InvalidSample { index, reason };
    for (name, lp) in [("logp_old", s.logp_old), ("logp_new", s.logp_new)] {
        if !lp.is_finite() || lp > 0.0 {
            return Err(invalid(format!("{name} = {lp} is not a finite log-probability")));
        }
    }
    if !s.advantage.is_finite() {
        return Err(invalid(format!("advantage {} is not finite", s.advantage)));
    }
    let r = (s.logp_new - s.logp_old).exp();
    if !r.is_finite() {
        return Err(invalid(format!("probability ratio {r} is not finite")));
    }
    Ok(r)
}

fn validated(samples: &[StepSample], cfg: &ClipConfig) -> Result<Vec<f64>, PolicyError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(PolicyError::Config("empty sample batch".into()));
    }
    samples.iter().enumerate().map(|(i, s)| ratio(i, s)).collect()
}

/// Mean over samples of `min(r * A, clip(r, 1 - eps_low, 1 + eps_high) * A)`
/// with `r = exp(logp_new - logp_old)`.
pub fn clipped_objective(samples: &[StepSample], cfg: &ClipConfig) -> Result<f64, PolicyError> {
    let ratios = validated(samples, cfg)?;
    let total: f64 = samples
        .iter()
        .zip(&ratios)
        .map(|(s, &r)| (r * s.advantage).min(cfg.clip(r) * s.advantage))
        .sum();
    Ok(total / samples.len() as f64)
}

/// Mean of the unclipped surrogate `r * A`.
pub fn unclipped_objective(samples: &[StepSample], cfg: &ClipConfig) -> Result<f64, PolicyError> {
    let ratios = validated(samples, cfg)?;
    Ok(samples.iter().zip(&ratios).map(|(s, &r)| r * s.advantage).sum::<f64>() / samples.len() as f64)
}

/// Whether the unclipped branch is the active minimum, i.e. the sample still
/// contributes gradient.
fn unclipped_active(r: f64, advantage: f64, cfg: &ClipConfig) -> bool {
    if advantage >= 0.0 {
        r <= 1.0 + cfg.eps_high
    } else {
        r >= 1.0 - cfg.eps_low
    }
}

/// Gradient of [`clipped_objective`] with respect to each sample's `logp_new`.
/// Zero for samples whose ratio has left the clip range in the direction of
/// their advantage.
pub fn clipped_objective_grad(samples: &[StepSample], cfg: &ClipConfig) -> Result<Vec<f64>, PolicyError> {
    let ratios = validated(samples, cfg)?;
    let n = samples.len() as f64;
    Ok(samples
        .iter()
        .zip(&ratios)
        .map(|(s, &r)| if unclipped_active(r, s.advantage, cfg) { r * s.advantage / n } else { 0.0 })
        .collect())
}

/// Batch-normalized returns: `(reward - mean) / max(std, 1e-8)` using the
/// population standard deviation.
pub fn estimate_advantages(episode_rewards: &[f64]) -> Result<Vec<f64>, PolicyError> {
    let n = episode_rewards.len();
    if n < 2 {
        return Err(PolicyError::TooFewEpisodes(n));
    }
    if let Some(i) = episode_rewards.iter().position(|r| !r.is_finite()) {
        return Err(PolicyError::InvalidSample { index: i, reason: "non-finite reward".into() });
    }
    let mean = episode_rewards.iter().sum::<f64>() / n as f64;
    let var = episode_rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    let scale = var.sqrt().max(1e-8);
    Ok(episode_rewards.iter().map(|r| (r - mean) / scale).collect())
}
