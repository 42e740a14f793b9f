use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{clipped_objective_grad, estimate_advantages, ClipConfig, PolicyError, StepSample};
use crate::reward::Scorer;
use crate::rng::derive_rng;

/// One state: a prompt with a fixed menu of whole responses to choose from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPrompt {
    pub prompt: String,
    pub responses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEnv {
    pub prompts: Vec<ToyPrompt>,
}

impl ToyEnv {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.prompts.is_empty() {
            return Err(PolicyError::Config("toy environment has no prompts".into()));
        }
        if let Some(i) = self.prompts.iter().position(|p| p.responses.is_empty()) {
            return Err(PolicyError::Config(format!("prompt {i} has no responses")));
        }
        Ok(())
    }
}

/// Tabular softmax policy: one logit per (state, action).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub logits: Vec<Vec<f64>>,
}

impl ToyPolicy {
    pub fn uniform(env: &ToyEnv) -> Self {
        Self { logits: env.prompts.iter().map(|p| vec![0.0; p.responses.len()]).collect() }
    }

    pub fn probs(&self, state: usize) -> Vec<f64> {
        let row = &self.logits[state];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    pub fn log_prob(&self, state: usize, action: usize) -> f64 {
        let row = &self.logits[state];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        row[action] - lse
    }

    pub fn argmax(&self, state: usize) -> usize {
        let row = &self.logits[state];
        (0..row.len()).fold(0, |best, a| if row[a] > row[best] { a } else { best })
    }

    fn sample<R: Rng>(&self, state: usize, rng: &mut R) -> usize {
        let probs = self.probs(state);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        probs.len() - 1
    }

    fn is_finite(&self) -> bool {
        self.logits.iter().flatten().all(|l| l.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub clip: ClipConfig,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Gradient-ascent passes over each sampled batch.
    pub update_epochs: usize,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self { clip: ClipConfig::default(), lr: 0.05, steps: 500, batch_size: 64, update_epochs: 4, seed: 0 }
    }
}

/// A rollout sample frozen under the behaviour policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateSample {
    pub state: usize,
    pub action: usize,
    pub logp_old: f64,
    pub advantage: f64,
}

/// Runs `update_epochs` ascent steps on the clipped objective for one batch.
/// The logit gradient of `log pi(a|s)` is `onehot(a) - pi(.|s)`.
pub fn ppo_update(
    policy: &mut ToyPolicy,
    batch: &[UpdateSample],
    clip: &ClipConfig,
    lr: f64,
    update_epochs: usize,
) -> Result<(), PolicyError> {
    for _ in 0..update_epochs {
        let samples: Vec<StepSample> = batch
            .iter()
            .map(|u| StepSample {
                state_id: u.state,
                action_id: u.action,
                logp_old: u.logp_old,
                logp_new: policy.log_prob(u.state, u.action),
                advantage: u.advantage,
            })
            .collect();
        let dlogp = clipped_objective_grad(&samples, clip)?;
        let mut grads: HashMap<usize, Vec<f64>> = HashMap::new();
        for (u, g) in batch.iter().zip(&dlogp) {
            if *g == 0.0 {
                continue;
            }
            let probs = policy.probs(u.state);
            let row = grads.entry(u.state).or_insert_with(|| vec![0.0; probs.len()]);
            for (a, p) in probs.iter().enumerate() {
                let indicator = if a == u.action { 1.0 } else { 0.0 };
                row[a] += g * (indicator - p);
            }
        }
        for (state, row) in grads {
            for (logit, g) in policy.logits[state].iter_mut().zip(row) {
                *logit += lr * g;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyRun {
    pub policy: ToyPolicy,
    /// `(step, mean reward of that step's batch)`.
    pub reward_curve: Vec<(usize, f64)>,
}

/// Sample, score, normalize, update; repeated for `cfg.steps` steps.
pub fn run_toy_ppo<S: Scorer + ?Sized>(env: &ToyEnv, scorer: &S, cfg: &PpoConfig) -> Result<ToyRun, PolicyError> {
    env.validate()?;
    cfg.clip.validate()?;
    if cfg.batch_size < 2 {
        return Err(PolicyError::Config("batch_size must be at least 2".into()));
    }
    let mut policy = ToyPolicy::uniform(env);
    let mut rewards_cache: HashMap<(usize, usize), f64> = HashMap::new();
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = derive_rng(cfg.seed, &["toy-ppo".into(), step.into()]);
        let mut picks = Vec::with_capacity(cfg.batch_size);
        let mut rewards = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let state = rng.random_range(0..env.prompts.len());
            let action = policy.sample(state, &mut rng);
            let reward = match rewards_cache.get(&(state, action)) {
                Some(r) => *r,
                None => {
                    let p = &env.prompts[state];
                    let r = scorer.score(&p.prompt, &p.responses[action])?;
                    rewards_cache.insert((state, action), r);
                    r
                }
            };
            picks.push((state, action));
            rewards.push(reward);
        }
        curve.push((step, rewards.iter().sum::<f64>() / rewards.len() as f64));
        let advantages = estimate_advantages(&rewards)?;
        let batch: Vec<UpdateSample> = picks
            .iter()
            .zip(&advantages)
            .map(|(&(state, action), &advantage)| UpdateSample {
                state,
                action,
                logp_old: policy.log_prob(state, action),
                advantage,
            })
            .collect();
        ppo_update(&mut policy, &batch, &cfg.clip, cfg.lr, cfg.update_epochs)?;
        if !policy.is_finite() {
            return Err(PolicyError::Diverged { step });
        }
    }
    Ok(ToyRun { policy, reward_curve: curve })
}

/// Two tab-separated columns: `step`, `mean_reward`.
pub fn write_reward_curve(path: impl AsRef<Path>, curve: &[(usize, f64)]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "step\tmean_reward")?;
    for (step, reward) in curve {
        writeln!(out, "{step}\t{reward}")?;
    }
    out.flush()
}
