use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use longpref::corpus::TaskKind;
use longpref::generation::{validate_pool, ModelSpec, RetryPolicy, Sampling, DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE};
use longpref::judge::{DEFAULT_JUDGE_TEMPERATURE, DEFAULT_VOTES};
use longpref::policy::ClipConfig;
use longpref::reward::{FitConfig, HashingFeaturizer};
use longpref::rng::derive_seed;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model_id: String,
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ModelConfig {
    fn spec(&self, default_temperature: f64) -> ModelSpec {
        ModelSpec {
            model_id: self.model_id.clone(),
            endpoint: self.endpoint.clone(),
            auth_ref: self.auth_env.clone(),
            sampling: Sampling {
                temperature: self.temperature.unwrap_or(default_temperature),
                max_tokens: self.max_tokens.unwrap_or(DEFAULT_MAX_TOKENS),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train_n: usize,
    pub dev_n: usize,
    pub test_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        Self {
            max_attempts: retry.max_attempts,
            base_delay_ms: retry.base_delay.as_millis() as u64,
            max_delay_ms: retry.max_delay.as_millis() as u64,
            max_in_flight: 8,
            timeout_secs: 120,
        }
    }
}

impl HttpConfig {
    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts,
            base_delay: Duration::from_millis(self.base_delay_ms),
            max_delay: Duration::from_millis(self.max_delay_ms),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub featurizer: String,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        let fit = FitConfig::default();
        Self {
            featurizer: longpref::reward::Featurizer::id(&HashingFeaturizer::default()),
            lr: fit.lr,
            epochs: fit.epochs,
            batch_size: fit.batch_size,
            l2: fit.l2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoSection {
    pub eps_low: f64,
    pub eps_high: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub update_epochs: usize,
}

impl Default for PpoSection {
    fn default() -> Self {
        let d = longpref::policy::PpoConfig::default();
        Self {
            eps_low: d.clip.eps_low,
            eps_high: d.clip.eps_high,
            lr: d.lr,
            steps: d.steps,
            batch_size: d.batch_size,
            update_epochs: d.update_epochs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationSection {
    pub annotators: Vec<String>,
    pub judgments_per_task: usize,
    /// Environment variable holding the shared secret.
    pub secret_env: Option<String>,
    pub bind: String,
}

impl Default for AnnotationSection {
    fn default() -> Self {
        Self { annotators: Vec::new(), judgments_per_task: 3, secret_env: None, bind: "127.0.0.1:8080".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Corpus file per task code (`qa`, `d2t`, `sum`).
    #[serde(default)]
    pub corpus: BTreeMap<String, PathBuf>,
    /// Per-task split sizes; without it every record is treated as one split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitConfig>,
    /// Directory with qa.txt / d2t.txt / sum.txt overriding the built-in prompts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<PathBuf>,
    #[serde(default)]
    pub pool: Vec<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<ModelConfig>,
    #[serde(default = "default_votes")]
    pub votes: usize,
    #[serde(default)]
    pub http: HttpConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub ppo: PpoSection,
    #[serde(default)]
    pub annotation: AnnotationSection,
}

fn default_votes() -> usize {
    DEFAULT_VOTES
}

fn config_err(message: impl Into<String>) -> CliError {
    CliError::Config(message.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        // relative paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut config.output_dir);
        config.corpus.values_mut().for_each(rebase);
        if let Some(dir) = config.templates_dir.as_mut() {
            rebase(dir);
        }
        Ok(config)
    }

    /// Checks everything that can be checked without touching the network.
    pub fn validate(&self) -> Result<()> {
        for code in self.corpus.keys() {
            code.parse::<TaskKind>().map_err(|e| config_err(e.to_string()))?;
        }
        if self.votes == 0 || self.votes % 2 == 0 {
            return Err(config_err(format!("votes must be odd and positive, got {}", self.votes)));
        }
        if !self.pool.is_empty() {
            validate_pool(&self.pool_specs()).map_err(|e| config_err(e.to_string()))?;
        }
        if let Some(judge) = self.judge_spec() {
            judge.validate().map_err(|e| config_err(e.to_string()))?;
        }
        HashingFeaturizer::from_id(&self.reward.featurizer).map_err(|e| config_err(e.to_string()))?;
        self.ppo_config().clip.validate().map_err(|e| config_err(e.to_string()))?;
        let a = &self.annotation;
        if a.judgments_per_task == 0 || a.judgments_per_task % 2 == 0 {
            return Err(config_err("annotation.judgments_per_task must be odd"));
        }
        Ok(())
    }

    pub fn pool_specs(&self) -> Vec<ModelSpec> {
        self.pool.iter().map(|m| m.spec(DEFAULT_TEMPERATURE)).collect()
    }

    pub fn judge_spec(&self) -> Option<ModelSpec> {
        self.judge.as_ref().map(|m| m.spec(DEFAULT_JUDGE_TEMPERATURE))
    }

    pub fn model(&self, model_id: &str) -> Result<ModelSpec> {
        self.pool_specs()
            .into_iter()
            .find(|m| m.model_id == model_id)
            .ok_or_else(|| config_err(format!("model {model_id:?} is not in the pool")))
    }

    pub fn corpus_paths(&self) -> Result<Vec<(TaskKind, PathBuf)>> {
        self.corpus
            .iter()
            .map(|(code, path)| Ok((code.parse::<TaskKind>().map_err(|e| config_err(e.to_string()))?, path.clone())))
            .collect()
    }

    /// Seed of one pipeline stage, derived from the run seed.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, &["stage".into(), stage.into()])
    }

    pub fn fit_config(&self) -> FitConfig {
        let r = &self.reward;
        FitConfig { lr: r.lr, epochs: r.epochs, batch_size: r.batch_size, seed: self.stage_seed("train-rm"), l2: r.l2 }
    }

    pub fn ppo_config(&self) -> longpref::policy::PpoConfig {
        let p = &self.ppo;
        longpref::policy::PpoConfig {
            clip: ClipConfig { eps_low: p.eps_low, eps_high: p.eps_high },
            lr: p.lr,
            steps: p.steps,
            batch_size: p.batch_size,
            update_epochs: p.update_epochs,
            seed: self.stage_seed("ppo-toy"),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
