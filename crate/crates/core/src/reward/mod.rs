//! Bradley-Terry reward scoring: feature extraction, fitting, pluggable
//! scorers and pairwise-accuracy evaluation.

mod bt;
mod features;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bt::{bt_gradient, bt_nll, fit_pairs, pair_loss, sigmoid, softplus, FeaturePair, FitConfig, FitReport};
pub use features::{Featurizer, HashingFeaturizer};

use crate::store::{PreferenceTriplet, TaskKey};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("empty batch or test set")]
    EmptyBatch,
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("scorer {scorer} failed: {message}")]
    Scorer { scorer: String, message: String },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub const PARAMS_VERSION: u32 = 1;

/// Weights of a linear BT scorer, tied to the featurizer that produced its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerParams {
    pub version: u32,
    pub featurizer_id: String,
    pub d: usize,
    pub weights: Vec<f64>,
}

impl ScorerParams {
    pub fn new(featurizer_id: impl Into<String>, weights: Vec<f64>) -> Self {
        Self { version: PARAMS_VERSION, featurizer_id: featurizer_id.into(), d: weights.len(), weights }
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        if self.version != PARAMS_VERSION {
            return Err(RewardError::Config(format!("unsupported params version {}", self.version)));
        }
        if self.d != self.weights.len() {
            return Err(RewardError::Dimension { expected: self.d, found: self.weights.len() });
        }
        if !self.weights.iter().all(|w| w.is_finite()) {
            return Err(RewardError::NonFinite("weights".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RewardError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("params serialize");
        std::fs::write(path, text + "\n")
            .map_err(|e| RewardError::Io { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RewardError> {
        let path = path.as_ref();
        let io = |message: String| RewardError::Io { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        let params: Self = serde_json::from_str(&text).map_err(|e| io(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }
}

/// Higher score = more preferred.
pub trait Scorer: Send + Sync {
    fn name(&self) -> String;
    fn score(&self, prompt: &str, response: &str) -> Result<f64, RewardError>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn name(&self) -> String {
        (**self).name()
    }

    fn score(&self, prompt: &str, response: &str) -> Result<f64, RewardError> {
        (**self).score(prompt, response)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn score(&self, prompt: &str, response: &str) -> Result<f64, RewardError> {
        (**self).score(prompt, response)
    }
}

/// `theta . phi(prompt, response)`.
pub struct LinearBt<F> {
    featurizer: F,
    params: ScorerParams,
}

impl<F: Featurizer> LinearBt<F> {
    pub fn new(featurizer: F, params: ScorerParams) -> Result<Self, RewardError> {
        params.validate()?;
        if params.featurizer_id != featurizer.id() {
            return Err(RewardError::Config(format!(
                "params were fit with {} but featurizer is {}",
                params.featurizer_id,
                featurizer.id()
            )));
        }
        if params.d != featurizer.dim() {
            return Err(RewardError::Dimension { expected: featurizer.dim(), found: params.d });
        }
        Ok(Self { featurizer, params })
    }

    pub fn params(&self) -> &ScorerParams {
        &self.params
    }
}

impl LinearBt<HashingFeaturizer> {
    /// Loads params and rebuilds the hashing featurizer named in them.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RewardError> {
        let params = ScorerParams::load(path)?;
        let featurizer = HashingFeaturizer::from_id(&params.featurizer_id)?;
        Self::new(featurizer, params)
    }
}

impl<F: Featurizer> Scorer for LinearBt<F> {
    fn name(&self) -> String {
        format!("linear-bt[{}]", self.params.featurizer_id)
    }

    fn score(&self, prompt: &str, response: &str) -> Result<f64, RewardError> {
        let phi = self.featurizer.features(prompt, response);
        Ok(phi.iter().zip(&self.params.weights).map(|(x, w)| x * w).sum())
    }
}

/// Scorer behind an HTTP endpoint: `POST {prompt, response}` returns `{score}`.
pub struct RemoteScorer {
    name: String,
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl RemoteScorer {
    pub fn new(name: impl Into<String>, endpoint: impl Into<String>, timeout: Duration) -> Result<Self, RewardError> {
        let endpoint = endpoint.into();
        reqwest::Url::parse(&endpoint).map_err(|e| RewardError::Config(format!("endpoint {endpoint:?}: {e}")))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| RewardError::Config(e.to_string()))?;
        Ok(Self { name: name.into(), endpoint, client })
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    prompt: &'a str,
    response: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

impl Scorer for RemoteScorer {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn score(&self, prompt: &str, response: &str) -> Result<f64, RewardError> {
        let fail = |message: String| RewardError::Scorer { scorer: self.name.clone(), message };
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&ScoreRequest { prompt, response })
            .send()
            .map_err(|e| fail(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(fail(format!("HTTP {}", resp.status().as_u16())));
        }
        let body: ScoreResponse = resp.json().map_err(|e| fail(e.to_string()))?;
        if !body.score.is_finite() {
            return Err(fail("non-finite score".into()));
        }
        Ok(body.score)
    }
}

type QualityFn = dyn Fn(&str, &str) -> Option<f64> + Send + Sync;

/// Scorer that returns a planted ground-truth quality. Used to build
/// instances whose correct answers are known by construction.
pub struct PlantedOracle {
    name: String,
    quality: Box<QualityFn>,
}

impl PlantedOracle {
    pub fn new<F>(name: impl Into<String>, quality: F) -> Self
    where
        F: Fn(&str, &str) -> Option<f64> + Send + Sync + 'static,
    {
        Self { name: name.into(), quality: Box::new(quality) }
    }

    /// Quality looked up by response text.
    pub fn from_table(name: impl Into<String>, table: BTreeMap<String, f64>) -> Self {
        Self::new(name, move |_, response| table.get(response).copied())
    }
}

impl Scorer for PlantedOracle {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn score(&self, prompt: &str, response: &str) -> Result<f64, RewardError> {
        (self.quality)(prompt, response).ok_or_else(|| RewardError::Scorer {
            scorer: self.name.clone(),
            message: "response has no planted quality".into(),
        })
    }
}

/// Same score for everything.
pub struct ConstantScorer(pub f64);

impl Scorer for ConstantScorer {
    fn name(&self) -> String {
        format!("constant({})", self.0)
    }

    fn score(&self, _: &str, _: &str) -> Result<f64, RewardError> {
        Ok(self.0)
    }
}

/// Featurizes triplets into `(chosen, rejected)` vector pairs.
pub fn featurize<F: Featurizer + ?Sized>(triplets: &[PreferenceTriplet], featurizer: &F) -> Vec<FeaturePair> {
    triplets
        .par_iter()
        .map(|t| (featurizer.features(&t.prompt, &t.chosen), featurizer.features(&t.prompt, &t.rejected)))
        .collect()
}

/// Fits a linear BT scorer on preference triplets.
pub fn fit_bt<F: Featurizer>(
    triplets: &[PreferenceTriplet],
    featurizer: &F,
    config: &FitConfig,
) -> Result<(ScorerParams, FitReport), RewardError> {
    if triplets.is_empty() {
        return Err(RewardError::EmptyBatch);
    }
    let pairs = featurize(triplets, featurizer);
    let report = fit_pairs(&pairs, featurizer.dim(), config)?;
    Ok((ScorerParams::new(featurizer.id(), report.weights.clone()), report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub accuracy: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub overall: f64,
    pub n: usize,
    pub per_task: BTreeMap<String, TaskAccuracy>,
}

/// Credit for one comparison: 1 if chosen outranks rejected, 0.5 on an exact tie.
pub fn pair_credit(chosen: f64, rejected: f64) -> f64 {
    if chosen > rejected {
        1.0
    } else if chosen == rejected {
        0.5
    } else {
        0.0
    }
}

/// Share of triplets where the scorer ranks `chosen` above `rejected`.
pub fn pairwise_accuracy<S: Scorer + ?Sized>(
    scorer: &S,
    testset: &[PreferenceTriplet],
) -> Result<AccuracyReport, RewardError> {
    if testset.is_empty() {
        return Err(RewardError::EmptyBatch);
    }
    let credits: Vec<(TaskKey, f64)> = testset
        .par_iter()
        .map(|t| {
            let c = scorer.score(&t.prompt, &t.chosen)?;
            let r = scorer.score(&t.prompt, &t.rejected)?;
            Ok((t.task_key(), pair_credit(c, r)))
        })
        .collect::<Result<_, RewardError>>()?;
    let mut groups: BTreeMap<TaskKey, (f64, usize)> = BTreeMap::new();
    for (key, credit) in &credits {
        let g = groups.entry(*key).or_default();
        g.0 += credit;
        g.1 += 1;
    }
    let total: f64 = credits.iter().map(|(_, c)| c).sum();
    Ok(AccuracyReport {
        overall: total / credits.len() as f64,
        n: credits.len(),
        per_task: groups
            .into_iter()
            .map(|(k, (sum, n))| (k.to_string(), TaskAccuracy { accuracy: sum / n as f64, n }))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TaskKind;
    use crate::store::Source;

    fn triplet(task: TaskKind, chosen: &str, rejected: &str) -> PreferenceTriplet {
        PreferenceTriplet::new(Some(task), "p".into(), chosen.into(), rejected.into(), Source::External, None).unwrap()
    }

    #[test]
    fn planted_oracle_is_perfect_and_constant_is_chance() {
        let set = vec![
            triplet(TaskKind::QuestionAnswering, "good", "bad"),
            triplet(TaskKind::Summarization, "great", "poor"),
        ];
        let table: BTreeMap<_, _> =
            [("good", 2.0), ("bad", 1.0), ("great", 5.0), ("poor", 0.0)].map(|(k, v)| (k.to_owned(), v)).into();
        let oracle = PlantedOracle::from_table("oracle", table);
        let report = pairwise_accuracy(&oracle, &set).unwrap();
        assert_eq!(report.overall, 1.0);
        assert_eq!(report.per_task["qa"], TaskAccuracy { accuracy: 1.0, n: 1 });
        assert_eq!(pairwise_accuracy(&ConstantScorer(3.0), &set).unwrap().overall, 0.5);
    }

    #[test]
    fn empty_testset_is_error() {
        assert!(matches!(pairwise_accuracy(&ConstantScorer(0.0), &[]), Err(RewardError::EmptyBatch)));
    }

    #[test]
    fn shift_leaves_accuracy_unchanged() {
        let set: Vec<_> = (0..20)
            .map(|i| triplet(TaskKind::Summarization, &format!("c{i}"), &format!("r{}", i * 7 % 20)))
            .collect();
        let score = |s: &str| (s.len() * 31 % 17) as f64 + if s.starts_with('c') { 0.5 } else { 0.0 };
        let base = PlantedOracle::new("base", move |_, r| Some(score(r)));
        let shifted = PlantedOracle::new("shifted", move |_, r| Some(score(r) + 1234.5));
        assert_eq!(pairwise_accuracy(&base, &set).unwrap().overall, pairwise_accuracy(&shifted, &set).unwrap().overall);
    }

    #[test]
    fn params_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let f = HashingFeaturizer::new(16, 2, 3).unwrap();
        let params = ScorerParams::new(f.id(), vec![0.25; 16]);
        let path = dir.path().join("params.json");
        params.save(&path).unwrap();
        let scorer = LinearBt::load(&path).unwrap();
        assert_eq!(scorer.params(), &params);
        let other = HashingFeaturizer::new(32, 2, 3).unwrap();
        assert!(LinearBt::new(other, params).is_err());
    }

    #[test]
    fn unknown_planted_response_errors() {
        let oracle = PlantedOracle::from_table("o", BTreeMap::new());
        assert!(oracle.score("p", "x").is_err());
    }
}
