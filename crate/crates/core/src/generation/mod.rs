//! Candidate generation from a pool of chat-completion endpoints.

mod cache;
mod http;

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::CachedCompleter;
pub use http::{HttpCompleter, RetryPolicy};

use crate::corpus::PromptRecord;
use crate::rng::{derive_rng, derive_seed};

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("transient failure calling {model_id} after {attempts} attempts: {message}")]
    Transient { model_id: String, attempts: u32, message: String },
    #[error("{model_id} returned HTTP {status}: {body}")]
    Http { model_id: String, status: u16, body: String },
    #[error("{model_id} returned an empty completion")]
    EmptyResponse { model_id: String },
    #[error("malformed response from {model_id}: {message}")]
    Protocol { model_id: String, message: String },
    #[error("cache i/o error: {0}")]
    Cache(#[from] std::io::Error),
}

impl GenerationError {
    pub fn is_config(&self) -> bool {
        matches!(self, GenerationError::Config(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Sampling {
    fn default() -> Self {
        Self { temperature: DEFAULT_TEMPERATURE, max_tokens: DEFAULT_MAX_TOKENS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token, if any.
    #[serde(default)]
    pub auth_ref: Option<String>,
    #[serde(default)]
    pub sampling: Sampling,
}

impl ModelSpec {
    pub fn new(model_id: impl Into<String>, endpoint: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            endpoint: endpoint.into(),
            auth_ref: None,
            sampling: Sampling::default(),
        }
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.model_id.is_empty() {
            return Err(GenerationError::Config("model_id must be non-empty".into()));
        }
        reqwest::Url::parse(&self.endpoint).map_err(|e| {
            GenerationError::Config(format!("{}: invalid endpoint {:?}: {e}", self.model_id, self.endpoint))
        })?;
        if self.sampling.max_tokens == 0 {
            return Err(GenerationError::Config(format!("{}: max_tokens must be >= 1", self.model_id)));
        }
        if !(self.sampling.temperature.is_finite() && self.sampling.temperature >= 0.0) {
            return Err(GenerationError::Config(format!(
                "{}: temperature must be finite and >= 0",
                self.model_id
            )));
        }
        Ok(())
    }
}

/// Validates every model and id uniqueness within the pool.
pub fn validate_pool(pool: &[ModelSpec]) -> Result<(), GenerationError> {
    let mut seen = std::collections::HashSet::new();
    for model in pool {
        model.validate()?;
        if !seen.insert(model.model_id.as_str()) {
            return Err(GenerationError::Config(format!("duplicate model_id {:?} in pool", model.model_id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    /// Forwarded as the request `seed`; also part of the cache key so that
    /// repeated samples of one prompt are cached separately.
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn user(prompt: impl Into<String>, seed: Option<u64>) -> Self {
        Self { messages: vec![ChatMessage::user(prompt)], seed }
    }

    pub fn with_system(system: impl Into<String>, user: impl Into<String>, seed: Option<u64>) -> Self {
        Self { messages: vec![ChatMessage::system(system), ChatMessage::user(user)], seed }
    }
}

/// Anything that can turn a chat request into assistant text.
pub trait Completer: Send + Sync {
    fn complete(&self, model: &ModelSpec, request: &ChatRequest) -> Result<String, GenerationError>;
}

impl<C: Completer + ?Sized> Completer for &C {
    fn complete(&self, model: &ModelSpec, request: &ChatRequest) -> Result<String, GenerationError> {
        (**self).complete(model, request)
    }
}

impl<C: Completer + ?Sized> Completer for std::sync::Arc<C> {
    fn complete(&self, model: &ModelSpec, request: &ChatRequest) -> Result<String, GenerationError> {
        (**self).complete(model, request)
    }
}

impl<C: Completer + ?Sized> Completer for Box<C> {
    fn complete(&self, model: &ModelSpec, request: &ChatRequest) -> Result<String, GenerationError> {
        (**self).complete(model, request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResponse {
    pub record_id: String,
    pub model_id: String,
    pub text: String,
    pub sampling: Sampling,
    #[serde(default)]
    pub sample_index: u32,
    pub content_hash: String,
}

/// Stable digest of everything that determines a generation.
pub fn content_hash(
    record_id: &str,
    model_id: &str,
    prompt: &str,
    sampling: &Sampling,
    sample_index: u32,
) -> String {
    let mut h = Sha256::new();
    for part in [record_id, model_id, prompt] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    h.update(sampling.temperature.to_bits().to_le_bytes());
    h.update(sampling.max_tokens.to_le_bytes());
    h.update(sample_index.to_le_bytes());
    hex::encode(h.finalize())
}

/// Generates sample `sample_index` of `model` for a rendered prompt.
pub fn generate_candidate<C: Completer + ?Sized>(
    completer: &C,
    record_id: &str,
    prompt: &str,
    model: &ModelSpec,
    seed: u64,
    sample_index: u32,
) -> Result<CandidateResponse, GenerationError> {
    let request_seed =
        derive_seed(seed, &["generate".into(), record_id.into(), (&model.model_id).into(), sample_index.into()]);
    let text = completer.complete(model, &ChatRequest::user(prompt, Some(request_seed)))?;
    if text.trim().is_empty() {
        return Err(GenerationError::EmptyResponse { model_id: model.model_id.clone() });
    }
    Ok(CandidateResponse {
        record_id: record_id.to_owned(),
        model_id: model.model_id.clone(),
        text,
        sampling: model.sampling,
        sample_index,
        content_hash: content_hash(record_id, &model.model_id, prompt, &model.sampling, sample_index),
    })
}

/// Position of unordered pair `rank` among all pairs `(i, j)`, `i < j < n`,
/// enumerated row by row.
fn unrank_pair(mut rank: usize, n: usize) -> (usize, usize) {
    for i in 0..n - 1 {
        let row = n - 1 - i;
        if rank < row {
            return (i, i + 1 + rank);
        }
        rank -= row;
    }
    unreachable!("rank out of range")
}

/// Picks two distinct models uniformly over unordered pairs. The draw is keyed by
/// `(record_id, seed)` and the sorted model ids, so pool order is irrelevant.
/// Returns indices into `pool`, the first having the smaller model id.
pub fn select_model_pair(
    record_id: &str,
    pool: &[ModelSpec],
    seed: u64,
) -> Result<(usize, usize), GenerationError> {
    if pool.len() < 2 {
        return Err(GenerationError::Config(format!(
            "model pool needs at least 2 models, got {}",
            pool.len()
        )));
    }
    let mut sorted: Vec<usize> = (0..pool.len()).collect();
    sorted.sort_by(|&a, &b| pool[a].model_id.cmp(&pool[b].model_id));
    let n = pool.len();
    let total = n * (n - 1) / 2;
    let rank = derive_rng(seed, &["pair".into(), record_id.into()]).random_range(0..total);
    let (i, j) = unrank_pair(rank, n);
    Ok((sorted[i], sorted[j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub record_id: String,
    pub first: CandidateResponse,
    pub second: CandidateResponse,
}

/// Samples two candidates from distinct models for one record.
pub fn sample_pair_candidates<C: Completer + ?Sized>(
    completer: &C,
    record: &PromptRecord,
    prompt: &str,
    pool: &[ModelSpec],
    seed: u64,
) -> Result<CandidatePair, GenerationError> {
    let (a, b) = select_model_pair(&record.id, pool, seed)?;
    let first = generate_candidate(completer, &record.id, prompt, &pool[a], seed, 0)?;
    let second = generate_candidate(completer, &record.id, prompt, &pool[b], seed, 0)?;
    Ok(CandidatePair { record_id: record.id.clone(), first, second })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub record_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct SampleRun {
    pub pairs: Vec<CandidatePair>,
    pub failures: Vec<Failure>,
}

/// Samples pairs for every `(record, prompt)` concurrently. Failed records are
/// tallied, not fatal; configuration errors abort. Output follows input order.
pub fn sample_all<C: Completer + ?Sized>(
    completer: &C,
    items: &[(PromptRecord, String)],
    pool: &[ModelSpec],
    seed: u64,
) -> Result<SampleRun, GenerationError> {
    validate_pool(pool)?;
    let results: Vec<_> = items
        .par_iter()
        .map(|(record, prompt)| (record.id.clone(), sample_pair_candidates(completer, record, prompt, pool, seed)))
        .collect();
    let mut run = SampleRun::default();
    for (id, result) in results {
        match result {
            Ok(pair) => run.pairs.push(pair),
            Err(e) if e.is_config() => return Err(e),
            Err(e) => {
                log::warn!("record {id}: generation failed: {e}");
                run.failures.push(Failure { record_id: id, error: e.to_string() });
            }
        }
    }
    Ok(run)
}

impl fmt::Display for CandidateResponse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}#{}", self.model_id, self.record_id, self.sample_index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn pool(n: usize) -> Vec<ModelSpec> {
        (0..n).map(|i| ModelSpec::new(format!("m{i:02}"), "http://localhost:1/v1/chat/completions")).collect()
    }

    #[test]
    fn unrank_enumerates_all_pairs() {
        let n = 12;
        let pairs: Vec<_> = (0..n * (n - 1) / 2).map(|r| unrank_pair(r, n)).collect();
        let set: std::collections::HashSet<_> = pairs.iter().collect();
        assert_eq!(set.len(), 66);
        assert!(pairs.iter().all(|&(i, j)| i < j && j < n));
    }

    #[test]
    fn pair_of_two_is_fixed() {
        let p = pool(2);
        for r in 0..50 {
            assert_eq!(select_model_pair(&format!("r{r}"), &p, 9).unwrap(), (0, 1));
        }
    }

    #[test]
    fn pool_too_small() {
        assert!(select_model_pair("r", &pool(1), 0).unwrap_err().is_config());
    }

    #[test]
    fn pair_selection_uniform_chi_square() {
        let p = pool(12);
        let draws = 10_000;
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        for r in 0..draws {
            let (a, b) = select_model_pair(&format!("rec-{r}"), &p, 2024).unwrap();
            assert_ne!(a, b);
            *counts.entry((a.min(b), a.max(b))).or_default() += 1;
        }
        assert_eq!(counts.len(), 66);
        let expected = draws as f64 / 66.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9th percentile of chi-square with 65 degrees of freedom
        let critical = statrs::distribution::ContinuousCDF::inverse_cdf(
            &statrs::distribution::ChiSquared::new(65.0).unwrap(),
            0.999,
        );
        assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
    }

    #[test]
    fn pair_selection_ignores_pool_order() {
        let p = pool(7);
        let mut rev = p.clone();
        rev.reverse();
        for r in 0..100 {
            let id = format!("r{r}");
            let (a, b) = select_model_pair(&id, &p, 5).unwrap();
            let (c, d) = select_model_pair(&id, &rev, 5).unwrap();
            let mut x = [&p[a].model_id, &p[b].model_id];
            let mut y = [&rev[c].model_id, &rev[d].model_id];
            x.sort();
            y.sort();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn content_hash_is_stable_and_sensitive() {
        let s = Sampling::default();
        let h = content_hash("r", "m", "p", &s, 0);
        assert_eq!(h, content_hash("r", "m", "p", &s, 0));
        assert_ne!(h, content_hash("r", "m", "p", &s, 1));
        assert_ne!(h, content_hash("r", "m", "p2", &s, 0));
        assert_ne!(content_hash("ab", "c", "p", &s, 0), content_hash("a", "bc", "p", &s, 0));
    }

    #[test]
    fn model_validation() {
        let mut m = ModelSpec::new("m", "not a url");
        assert!(m.validate().is_err());
        m.endpoint = "http://localhost/x".into();
        m.sampling.max_tokens = 0;
        assert!(m.validate().is_err());
        let dup = vec![ModelSpec::new("a", "http://x/"), ModelSpec::new("a", "http://y/")];
        assert!(validate_pool(&dup).is_err());
    }
}
