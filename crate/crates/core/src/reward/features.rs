use std::collections::HashSet;

use super::RewardError;

/// Maps `(prompt, response)` to a fixed-width dense vector.
pub trait Featurizer: Send + Sync {
    /// Identifier persisted with fitted parameters.
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn features(&self, prompt: &str, response: &str) -> Vec<f64>;
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    bytes.into_iter().fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Hashed bag of character n-grams of the response (log-scaled counts), plus
/// two dense slots: the share of response words that also occur in the
/// prompt, and log word count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashingFeaturizer {
    dim: usize,
    min_n: usize,
    max_n: usize,
}

const DENSE_SLOTS: usize = 2;

impl HashingFeaturizer {
    pub fn new(dim: usize, min_n: usize, max_n: usize) -> Result<Self, RewardError> {
        if dim <= DENSE_SLOTS {
            return Err(RewardError::Dimension { expected: DENSE_SLOTS + 1, found: dim });
        }
        if min_n == 0 || min_n > max_n {
            return Err(RewardError::Config(format!("invalid n-gram range {min_n}..={max_n}")));
        }
        Ok(Self { dim, min_n, max_n })
    }

    /// Parses an id produced by [`Featurizer::id`].
    pub fn from_id(id: &str) -> Result<Self, RewardError> {
        let bad = || RewardError::Config(format!("unrecognized featurizer id {id:?}"));
        let rest = id.strip_prefix("hash-ngram-v1:").ok_or_else(bad)?;
        let mut dim = None;
        let mut range = None;
        for part in rest.split(':') {
            if let Some(d) = part.strip_prefix("d=") {
                dim = d.parse().ok();
            } else if let Some(n) = part.strip_prefix("n=") {
                let (lo, hi) = n.split_once('-').ok_or_else(bad)?;
                range = lo.parse().ok().zip(hi.parse().ok());
            }
        }
        let (dim, (lo, hi)) = dim.zip(range).ok_or_else(bad)?;
        Self::new(dim, lo, hi)
    }
}

impl Default for HashingFeaturizer {
    fn default() -> Self {
        Self::new(4096, 2, 4).expect("valid defaults")
    }
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase)
}

impl Featurizer for HashingFeaturizer {
    fn id(&self) -> String {
        format!("hash-ngram-v1:d={}:n={}-{}", self.dim, self.min_n, self.max_n)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, prompt: &str, response: &str) -> Vec<f64> {
        let mut out = vec![0.0f64; self.dim];
        let buckets = (self.dim - DENSE_SLOTS) as u64;
        let chars: Vec<char> = response.chars().collect();
        for n in self.min_n..=self.max_n {
            for gram in chars.windows(n) {
                let h = fnv1a(gram.iter().flat_map(|c| (*c as u32).to_le_bytes()).chain([n as u8]));
                out[DENSE_SLOTS + (h % buckets) as usize] += 1.0;
            }
        }
        for v in &mut out[DENSE_SLOTS..] {
            *v = v.ln_1p();
        }
        let prompt_words: HashSet<String> = words(prompt).collect();
        let (mut total, mut grounded) = (0usize, 0usize);
        for w in words(response) {
            total += 1;
            grounded += usize::from(prompt_words.contains(&w));
        }
        out[0] = if total == 0 { 0.0 } else { grounded as f64 / total as f64 };
        out[1] = (total as f64).ln_1p();
        out
    }
}
