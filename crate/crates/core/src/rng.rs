//! Deterministic, splittable randomness.
//!
//! Every random decision in a run is drawn from a generator derived from the
//! run seed plus a list of labels (stage name, record id, vote index, ...).
//! Two derivations with the same labels always yield the same stream, and
//! streams for different labels are independent of one another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Label component used when deriving a stream.
#[derive(Debug, Clone, Copy)]
pub enum Label<'a> {
    Str(&'a str),
    Int(u64),
}

impl<'a> From<&'a str> for Label<'a> {
    fn from(s: &'a str) -> Self {
        Label::Str(s)
    }
}

impl<'a> From<&'a String> for Label<'a> {
    fn from(s: &'a String) -> Self {
        Label::Str(s.as_str())
    }
}

impl From<u64> for Label<'_> {
    fn from(v: u64) -> Self {
        Label::Int(v)
    }
}

impl From<usize> for Label<'_> {
    fn from(v: usize) -> Self {
        Label::Int(v as u64)
    }
}

impl From<u32> for Label<'_> {
    fn from(v: u32) -> Self {
        Label::Int(u64::from(v))
    }
}

fn derive_bytes(seed: u64, labels: &[Label<'_>]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"longpref-rng-v1");
    hasher.update(seed.to_le_bytes());
    for label in labels {
        match label {
            Label::Str(s) => {
                hasher.update([0u8]);
                hasher.update((s.len() as u64).to_le_bytes());
                hasher.update(s.as_bytes());
            }
            Label::Int(v) => {
                hasher.update([1u8]);
                hasher.update(v.to_le_bytes());
            }
        }
    }
    let digest = hasher.finalize();
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest[..32]);
    out
}

/// Generator for the stream named by `labels` under `seed`.
pub fn derive_rng(seed: u64, labels: &[Label<'_>]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_bytes(seed, labels))
}

/// 64-bit sub-seed for the stream named by `labels`.
pub fn derive_seed(seed: u64, labels: &[Label<'_>]) -> u64 {
    let bytes = derive_bytes(seed, labels);
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}
