use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatMessage, ChatRequest, Completer, GenerationError, ModelSpec};

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model: &'a str,
    endpoint: &'a str,
    temperature: f64,
    max_tokens: u32,
    messages: &'a [ChatMessage],
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    model_id: String,
    content: String,
}

/// Content-addressed on-disk cache in front of another completer.
///
/// Concurrent requests for the same key are serialized so the inner
/// completer sees each key at most once.
pub struct CachedCompleter<C> {
    inner: C,
    dir: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<C: Completer> CachedCompleter<C> {
    pub fn new(inner: C, dir: impl Into<PathBuf>) -> Result<Self, GenerationError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            inner,
            dir,
            locks: Mutex::new(HashMap::new()),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn key(model: &ModelSpec, request: &ChatRequest) -> String {
        let material = KeyMaterial {
            model: &model.model_id,
            endpoint: &model.endpoint,
            temperature: model.sampling.temperature,
            max_tokens: model.sampling.max_tokens,
            messages: &request.messages,
            seed: request.seed,
        };
        let bytes = serde_json::to_vec(&material).expect("key serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    /// Number of requests forwarded to the inner completer.
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn read(&self, key: &str) -> Option<String> {
        let text = fs::read_to_string(self.path(key)).ok()?;
        let entry: Entry = serde_json::from_str(&text).ok()?;
        (entry.key == key).then_some(entry.content)
    }

    fn write(&self, key: &str, model_id: &str, content: &str) -> Result<(), GenerationError> {
        let path = self.path(key);
        fs::create_dir_all(path.parent().expect("cache path has parent"))?;
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        let entry = Entry { key: key.to_owned(), model_id: model_id.to_owned(), content: content.to_owned() };
        let mut f = fs::File::create(&tmp)?;
        f.write_all(serde_json::to_string(&entry).expect("entry serializes").as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}

impl<C: Completer> Completer for CachedCompleter<C> {
    fn complete(&self, model: &ModelSpec, request: &ChatRequest) -> Result<String, GenerationError> {
        let key = Self::key(model, request);
        if let Some(hit) = self.read(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        let lock = self.locks.lock().entry(key.clone()).or_default().clone();
        let _guard = lock.lock();
        if let Some(hit) = self.read(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let content = self.inner.complete(model, request)?;
        self.write(&key, &model.model_id, &content)?;
        Ok(content)
    }
}
