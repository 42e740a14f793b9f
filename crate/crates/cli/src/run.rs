use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

const STAGES: [&str; 9] = ["split", "sample", "judge", "mix", "train-rm", "winrate", "winrate-judge", "bon", "ppo-toy"];

/// Exclusive hold on a run directory, released on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = fs::read_to_string(&path).unwrap_or_default();
                Err(CliError::Config(format!(
                    "{} is locked by process {} (delete {} if that process is gone)",
                    dir.display(),
                    holder.trim(),
                    path.display()
                )))
            }
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Layout of a run directory.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(config: &RunConfig) -> Self {
        Self { root: config.output_dir.clone() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn cache(&self) -> PathBuf {
        self.path("cache")
    }
    pub fn pairs(&self) -> PathBuf {
        self.path("pairs.jsonl")
    }
    pub fn judgments(&self) -> PathBuf {
        self.path("judgments.jsonl")
    }
    pub fn triplets(&self, split: &str) -> PathBuf {
        self.path(&format!("triplets/{split}.jsonl"))
    }
    pub fn params(&self) -> PathBuf {
        self.path("rm/params.json")
    }
    pub fn report(&self, name: &str) -> PathBuf {
        self.path(&format!("reports/{name}"))
    }

    /// Stores the effective config and per-stage seeds for provenance.
    pub fn record_provenance(&self, config: &RunConfig) -> Result<()> {
        write_atomic(&self.path("config.toml"), config.to_toml().as_bytes())?;
        let seeds: serde_json::Map<String, serde_json::Value> =
            STAGES.iter().map(|s| (s.to_string(), config.stage_seed(s).into())).collect();
        let manifest = serde_json::json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "seed": config.seed,
            "stage_seeds": seeds,
        });
        write_atomic(&self.path("manifest.json"), format!("{manifest:#}\n").as_bytes())
    }
}

/// Writes via a sibling temp file and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    let mut f = File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = BufWriter::new(Vec::new());
    for row in rows {
        serde_json::to_writer(&mut buf, row).expect("row serializes");
        buf.write_all(b"\n").expect("in-memory write");
    }
    write_atomic(path, &buf.into_inner().expect("in-memory buffer"))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Data(format!("{} not found (run the earlier stage first?)", path.display())),
        _ => CliError::io(path, e),
    })?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes") + "\n";
    write_atomic(path, text.as_bytes())
}
