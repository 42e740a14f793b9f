//! Preference triplets `(prompt, chosen, rejected)`: construction, line-delimited
//! persistence, external-dataset ingestion and seeded mixing.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::TaskKind;
use crate::generation::CandidatePair;
use crate::judge::{Outcome, Side, Tally};
use crate::rng::derive_rng;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("pair {0} has no consensus winner")]
    NoConsensus(String),
    #[error("invalid triplet {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("cannot take {take} items from a set of {available} (set {set})")]
    TakeTooLarge { set: usize, take: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    AiJudge,
    Human,
    External,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tally: Option<Tally>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub annotator_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected_model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceTriplet {
    pub id: String,
    /// `None` for external data outside the three built-in tasks.
    pub task: Option<TaskKind>,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Content digest used as the triplet id.
pub fn triplet_id(task: Option<TaskKind>, prompt: &str, chosen: &str, rejected: &str) -> String {
    let mut h = Sha256::new();
    h.update(task.map_or("ext", TaskKind::code).as_bytes());
    for part in [prompt, chosen, rejected] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

impl PreferenceTriplet {
    pub fn new(
        task: Option<TaskKind>,
        prompt: String,
        chosen: String,
        rejected: String,
        source: Source,
        provenance: Option<Provenance>,
    ) -> Result<Self, StoreError> {
        let triplet = Self {
            id: triplet_id(task, &prompt, &chosen, &rejected),
            task,
            prompt,
            chosen,
            rejected,
            source,
            provenance,
        };
        triplet.validate()?;
        Ok(triplet)
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        let invalid = |reason: &str| StoreError::Invalid { id: self.id.clone(), reason: reason.into() };
        if self.chosen == self.rejected {
            return Err(invalid("chosen and rejected are identical"));
        }
        if self.prompt.is_empty() {
            return Err(invalid("empty prompt"));
        }
        if self.source != Source::External && self.provenance.is_none() {
            return Err(invalid("provenance required for judged triplets"));
        }
        Ok(())
    }

    pub fn task_key(&self) -> TaskKey {
        TaskKey(self.task)
    }
}

/// Per-task grouping key; external data groups as `ext`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskKey(pub Option<TaskKind>);

impl fmt::Display for TaskKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0.map_or("ext", TaskKind::code))
    }
}

/// Triplet from an adjudicated pair; the consensus winner becomes `chosen`.
pub fn build_triplet(
    task: TaskKind,
    prompt: &str,
    pair: &CandidatePair,
    outcome: &Outcome,
) -> Result<PreferenceTriplet, StoreError> {
    let preference = outcome.preference().ok_or_else(|| StoreError::NoConsensus(pair.record_id.clone()))?;
    let (chosen, rejected) = match preference.winner {
        Side::First => (&pair.first, &pair.second),
        Side::Second => (&pair.second, &pair.first),
    };
    let provenance = Provenance {
        tally: Some(preference.tally),
        judge_model_id: Some(preference.judge_model_id.clone()),
        annotator_ids: Vec::new(),
        chosen_model: Some(chosen.model_id.clone()),
        rejected_model: Some(rejected.model_id.clone()),
        record_id: Some(pair.record_id.clone()),
    };
    PreferenceTriplet::new(
        Some(task),
        prompt.to_owned(),
        chosen.text.clone(),
        rejected.text.clone(),
        Source::AiJudge,
        Some(provenance),
    )
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.display().to_string(), source }
}

/// Appends triplets to a line-delimited file, one JSON object per line.
pub struct TripletWriter {
    out: BufWriter<File>,
    path: String,
}

impl TripletWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(io_err(path))?;
        Ok(Self { out: BufWriter::new(file), path: path.display().to_string() })
    }

    pub fn append(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
        Ok(Self { out: BufWriter::new(file), path: path.display().to_string() })
    }

    pub fn write(&mut self, triplet: &PreferenceTriplet) -> Result<(), StoreError> {
        triplet.validate()?;
        let line = serde_json::to_string(triplet).expect("triplet serializes");
        writeln!(self.out, "{line}").map_err(|source| StoreError::Io { path: self.path.clone(), source })
    }

    pub fn finish(mut self) -> Result<(), StoreError> {
        self.out.flush().map_err(|source| StoreError::Io { path: self.path.clone(), source })
    }
}

pub fn write_triplets(path: impl AsRef<Path>, triplets: &[PreferenceTriplet]) -> Result<(), StoreError> {
    let mut writer = TripletWriter::create(path)?;
    for t in triplets {
        writer.write(t)?;
    }
    writer.finish()
}

pub fn read_triplets(path: impl AsRef<Path>) -> Result<Vec<PreferenceTriplet>, StoreError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| StoreError::Parse { path: path.display().to_string(), line: i + 1, message };
        let triplet: PreferenceTriplet = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        triplet.validate().map_err(|e| parse_err(e.to_string()))?;
        out.push(triplet);
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct ExternalRecord {
    prompt: String,
    chosen: String,
    rejected: String,
}

/// Reads an external `{prompt, chosen, rejected}` dataset as `External` triplets.
/// Degenerate records (identical responses) are skipped; the skip count is returned.
pub fn read_external(path: impl AsRef<Path>) -> Result<(Vec<PreferenceTriplet>, usize), StoreError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    let mut skipped = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExternalRecord = serde_json::from_str(&line).map_err(|e| StoreError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        match PreferenceTriplet::new(None, rec.prompt, rec.chosen, rec.rejected, Source::External, None) {
            Ok(t) => out.push(t),
            Err(_) => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} degenerate external records", path.display());
    }
    Ok((out, skipped))
}

/// One input to [`mix_datasets`].
#[derive(Debug, Clone)]
pub struct MixSource<'a> {
    pub triplets: &'a [PreferenceTriplet],
    pub take: usize,
    pub seed: u64,
}

/// Seeded uniform subsample of each source, concatenated, then globally
/// shuffled with `shuffle_seed`.
pub fn mix_datasets(sources: &[MixSource<'_>], shuffle_seed: u64) -> Result<Vec<PreferenceTriplet>, StoreError> {
    let mut out = Vec::with_capacity(sources.iter().map(|s| s.take).sum());
    for (set, source) in sources.iter().enumerate() {
        if source.take > source.triplets.len() {
            return Err(StoreError::TakeTooLarge { set, take: source.take, available: source.triplets.len() });
        }
        let mut rng = derive_rng(source.seed, &["mix-subsample".into(), set.into()]);
        let mut picked = index::sample(&mut rng, source.triplets.len(), source.take).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| source.triplets[i].clone()));
    }
    out.shuffle(&mut derive_rng(shuffle_seed, &["mix-shuffle".into()]));
    Ok(out)
}
