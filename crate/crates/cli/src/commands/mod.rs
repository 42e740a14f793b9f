pub mod annotate;
pub mod data;
pub mod evaluate;
pub mod reward;

use longpref::corpus::{load_records, split_dataset, PromptRecord, SplitSpec, TaskKind, TemplateSet};
use longpref::generation::{CachedCompleter, CandidatePair, HttpCompleter};
use longpref::judge::{Adjudication, JudgePrompts};
use longpref::rng::derive_seed;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::run::{write_jsonl, RunDir};

/// Split name used when no split is configured.
pub const ALL: &str = "all";

pub struct Ctx {
    pub config: RunConfig,
    pub dir: RunDir,
}

impl Ctx {
    pub fn completer(&self) -> Result<CachedCompleter<HttpCompleter>> {
        let http = &self.config.http;
        let inner = HttpCompleter::new(http.retry(), http.max_in_flight, http.timeout())?;
        Ok(CachedCompleter::new(inner, self.dir.cache())?)
    }

    pub fn templates(&self) -> Result<TemplateSet> {
        Ok(match &self.config.templates_dir {
            Some(dir) => TemplateSet::from_dir(dir)?,
            None => TemplateSet::default(),
        })
    }

    pub fn judge_prompts(&self) -> Result<JudgePrompts> {
        Ok(JudgePrompts::default().with_sources(self.templates()?))
    }

    /// Split to read when none is named: `test` if splits are configured.
    pub fn eval_split(&self, requested: Option<&str>) -> String {
        requested.map_or_else(|| if self.config.split.is_some() { "test" } else { ALL }.to_owned(), str::to_owned)
    }

    pub fn train_split(&self) -> &'static str {
        if self.config.split.is_some() {
            "train"
        } else {
            ALL
        }
    }

    /// Loads every configured corpus, renders prompts and applies the split.
    /// Split files are written as a side effect.
    pub fn prompt_items(&self) -> Result<Vec<PromptItem>> {
        let templates = self.templates()?;
        let corpora = self.config.corpus_paths()?;
        if corpora.is_empty() {
            return Err(CliError::Config("no corpus configured".into()));
        }
        let mut items = Vec::new();
        for (task, path) in corpora {
            let report = load_records(&path, task)?;
            if !report.rejected.is_empty() {
                log::warn!("{}: rejected {} lines", path.display(), report.rejected.len());
                for e in report.rejected.iter().take(5) {
                    log::warn!("  {e}");
                }
            }
            let groups: Vec<(&str, Vec<PromptRecord>)> = match self.config.split {
                Some(s) => {
                    let seed = derive_seed(self.config.stage_seed("split"), &[task.code().into()]);
                    let spec = SplitSpec { train_n: s.train_n, dev_n: s.dev_n, test_n: s.test_n, seed };
                    let splits = split_dataset(&report.records, spec)?;
                    vec![("train", splits.train), ("dev", splits.dev), ("test", splits.test)]
                }
                None => vec![(ALL, report.records)],
            };
            for (split, records) in groups {
                write_jsonl(&self.dir.path(&format!("splits/{}_{split}.jsonl", task.code())), &records)?;
                for record in records {
                    let prompt = templates.render(&record)?;
                    items.push(PromptItem { split: split.to_owned(), task, record, prompt });
                }
            }
        }
        Ok(items)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptItem {
    pub split: String,
    pub task: TaskKind,
    pub record: PromptRecord,
    pub prompt: String,
}

/// One line of `pairs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub split: String,
    pub task: TaskKind,
    pub record: PromptRecord,
    pub prompt: String,
    pub pair: CandidatePair,
}

/// One line of `judgments.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgedPair {
    pub task: TaskKind,
    pub record_id: String,
    pub adjudication: Adjudication,
}

/// A response to one prompt, as exchanged between `bon` and `winrate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub task: TaskKind,
    pub record_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}
