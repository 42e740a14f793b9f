//! Rubric-driven pairwise adjudication with k-vote majority aggregation.
//!
//! Each of the k judge calls sees the two candidates in an independently
//! randomized order. Every verdict records that order so its A/B answer can
//! be mapped back to the stored First/Second candidates before voting.

mod parse;
mod vote;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_metrics, parse_overall};
pub use vote::{majority_vote, tally_votes, Outcome, Preference, Tally};

use crate::corpus::{CorpusError, PromptRecord, TaskKind, Template, TemplateSet};
use crate::generation::{CandidatePair, ChatRequest, Completer, GenerationError, ModelSpec};
use crate::rng::{derive_rng, derive_seed};

pub const DEFAULT_VOTES: usize = 3;
pub const DEFAULT_JUDGE_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error("{0} response is empty")]
    EmptyResponse(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    Hallucination,
    Comprehensiveness,
    Verbosity,
    Attribution,
}

impl Metric {
    pub const ALL: [Metric; 4] =
        [Metric::Hallucination, Metric::Comprehensiveness, Metric::Verbosity, Metric::Attribution];

    /// Metrics judged for a task; Attribution is question answering only.
    pub fn applicable(task: TaskKind) -> &'static [Metric] {
        match task {
            TaskKind::QuestionAnswering => &Metric::ALL,
            TaskKind::DataToText | TaskKind::Summarization => &Metric::ALL[..3],
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Candidate as stored in the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    First,
    Second,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::First => Side::Second,
            Side::Second => Side::First,
        }
    }
}

/// Candidate as shown to a judge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Overall {
    A,
    B,
    Unparseable,
}

impl Overall {
    pub fn label(self) -> Option<Label> {
        match self {
            Overall::A => Some(Label::A),
            Overall::B => Some(Label::B),
            Overall::Unparseable => None,
        }
    }
}

/// Which stored candidate was shown as "A".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PresentationOrder {
    FirstAsA,
    SecondAsA,
}

impl PresentationOrder {
    pub fn resolve(self, label: Label) -> Side {
        match (self, label) {
            (PresentationOrder::FirstAsA, Label::A) | (PresentationOrder::SecondAsA, Label::B) => Side::First,
            _ => Side::Second,
        }
    }

    pub fn label_of(self, side: Side) -> Label {
        match (self, side) {
            (PresentationOrder::FirstAsA, Side::First) | (PresentationOrder::SecondAsA, Side::Second) => Label::A,
            _ => Label::B,
        }
    }

    pub fn random<R: Rng>(rng: &mut R) -> Self {
        if rng.random_bool(0.5) {
            PresentationOrder::FirstAsA
        } else {
            PresentationOrder::SecondAsA
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub record_id: String,
    pub vote_index: u32,
    pub presentation_order: PresentationOrder,
    pub per_metric: BTreeMap<Metric, Label>,
    pub overall: Overall,
    pub raw_text: String,
    /// Set when the judge call itself failed; such a verdict is invalid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl JudgeVerdict {
    /// The stored candidate this verdict voted for, if valid.
    pub fn side(&self) -> Option<Side> {
        self.overall.label().map(|l| self.presentation_order.resolve(l))
    }
}

/// Parses raw judge output. Never fails; an unreadable answer is `Unparseable`.
pub fn parse_verdict(raw: &str, presentation_order: PresentationOrder) -> JudgeVerdict {
    JudgeVerdict {
        record_id: String::new(),
        vote_index: 0,
        presentation_order,
        per_metric: parse_metrics(raw),
        overall: parse_overall(raw),
        raw_text: raw.to_owned(),
        error: None,
    }
}

const RUBRIC_QA: &str = include_str!("../../assets/rubric_qa.txt");
const RUBRIC_D2T: &str = include_str!("../../assets/rubric_d2t.txt");
const RUBRIC_SUM: &str = include_str!("../../assets/rubric_sum.txt");
const JUDGE_USER: &str = include_str!("../../assets/judge_user.txt");

/// Rubric system prompts per task plus the user-message layout.
#[derive(Debug, Clone)]
pub struct JudgePrompts {
    rubrics: [String; 3],
    user: Template,
    sources: TemplateSet,
}

impl Default for JudgePrompts {
    fn default() -> Self {
        Self {
            rubrics: [RUBRIC_QA, RUBRIC_D2T, RUBRIC_SUM].map(|s| s.trim_end_matches('\n').to_owned()),
            user: Template::parse(JUDGE_USER).expect("builtin judge template"),
            sources: TemplateSet::default(),
        }
    }
}

fn task_slot(task: TaskKind) -> usize {
    match task {
        TaskKind::QuestionAnswering => 0,
        TaskKind::DataToText => 1,
        TaskKind::Summarization => 2,
    }
}

impl JudgePrompts {
    pub fn with_sources(mut self, sources: TemplateSet) -> Self {
        self.sources = sources;
        self
    }

    /// Overrides from `rubric_{qa,d2t,sum}.txt` and `judge_user.txt` in `dir`, when present.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, JudgeError> {
        let mut prompts = Self::default();
        let read = |name: &str| -> Result<Option<String>, JudgeError> {
            let path = dir.as_ref().join(name);
            if !path.exists() {
                return Ok(None);
            }
            std::fs::read_to_string(&path)
                .map(|s| Some(s.trim_end_matches('\n').to_owned()))
                .map_err(|e| JudgeError::Config(format!("{}: {e}", path.display())))
        };
        for task in TaskKind::ALL {
            if let Some(text) = read(&format!("rubric_{}.txt", task.code()))? {
                prompts.rubrics[task_slot(task)] = text;
            }
        }
        if let Some(text) = read("judge_user.txt")? {
            prompts.user = Template::parse(&text)?;
        }
        Ok(prompts)
    }

    pub fn rubric(&self, task: TaskKind) -> &str {
        &self.rubrics[task_slot(task)]
    }

    /// System and user messages for one comparison.
    pub fn build(
        &self,
        record: &PromptRecord,
        response_a: &str,
        response_b: &str,
    ) -> Result<(String, String), JudgeError> {
        if response_a.trim().is_empty() {
            return Err(JudgeError::EmptyResponse("A"));
        }
        if response_b.trim().is_empty() {
            return Err(JudgeError::EmptyResponse("B"));
        }
        let source = self.sources.render(record)?;
        let user = self.user.render(|name| match name {
            "source" => Some(source.as_str().into()),
            "response_a" => Some(response_a.into()),
            "response_b" => Some(response_b.into()),
            _ => None,
        })?;
        Ok((self.rubric(record.task).to_owned(), user))
    }
}

/// Judge prompt pair with the built-in rubrics.
pub fn build_judge_prompt(
    task: TaskKind,
    record: &PromptRecord,
    response_a: &str,
    response_b: &str,
) -> Result<(String, String), JudgeError> {
    if task != record.task {
        return Err(JudgeError::Config(format!("record {} is {}, not {task}", record.id, record.task)));
    }
    JudgePrompts::default().build(record, response_a, response_b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjudication {
    pub record_id: String,
    pub outcome: Outcome,
    pub verdicts: Vec<JudgeVerdict>,
}

/// Runs k independent judge calls on a pair and majority-votes them.
///
/// A failed call becomes an invalid vote; configuration errors abort.
pub fn adjudicate_pair<C: Completer + ?Sized>(
    completer: &C,
    prompts: &JudgePrompts,
    record: &PromptRecord,
    first: &str,
    second: &str,
    judge: &ModelSpec,
    k: usize,
    seed: u64,
) -> Result<Adjudication, JudgeError> {
    if k == 0 || k % 2 == 0 {
        return Err(JudgeError::Config(format!("vote count must be odd and positive, got {k}")));
    }
    let mut verdicts = Vec::with_capacity(k);
    for vote_index in 0..k as u32 {
        let labels = ["judge".into(), (&record.id).into(), vote_index.into()];
        let order = PresentationOrder::random(&mut derive_rng(seed, &labels));
        let (a, b) = match order {
            PresentationOrder::FirstAsA => (first, second),
            PresentationOrder::SecondAsA => (second, first),
        };
        let (system, user) = prompts.build(record, a, b)?;
        let request = ChatRequest::with_system(system, user, Some(derive_seed(seed, &labels)));
        let mut verdict = match completer.complete(judge, &request) {
            Ok(raw) => parse_verdict(&raw, order),
            Err(e) if e.is_config() => return Err(e.into()),
            Err(e) => {
                log::warn!("judge call {vote_index} for {} failed: {e}", record.id);
                JudgeVerdict {
                    record_id: String::new(),
                    vote_index,
                    presentation_order: order,
                    per_metric: BTreeMap::new(),
                    overall: Overall::Unparseable,
                    raw_text: String::new(),
                    error: Some(e.to_string()),
                }
            }
        };
        verdict.record_id = record.id.clone();
        verdict.vote_index = vote_index;
        verdicts.push(verdict);
    }
    let outcome = majority_vote(&verdicts, &judge.model_id)?;
    Ok(Adjudication { record_id: record.id.clone(), outcome, verdicts })
}

/// Adjudicates many pairs concurrently; results follow input order.
pub fn adjudicate_all<C: Completer + ?Sized>(
    completer: &C,
    prompts: &JudgePrompts,
    items: &[(&PromptRecord, &CandidatePair)],
    judge: &ModelSpec,
    k: usize,
    seed: u64,
) -> Result<Vec<Adjudication>, JudgeError> {
    items
        .par_iter()
        .map(|(record, pair)| {
            adjudicate_pair(completer, prompts, record, &pair.first.text, &pair.second.text, judge, k, seed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qa() -> PromptRecord {
        PromptRecord::question_answering("q1", "Why?", vec!["because".into()])
    }

    #[test]
    fn qa_rubric_has_attribution() {
        let (system, user) = build_judge_prompt(TaskKind::QuestionAnswering, &qa(), "one", "two").unwrap();
        assert!(system.contains("Attribution (Attribution & Use of Retrieved Content)"));
        assert!(system.starts_with("You are an expert in evaluating question-answering (QA) responses."));
        assert!(system.ends_with("Chosen: (A or B)"));
        assert!(user.contains("Response A:\none"));
        assert!(user.contains("Response B:\ntwo"));
        assert!(user.contains("Answer the following question: Why?"));
    }

    #[test]
    fn summarization_and_d2t_rubrics_omit_attribution() {
        let sum = PromptRecord::summarization("s", "doc");
        let (system, _) = build_judge_prompt(TaskKind::Summarization, &sum, "x", "y").unwrap();
        assert!(!system.contains("Attribution"));
        assert!(system.contains("Hallucination") && system.contains("Comprehensiveness") && system.contains("Conciseness"));
        let mut m = serde_json::Map::new();
        m.insert("name".into(), "The Green Pheasant".into());
        let d2t = PromptRecord::data_to_text("d", m);
        let (system, _) = build_judge_prompt(TaskKind::DataToText, &d2t, "x", "y").unwrap();
        assert!(!system.contains("Attribution"));
        assert!(system.contains("Yelp-style JSON"));
    }

    #[test]
    fn swapping_responses_swaps_only_bodies() {
        let (s1, u1) = build_judge_prompt(TaskKind::QuestionAnswering, &qa(), "alpha", "beta").unwrap();
        let (s2, u2) = build_judge_prompt(TaskKind::QuestionAnswering, &qa(), "beta", "alpha").unwrap();
        assert_eq!(s1, s2);
        let swapped = u1.replace("alpha", "\u{0}").replace("beta", "alpha").replace('\u{0}', "beta");
        assert_eq!(swapped, u2);
    }

    #[test]
    fn empty_response_rejected() {
        assert!(build_judge_prompt(TaskKind::QuestionAnswering, &qa(), "", "x").is_err());
        assert!(build_judge_prompt(TaskKind::Summarization, &qa(), "y", "x").is_err());
    }

    #[test]
    fn order_mapping_round_trips() {
        for order in [PresentationOrder::FirstAsA, PresentationOrder::SecondAsA] {
            for side in [Side::First, Side::Second] {
                assert_eq!(order.resolve(order.label_of(side)), side);
            }
        }
    }

    #[test]
    fn attribution_only_for_qa() {
        assert!(Metric::applicable(TaskKind::QuestionAnswering).contains(&Metric::Attribution));
        assert!(!Metric::applicable(TaskKind::Summarization).contains(&Metric::Attribution));
        assert!(!Metric::applicable(TaskKind::DataToText).contains(&Metric::Attribution));
    }

    struct Failing;

    impl Completer for Failing {
        fn complete(&self, model: &ModelSpec, _: &ChatRequest) -> Result<String, GenerationError> {
            Err(GenerationError::Transient { model_id: model.model_id.clone(), attempts: 3, message: "down".into() })
        }
    }

    #[test]
    fn all_calls_failing_is_no_consensus() {
        let judge = ModelSpec::new("judge", "http://x/");
        let adj = adjudicate_pair(&Failing, &JudgePrompts::default(), &qa(), "a", "b", &judge, 3, 1).unwrap();
        assert_eq!(adj.outcome, Outcome::NoConsensus { tally: Tally { first: 0, second: 0, invalid: 3 }, judge_model_id: "judge".into() });
        assert!(adj.verdicts.iter().all(|v| v.error.is_some()));
    }

    #[test]
    fn even_k_is_config_error() {
        let judge = ModelSpec::new("judge", "http://x/");
        assert!(matches!(
            adjudicate_pair(&Failing, &JudgePrompts::default(), &qa(), "a", "b", &judge, 2, 1),
            Err(JudgeError::Config(_))
        ));
    }
}
