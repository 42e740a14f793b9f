//! Win rate, Best-of-N selection, human/AI agreement and scorer benchmarking.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PromptRecord, TaskKind};
use crate::generation::{generate_candidate, CandidateResponse, Completer, GenerationError, ModelSpec};
use crate::judge::{adjudicate_pair, JudgeError, JudgePrompts, Side};
use crate::reward::{pair_credit, pairwise_accuracy, RewardError, Scorer};
use crate::store::PreferenceTriplet;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty evaluation input")]
    Empty,
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error("all {n} generations failed; last error: {last}")]
    AllGenerationsFailed { n: usize, last: GenerationError },
    #[error("unmatched pair ids: {0:?}")]
    UnmatchedIds(Vec<String>),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Wilson score interval for a proportion (successes may be fractional).
pub fn wilson_interval(successes: f64, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinRateCounts {
    pub wins: f64,
    pub losses: f64,
    pub n: usize,
    pub win_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl WinRateCounts {
    /// Counts from per-pair credits in `[0, 1]` (0.5 = tie).
    pub fn from_credits(credits: &[f64]) -> Self {
        let n = credits.len();
        let wins: f64 = credits.iter().sum();
        let (ci_low, ci_high) = wilson_interval(wins, n);
        Self { wins, losses: n as f64 - wins, n, win_rate: if n == 0 { 0.0 } else { wins / n as f64 }, ci_low, ci_high }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateReport {
    pub evaluator: String,
    pub overall: WinRateCounts,
    pub per_task: BTreeMap<String, WinRateCounts>,
}

/// Baseline and new response for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRatePair {
    pub record: PromptRecord,
    pub prompt: String,
    pub baseline: String,
    pub candidate: String,
}

pub enum Evaluator<'a> {
    Scorer(&'a dyn Scorer),
    Judge { completer: &'a dyn Completer, prompts: &'a JudgePrompts, judge: &'a ModelSpec, k: usize, seed: u64 },
}

impl Evaluator<'_> {
    fn describe(&self) -> String {
        match self {
            Evaluator::Scorer(s) => format!("scorer:{}", s.name()),
            Evaluator::Judge { judge, k, .. } => format!("judge:{} k={k}", judge.model_id),
        }
    }

    /// Credit for the new response: 1 win, 0 loss, 0.5 tie or no consensus.
    fn credit(&self, pair: &WinRatePair) -> Result<f64, EvalError> {
        match self {
            Evaluator::Scorer(scorer) => {
                let new = scorer.score(&pair.prompt, &pair.candidate)?;
                let old = scorer.score(&pair.prompt, &pair.baseline)?;
                Ok(pair_credit(new, old))
            }
            Evaluator::Judge { completer, prompts, judge, k, seed } => {
                let adj =
                    adjudicate_pair(*completer, prompts, &pair.record, &pair.baseline, &pair.candidate, judge, *k, *seed)?;
                Ok(match adj.outcome.winner() {
                    Some(Side::Second) => 1.0,
                    Some(Side::First) => 0.0,
                    None => 0.5,
                })
            }
        }
    }
}

/// Share of pairs where the new response is preferred over the baseline.
pub fn win_rate(pairs: &[WinRatePair], evaluator: &Evaluator<'_>) -> Result<WinRateReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let credits: Vec<(TaskKind, f64)> = pairs
        .par_iter()
        .map(|p| evaluator.credit(p).map(|c| (p.record.task, c)))
        .collect::<Result<_, _>>()?;
    let mut by_task: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (task, c) in &credits {
        by_task.entry(task.code().to_owned()).or_default().push(*c);
    }
    let all: Vec<f64> = credits.iter().map(|(_, c)| *c).collect();
    Ok(WinRateReport {
        evaluator: evaluator.describe(),
        overall: WinRateCounts::from_credits(&all),
        per_task: by_task.into_iter().map(|(k, v)| (k, WinRateCounts::from_credits(&v))).collect(),
    })
}

impl WinRateReport {
    pub fn to_table(&self) -> String {
        let mut out = format!("win rate ({})\n{:<8} {:>8} {:>8} {:>6} {:>9} {:>17}\n", self.evaluator, "task", "wins", "losses", "n", "win_rate", "95% CI");
        let rows = self.per_task.iter().map(|(k, v)| (k.as_str(), v)).chain([("all", &self.overall)]);
        for (task, c) in rows {
            let _ = writeln!(
                out,
                "{task:<8} {:>8.1} {:>8.1} {:>6} {:>9.3} [{:.3}, {:.3}]",
                c.wins, c.losses, c.n, c.win_rate, c.ci_low, c.ci_high
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: CandidateResponse,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestOfN {
    /// Index into `candidates`.
    pub selected: usize,
    pub candidates: Vec<ScoredCandidate>,
}

impl BestOfN {
    pub fn selected(&self) -> &ScoredCandidate {
        &self.candidates[self.selected]
    }
}

/// Index of the maximum score; ties go to the lowest index.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Generates `n` samples from `generator` and keeps the highest-scoring one.
/// Failed samples are dropped; all failing is an error.
pub fn best_of_n<C: Completer + ?Sized, S: Scorer + ?Sized>(
    completer: &C,
    record_id: &str,
    prompt: &str,
    generator: &ModelSpec,
    scorer: &S,
    n: usize,
    seed: u64,
) -> Result<BestOfN, EvalError> {
    if n == 0 {
        return Err(EvalError::Invalid("n must be at least 1".into()));
    }
    let mut candidates = Vec::with_capacity(n);
    let mut last_err = None;
    for i in 0..n as u32 {
        match generate_candidate(completer, record_id, prompt, generator, seed, i) {
            Ok(c) => {
                let score = scorer.score(prompt, &c.text)?;
                candidates.push(ScoredCandidate { candidate: c, score });
            }
            Err(e) if e.is_config() => return Err(EvalError::Judge(e.into())),
            Err(e) => last_err = Some(e),
        }
    }
    let scores: Vec<f64> = candidates.iter().map(|c| c.score).collect();
    match argmax_first(&scores) {
        Some(selected) => Ok(BestOfN { selected, candidates }),
        None => Err(EvalError::AllGenerationsFailed { n, last: last_err.expect("n >= 1 attempts") }),
    }
}

/// One side's final label for a pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledOutcome {
    pub pair_id: String,
    pub task: TaskKind,
    /// `None` = no consensus.
    pub winner: Option<Side>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskAgreement {
    pub agreement: Option<f64>,
    pub matches: usize,
    pub n: usize,
    /// Pairs dropped because either side had no consensus.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub overall: TaskAgreement,
    pub per_task: BTreeMap<String, TaskAgreement>,
}

fn agreement_of(matches: usize, n: usize, excluded: usize) -> TaskAgreement {
    TaskAgreement { agreement: (n > 0).then(|| matches as f64 / n as f64), matches, n, excluded }
}

/// Share of pairs where both sides picked the same winner.
pub fn agreement_rate(human: &[LabeledOutcome], ai: &[LabeledOutcome]) -> Result<AgreementReport, EvalError> {
    let h: BTreeMap<&str, &LabeledOutcome> = human.iter().map(|o| (o.pair_id.as_str(), o)).collect();
    let a: BTreeMap<&str, &LabeledOutcome> = ai.iter().map(|o| (o.pair_id.as_str(), o)).collect();
    let h_ids: BTreeSet<&str> = h.keys().copied().collect();
    let a_ids: BTreeSet<&str> = a.keys().copied().collect();
    let unmatched: Vec<String> = h_ids.symmetric_difference(&a_ids).map(|s| s.to_string()).collect();
    if !unmatched.is_empty() {
        return Err(EvalError::UnmatchedIds(unmatched));
    }
    if h.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut tasks: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for (id, ho) in &h {
        let ao = a[id];
        let entry = tasks.entry(ho.task.code().to_owned()).or_default();
        match (ho.winner, ao.winner) {
            (Some(x), Some(y)) => {
                entry.1 += 1;
                entry.0 += usize::from(x == y);
            }
            _ => entry.2 += 1,
        }
    }
    let (m, n, x) = tasks.values().fold((0, 0, 0), |acc, t| (acc.0 + t.0, acc.1 + t.1, acc.2 + t.2));
    Ok(AgreementReport {
        overall: agreement_of(m, n, x),
        per_task: tasks.into_iter().map(|(k, (m, n, x))| (k, agreement_of(m, n, x))).collect(),
    })
}

impl AgreementReport {
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<8} {:>9} {:>8} {:>6} {:>9}\n", "task", "agreement", "matches", "n", "excluded");
        let rows = self.per_task.iter().map(|(k, v)| (k.as_str(), v)).chain([("all", &self.overall)]);
        for (task, t) in rows {
            let rate = t.agreement.map_or_else(|| "-".to_owned(), |r| format!("{r:.3}"));
            let _ = writeln!(out, "{task:<8} {rate:>9} {:>8} {:>6} {:>9}", t.matches, t.n, t.excluded);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub scorer: String,
    pub per_task: BTreeMap<String, f64>,
    /// Mean of the per-task accuracies.
    pub average: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub tasks: Vec<String>,
    pub rows: Vec<BenchmarkRow>,
}

/// Pairwise accuracy per scorer and task, sorted by average (descending).
/// A failing scorer is reported as errored without affecting the others.
pub fn benchmark_scorers(scorers: &[&dyn Scorer], testset: &[PreferenceTriplet]) -> Result<BenchmarkReport, EvalError> {
    if testset.is_empty() {
        return Err(EvalError::Empty);
    }
    let tasks: BTreeSet<String> = testset.iter().map(|t| t.task_key().to_string()).collect();
    let mut rows: Vec<BenchmarkRow> = scorers
        .iter()
        .map(|s| match pairwise_accuracy(*s, testset) {
            Ok(report) => {
                let per_task: BTreeMap<String, f64> =
                    report.per_task.into_iter().map(|(k, v)| (k, v.accuracy)).collect();
                let average = per_task.values().sum::<f64>() / per_task.len() as f64;
                BenchmarkRow { scorer: s.name(), per_task, average: Some(average), error: None }
            }
            Err(e) => BenchmarkRow { scorer: s.name(), per_task: BTreeMap::new(), average: None, error: Some(e.to_string()) },
        })
        .collect();
    rows.sort_by(|a, b| match (a.average, b.average) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    Ok(BenchmarkReport { tasks: tasks.into_iter().collect(), rows })
}

impl BenchmarkReport {
    /// Accuracies as percentages, one row per scorer.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.scorer.len()).max().unwrap_or(6).max(6);
        let mut out = format!("{:<width$}", "scorer");
        for t in &self.tasks {
            let _ = write!(out, " {t:>8}");
        }
        out.push_str("  average\n");
        for row in &self.rows {
            let _ = write!(out, "{:<width$}", row.scorer);
            match &row.error {
                Some(e) => {
                    let _ = writeln!(out, " errored: {e}");
                }
                None => {
                    for t in &self.tasks {
                        let cell = row.per_task.get(t).map_or_else(|| "-".to_owned(), |a| format!("{:.1}", 100.0 * a));
                        let _ = write!(out, " {cell:>8}");
                    }
                    let _ = writeln!(out, " {:>8.1}", 100.0 * row.average.unwrap_or(f64::NAN));
                }
            }
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        self.rows.iter().map(|r| serde_json::to_string(r).expect("row serializes") + "\n").collect()
    }
}
