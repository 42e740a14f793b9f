//! Human pairwise annotation: task queue, judgment log and majority voting.
//!
//! State is event-sourced from an append-only JSONL log of accepted
//! judgments. Opening a service over an existing log replays it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TaskKind;
use crate::eval::{agreement_rate, AgreementReport, EvalError, LabeledOutcome};
use crate::judge::{majority_vote, JudgeVerdict, Label, Metric, Outcome, Overall, PresentationOrder, Side};
use crate::rng::derive_rng;

pub const SCHEMA_VERSION: u32 = 1;
pub const HUMAN_JUDGE_ID: &str = "human";

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("unknown annotator {0:?}")]
    UnknownAnnotator(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("missing judgments for metrics: {}", join(.missing))]
    MissingMetrics { missing: Vec<Metric> },
    #[error("metrics not applicable to this task: {}", join(.unexpected))]
    UnexpectedMetrics { unexpected: Vec<Metric> },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("judgment log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn join(metrics: &[Metric]) -> String {
    metrics.iter().map(Metric::to_string).collect::<Vec<_>>().join(", ")
}

/// One pair to be annotated, with the AI label it will be compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationItem {
    pub task_id: String,
    pub task: TaskKind,
    pub prompt: String,
    pub first: String,
    pub second: String,
    /// AI judge outcome; never shown to annotators.
    #[serde(default)]
    pub ai: Option<Outcome>,
}

/// What an annotator is shown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub task: TaskKind,
    pub prompt_text: String,
    pub response_a: String,
    pub response_b: String,
    pub metrics: Vec<Metric>,
    pub assigned_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanJudgment {
    pub task_id: String,
    pub annotator_id: String,
    pub per_metric: BTreeMap<Metric, Label>,
    pub overall: Label,
    /// Milliseconds since the Unix epoch; filled in on submit when zero.
    #[serde(default)]
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextTask {
    Task(AnnotationTask),
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationConfig {
    pub annotators: Vec<String>,
    /// Judgments collected per task; must be odd.
    pub judgments_per_task: usize,
    /// Seeds the frozen A/B order of every task.
    pub seed: u64,
}

impl AnnotationConfig {
    pub fn new(annotators: Vec<String>, seed: u64) -> Self {
        Self { annotators, judgments_per_task: 3, seed }
    }

    fn validate(&self) -> Result<(), AnnotationError> {
        if self.judgments_per_task == 0 || self.judgments_per_task % 2 == 0 {
            return Err(AnnotationError::Config(format!(
                "judgments_per_task must be odd, got {}",
                self.judgments_per_task
            )));
        }
        if self.annotators.is_empty() {
            return Err(AnnotationError::Config("no annotators registered".into()));
        }
        Ok(())
    }
}

/// Per-task state as reconstructed from the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskState {
    pub item: AnnotationItem,
    pub order: PresentationOrder,
    pub judgments: Vec<HumanJudgment>,
    /// Set once the task has its full set of judgments; never changes after.
    pub human: Option<Outcome>,
}

impl TaskState {
    fn view(&self) -> AnnotationTask {
        let (a, b) = match self.order {
            PresentationOrder::FirstAsA => (&self.item.first, &self.item.second),
            PresentationOrder::SecondAsA => (&self.item.second, &self.item.first),
        };
        AnnotationTask {
            task_id: self.item.task_id.clone(),
            task: self.item.task,
            prompt_text: self.item.prompt.clone(),
            response_a: a.clone(),
            response_b: b.clone(),
            metrics: Metric::applicable(self.item.task).to_vec(),
            assigned_count: self.judgments.len(),
        }
    }

    fn judged_by(&self, annotator: &str) -> bool {
        self.judgments.iter().any(|j| j.annotator_id == annotator)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub tasks: usize,
    pub fully_judged: usize,
    pub judgments: usize,
    pub per_annotator: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct State {
    tasks: Vec<TaskState>,
    index: HashMap<String, usize>,
    annotators: BTreeSet<String>,
    required: usize,
}

impl State {
    fn new(items: Vec<AnnotationItem>, config: &AnnotationConfig) -> Result<Self, AnnotationError> {
        config.validate()?;
        let mut index = HashMap::with_capacity(items.len());
        let mut tasks = Vec::with_capacity(items.len());
        for (i, item) in items.into_iter().enumerate() {
            if index.insert(item.task_id.clone(), i).is_some() {
                return Err(AnnotationError::Config(format!("duplicate task id {:?}", item.task_id)));
            }
            let order = PresentationOrder::random(&mut derive_rng(config.seed, &["annotation".into(), (&item.task_id).into()]));
            tasks.push(TaskState { item, order, judgments: Vec::new(), human: None });
        }
        Ok(Self { tasks, index, annotators: config.annotators.iter().cloned().collect(), required: config.judgments_per_task })
    }

    fn check_annotator(&self, annotator: &str) -> Result<(), AnnotationError> {
        if self.annotators.contains(annotator) {
            Ok(())
        } else {
            Err(AnnotationError::UnknownAnnotator(annotator.to_owned()))
        }
    }

    fn next_task(&self, annotator: &str) -> Result<NextTask, AnnotationError> {
        self.check_annotator(annotator)?;
        let pick = self
            .tasks
            .iter()
            .filter(|t| t.judgments.len() < self.required && !t.judged_by(annotator))
            .min_by_key(|t| t.judgments.len());
        Ok(pick.map_or(NextTask::Done, |t| NextTask::Task(t.view())))
    }

    /// Checks a judgment without changing anything; returns its task index.
    fn check(&self, j: &HumanJudgment) -> Result<usize, AnnotationError> {
        self.check_annotator(&j.annotator_id)?;
        let &i = self.index.get(&j.task_id).ok_or_else(|| AnnotationError::UnknownTask(j.task_id.clone()))?;
        let task = &self.tasks[i];
        if task.judged_by(&j.annotator_id) {
            return Err(AnnotationError::Conflict(format!(
                "annotator {:?} already judged task {:?}",
                j.annotator_id, j.task_id
            )));
        }
        if task.judgments.len() >= self.required {
            return Err(AnnotationError::Conflict(format!("task {:?} already has all its judgments", j.task_id)));
        }
        let applicable = Metric::applicable(task.item.task);
        let missing: Vec<Metric> = applicable.iter().copied().filter(|m| !j.per_metric.contains_key(m)).collect();
        if !missing.is_empty() {
            return Err(AnnotationError::MissingMetrics { missing });
        }
        let unexpected: Vec<Metric> = j.per_metric.keys().copied().filter(|m| !applicable.contains(m)).collect();
        if !unexpected.is_empty() {
            return Err(AnnotationError::UnexpectedMetrics { unexpected });
        }
        Ok(i)
    }

    fn apply(&mut self, i: usize, j: HumanJudgment) {
        let required = self.required;
        let task = &mut self.tasks[i];
        task.judgments.push(j);
        if task.judgments.len() == required {
            let verdicts: Vec<JudgeVerdict> = task
                .judgments
                .iter()
                .enumerate()
                .map(|(k, j)| JudgeVerdict {
                    record_id: task.item.task_id.clone(),
                    vote_index: k as u32,
                    presentation_order: task.order,
                    per_metric: j.per_metric.clone(),
                    overall: match j.overall {
                        Label::A => Overall::A,
                        Label::B => Overall::B,
                    },
                    raw_text: String::new(),
                    error: None,
                })
                .collect();
            task.human = Some(majority_vote(&verdicts, HUMAN_JUDGE_ID).expect("judgment count is odd"));
        }
    }

    fn progress(&self) -> Progress {
        let mut per_annotator: BTreeMap<String, usize> = self.annotators.iter().map(|a| (a.clone(), 0)).collect();
        for j in self.tasks.iter().flat_map(|t| &t.judgments) {
            *per_annotator.entry(j.annotator_id.clone()).or_default() += 1;
        }
        Progress {
            tasks: self.tasks.len(),
            fully_judged: self.tasks.iter().filter(|t| t.human.is_some()).count(),
            judgments: per_annotator.values().sum(),
            per_annotator,
        }
    }

    fn agreement(&self) -> Result<AgreementReport, AnnotationError> {
        let (mut human, mut ai) = (Vec::new(), Vec::new());
        for t in &self.tasks {
            if let (Some(h), Some(a)) = (&t.human, &t.item.ai) {
                let outcome = |winner: Option<Side>| LabeledOutcome { pair_id: t.item.task_id.clone(), task: t.item.task, winner };
                human.push(outcome(h.winner()));
                ai.push(outcome(a.winner()));
            }
        }
        Ok(agreement_rate(&human, &ai)?)
    }
}

fn now_millis() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Thread-safe annotation service backed by a judgment log.
pub struct AnnotationService {
    state: RwLock<State>,
    log: Mutex<File>,
    log_path: PathBuf,
}

impl AnnotationService {
    /// Opens (or creates) the log at `log_path` and replays it.
    pub fn open(
        items: Vec<AnnotationItem>,
        config: &AnnotationConfig,
        log_path: impl AsRef<Path>,
    ) -> Result<Self, AnnotationError> {
        let log_path = log_path.as_ref().to_path_buf();
        let state = replay_into(State::new(items, config)?, &log_path)?;
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok(Self { state: RwLock::new(state), log: Mutex::new(log), log_path })
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    pub fn next_task(&self, annotator_id: &str) -> Result<NextTask, AnnotationError> {
        self.state.read().next_task(annotator_id)
    }

    /// Validates, appends to the log, then applies. A rejected judgment leaves
    /// the log untouched.
    pub fn submit_judgment(&self, mut judgment: HumanJudgment) -> Result<(), AnnotationError> {
        let mut log = self.log.lock();
        let i = self.state.read().check(&judgment)?;
        if judgment.timestamp == 0 {
            judgment.timestamp = now_millis();
        }
        let mut line = serde_json::to_string(&judgment).expect("judgment serializes");
        line.push('\n');
        log.write_all(line.as_bytes())?;
        log.sync_data()?;
        self.state.write().apply(i, judgment);
        Ok(())
    }

    pub fn agreement_summary(&self) -> Result<AgreementReport, AnnotationError> {
        self.state.read().agreement()
    }

    pub fn progress(&self) -> Progress {
        self.state.read().progress()
    }

    /// Copy of every task's state, in pool order.
    pub fn snapshot(&self) -> Vec<TaskState> {
        self.state.read().tasks.clone()
    }
}

fn replay_into(mut state: State, log_path: &Path) -> Result<State, AnnotationError> {
    let file = match File::open(log_path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(state),
        Err(e) => return Err(e.into()),
    };
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| AnnotationError::Log { line: n + 1, message };
        let j: HumanJudgment = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let i = state.check(&j).map_err(|e| bad(e.to_string()))?;
        state.apply(i, j);
    }
    Ok(state)
}

/// Rebuilds task states from a log alone, without opening it for writing.
pub fn replay_log(
    items: Vec<AnnotationItem>,
    config: &AnnotationConfig,
    log_path: impl AsRef<Path>,
) -> Result<Vec<TaskState>, AnnotationError> {
    Ok(replay_into(State::new(items, config)?, log_path.as_ref())?.tasks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::Preference;

    fn items(n: usize, task: TaskKind) -> Vec<AnnotationItem> {
        (0..n)
            .map(|i| AnnotationItem {
                task_id: format!("t{i}"),
                task,
                prompt: format!("prompt {i}"),
                first: format!("first {i}"),
                second: format!("second {i}"),
                ai: Some(Outcome::Consensus(Preference {
                    winner: Side::First,
                    tally: Default::default(),
                    judge_model_id: "j".into(),
                })),
            })
            .collect()
    }

    fn config() -> AnnotationConfig {
        AnnotationConfig::new(vec!["a1".into(), "a2".into(), "a3".into(), "a4".into()], 7)
    }

    fn judgment(task: &AnnotationTask, annotator: &str, overall: Label) -> HumanJudgment {
        HumanJudgment {
            task_id: task.task_id.clone(),
            annotator_id: annotator.into(),
            per_metric: task.metrics.iter().map(|m| (*m, overall)).collect(),
            overall,
            timestamp: 1,
        }
    }

    fn next(svc: &AnnotationService, who: &str) -> AnnotationTask {
        match svc.next_task(who).unwrap() {
            NextTask::Task(t) => t,
            NextTask::Done => panic!("expected a task for {who}"),
        }
    }

    #[test]
    fn serves_least_judged_and_finishes() {
        let dir = tempfile::tempdir().unwrap();
        let svc = AnnotationService::open(items(3, TaskKind::Summarization), &config(), dir.path().join("log")).unwrap();
        let t = next(&svc, "a1");
        assert_eq!(t.assigned_count, 0);
        assert_eq!(t.metrics.len(), 3);
        svc.submit_judgment(judgment(&t, "a1", Label::A)).unwrap();
        // a2 gets an untouched task first
        assert_eq!(next(&svc, "a2").assigned_count, 0);
        for _ in 0..2 {
            let t = next(&svc, "a1");
            svc.submit_judgment(judgment(&t, "a1", Label::A)).unwrap();
        }
        assert_eq!(svc.next_task("a1").unwrap(), NextTask::Done);
        assert!(matches!(svc.next_task("nobody"), Err(AnnotationError::UnknownAnnotator(_))));
    }

    #[test]
    fn duplicate_is_conflict_and_log_unchanged() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("log");
        let svc = AnnotationService::open(items(1, TaskKind::Summarization), &config(), &log).unwrap();
        let t = next(&svc, "a1");
        svc.submit_judgment(judgment(&t, "a1", Label::A)).unwrap();
        let before = std::fs::read(&log).unwrap();
        assert!(matches!(svc.submit_judgment(judgment(&t, "a1", Label::B)), Err(AnnotationError::Conflict(_))));
        assert_eq!(std::fs::read(&log).unwrap(), before);
    }

    #[test]
    fn qa_requires_attribution() {
        let dir = tempfile::tempdir().unwrap();
        let svc = AnnotationService::open(items(1, TaskKind::QuestionAnswering), &config(), dir.path().join("log")).unwrap();
        let t = next(&svc, "a1");
        assert_eq!(t.metrics.len(), 4);
        let mut j = judgment(&t, "a1", Label::A);
        j.per_metric.remove(&Metric::Attribution);
        let err = svc.submit_judgment(j).unwrap_err();
        assert!(err.to_string().contains("Attribution"), "{err}");
        assert_eq!(svc.progress().judgments, 0);
    }

    #[test]
    fn third_vote_fixes_the_human_label() {
        let dir = tempfile::tempdir().unwrap();
        let svc = AnnotationService::open(items(1, TaskKind::Summarization), &config(), dir.path().join("log")).unwrap();
        for (who, label) in [("a1", Label::A), ("a2", Label::A), ("a3", Label::B)] {
            let t = next(&svc, who);
            svc.submit_judgment(judgment(&t, who, label)).unwrap();
        }
        let state = &svc.snapshot()[0];
        let shown_as_a = state.order.resolve(Label::A);
        assert_eq!(state.human.as_ref().unwrap().winner(), Some(shown_as_a));
        assert_eq!(svc.next_task("a4").unwrap(), NextTask::Done);
        let t = state.view();
        assert!(matches!(svc.submit_judgment(judgment(&t, "a4", Label::B)), Err(AnnotationError::Conflict(_))));
    }

    #[test]
    fn replay_matches_live_state() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("log");
        let svc = AnnotationService::open(items(4, TaskKind::DataToText), &config(), &log).unwrap();
        for round in 0..3 {
            for who in ["a1", "a2", "a3"] {
                if let NextTask::Task(t) = svc.next_task(who).unwrap() {
                    let label = if round % 2 == 0 { Label::A } else { Label::B };
                    svc.submit_judgment(judgment(&t, who, label)).unwrap();
                }
            }
        }
        let live = svc.snapshot();
        drop(svc);
        assert_eq!(replay_log(items(4, TaskKind::DataToText), &config(), &log).unwrap(), live);
        let reopened = AnnotationService::open(items(4, TaskKind::DataToText), &config(), &log).unwrap();
        assert_eq!(reopened.snapshot(), live);
    }

    #[test]
    fn even_judgment_count_rejected() {
        let mut cfg = config();
        cfg.judgments_per_task = 2;
        assert!(matches!(State::new(items(1, TaskKind::Summarization), &cfg), Err(AnnotationError::Config(_))));
    }
}
