//! Task corpora: loading line-delimited records, rendering per-task prompts,
//! and seeded train/dev/test splits.

mod template;

use std::borrow::Cow;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use template::Template;

use crate::rng::derive_rng;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus {path} has no valid records ({rejected} lines rejected)")]
    EmptyCorpus { path: String, rejected: usize },
    #[error("template error: {0}")]
    Template(String),
    #[error("template placeholder {{{0}}} has no matching field")]
    MissingField(String),
    #[error("record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("infeasible split: requested {requested} records but only {available} available (short by {})", requested - available)]
    InfeasibleSplit { requested: usize, available: usize },
    #[error("unknown task kind {0:?} (expected qa, d2t or sum)")]
    UnknownTask(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "qa")]
    QuestionAnswering,
    #[serde(rename = "d2t")]
    DataToText,
    #[serde(rename = "sum")]
    Summarization,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] =
        [TaskKind::QuestionAnswering, TaskKind::DataToText, TaskKind::Summarization];

    pub fn code(self) -> &'static str {
        match self {
            TaskKind::QuestionAnswering => "qa",
            TaskKind::DataToText => "d2t",
            TaskKind::Summarization => "sum",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for TaskKind {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "qa" => Ok(TaskKind::QuestionAnswering),
            "d2t" => Ok(TaskKind::DataToText),
            "sum" => Ok(TaskKind::Summarization),
            other => Err(CorpusError::UnknownTask(other.to_owned())),
        }
    }
}

/// One task instance. Which payload fields are populated depends on `task`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub references: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured_input: Option<Map<String, Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub document: Option<String>,
}

impl PromptRecord {
    pub fn question_answering(
        id: impl Into<String>,
        question: impl Into<String>,
        references: Vec<String>,
    ) -> Self {
        Self {
            id: id.into(),
            task: TaskKind::QuestionAnswering,
            question: Some(question.into()),
            references,
            structured_input: None,
            document: None,
        }
    }

    pub fn data_to_text(id: impl Into<String>, structured_input: Map<String, Value>) -> Self {
        Self {
            id: id.into(),
            task: TaskKind::DataToText,
            question: None,
            references: Vec::new(),
            structured_input: Some(structured_input),
            document: None,
        }
    }

    pub fn summarization(id: impl Into<String>, document: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            task: TaskKind::Summarization,
            question: None,
            references: Vec::new(),
            structured_input: None,
            document: Some(document.into()),
        }
    }

    /// Checks that the payload required by the record's task is present and non-empty.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let missing = |field: &str| CorpusError::InvalidRecord {
            id: self.id.clone(),
            reason: format!("missing or empty required field `{field}` for task {}", self.task),
        };
        if self.id.is_empty() {
            return Err(CorpusError::InvalidRecord {
                id: String::new(),
                reason: "empty `id`".into(),
            });
        }
        match self.task {
            TaskKind::QuestionAnswering => {
                if self.question.as_deref().is_none_or(str::is_empty) {
                    return Err(missing("question"));
                }
                if self.references.is_empty() {
                    return Err(missing("references"));
                }
            }
            TaskKind::DataToText => {
                if self.structured_input.as_ref().is_none_or(Map::is_empty) {
                    return Err(missing("structured_input"));
                }
            }
            TaskKind::Summarization => {
                if self.document.as_deref().is_none_or(str::is_empty) {
                    return Err(missing("document"));
                }
            }
        }
        Ok(())
    }
}

/// A rejected input line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone)]
pub struct LoadReport {
    pub records: Vec<PromptRecord>,
    pub rejected: Vec<LineError>,
}

fn parse_line(value: Value, task: TaskKind) -> Result<PromptRecord, String> {
    let Value::Object(mut obj) = value else {
        return Err("record is not a JSON object".into());
    };
    let id = match obj.remove("id") {
        Some(Value::String(s)) if !s.is_empty() => s,
        Some(_) => return Err("field `id` must be a non-empty string".into()),
        None => return Err("missing required field `id`".into()),
    };
    match obj.get("task") {
        None => {}
        Some(Value::String(code)) => {
            let found: TaskKind = code.parse().map_err(|e: CorpusError| e.to_string())?;
            if found != task {
                return Err(format!("task `{found}` does not match expected `{task}`"));
            }
        }
        Some(_) => return Err("field `task` must be a string".into()),
    }
    let text = |obj: &mut Map<String, Value>, field: &str| -> Result<Option<String>, String> {
        match obj.remove(field) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(format!("field `{field}` must be a string")),
        }
    };
    let question = text(&mut obj, "question")?;
    let document = text(&mut obj, "document")?;
    let references = match obj.remove("references") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                _ => Err("field `references` must be an array of strings".to_owned()),
            })
            .collect::<Result<_, _>>()?,
        Some(_) => return Err("field `references` must be an array".into()),
    };
    let structured_input = match obj.remove("structured_input") {
        None | Some(Value::Null) => None,
        Some(Value::Object(map)) => Some(map),
        Some(_) => return Err("field `structured_input` must be an object".into()),
    };
    let record = PromptRecord { id, task, question, references, structured_input, document };
    record.validate().map_err(|e| match e {
        CorpusError::InvalidRecord { reason, .. } => reason,
        other => other.to_string(),
    })?;
    Ok(record)
}

/// Loads line-delimited records for one task. Bad lines are reported, not fatal;
/// a corpus with no valid line is an error.
pub fn load_records(path: impl AsRef<Path>, task: TaskKind) -> Result<LoadReport, CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io { path: path.display().to_string(), source };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Value>(&line)
            .map_err(|e| format!("malformed record: {e}"))
            .and_then(|v| parse_line(v, task));
        match parsed {
            Ok(record) if !seen.insert(record.id.clone()) => rejected
                .push(LineError { line: line_no, message: format!("duplicate id `{}`", record.id) }),
            Ok(record) => records.push(record),
            Err(message) => rejected.push(LineError { line: line_no, message }),
        }
    }
    for err in &rejected {
        log::warn!("{}: {err}", path.display());
    }
    if records.is_empty() {
        return Err(CorpusError::EmptyCorpus {
            path: path.display().to_string(),
            rejected: rejected.len(),
        });
    }
    log::info!("loaded {} {task} records from {}", records.len(), path.display());
    Ok(LoadReport { records, rejected })
}

/// Writes records in the same line-delimited schema `load_records` reads.
pub fn write_records(path: impl AsRef<Path>, records: &[PromptRecord]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io { path: path.display().to_string(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for record in records {
        let line = serde_json::to_string(record).expect("records serialize");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

const DEFAULT_QA: &str = include_str!("../../assets/prompt_qa.txt");
const DEFAULT_D2T: &str = include_str!("../../assets/prompt_d2t.txt");
const DEFAULT_SUM: &str = include_str!("../../assets/prompt_sum.txt");

/// Prompt templates keyed by task.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    qa: Template,
    d2t: Template,
    sum: Template,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            qa: Template::parse(DEFAULT_QA).expect("builtin template"),
            d2t: Template::parse(DEFAULT_D2T).expect("builtin template"),
            sum: Template::parse(DEFAULT_SUM).expect("builtin template"),
        }
    }
}

impl TemplateSet {
    /// Loads `qa.txt`, `d2t.txt` and `sum.txt` from `dir`; missing files keep the defaults.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let mut set = Self::default();
        for task in TaskKind::ALL {
            let path = dir.as_ref().join(format!("{}.txt", task.code()));
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path)
                .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
            set.set(task, Template::parse(text.trim_end_matches('\n'))?);
        }
        Ok(set)
    }

    pub fn get(&self, task: TaskKind) -> &Template {
        match task {
            TaskKind::QuestionAnswering => &self.qa,
            TaskKind::DataToText => &self.d2t,
            TaskKind::Summarization => &self.sum,
        }
    }

    pub fn set(&mut self, task: TaskKind, template: Template) {
        match task {
            TaskKind::QuestionAnswering => self.qa = template,
            TaskKind::DataToText => self.d2t = template,
            TaskKind::Summarization => self.sum = template,
        }
    }

    pub fn render(&self, record: &PromptRecord) -> Result<String, CorpusError> {
        if record.task == TaskKind::QuestionAnswering && record.references.is_empty() {
            return Err(CorpusError::InvalidRecord {
                id: record.id.clone(),
                reason: "question answering record has no references".into(),
            });
        }
        self.get(record.task).render(|name| field_value(record, name))
    }
}

/// Passages numbered `[1]..[k]`, one per line.
pub fn number_passages(references: &[String]) -> String {
    references
        .iter()
        .enumerate()
        .map(|(i, r)| format!("[{}] {}", i + 1, r))
        .collect::<Vec<_>>()
        .join("\n")
}

fn field_value<'a>(record: &'a PromptRecord, name: &str) -> Option<Cow<'a, str>> {
    match (record.task, name) {
        (_, "id") => Some(Cow::Borrowed(&record.id)),
        (TaskKind::QuestionAnswering, "question") => record.question.as_deref().map(Cow::Borrowed),
        (TaskKind::QuestionAnswering, "passages") => {
            Some(Cow::Owned(number_passages(&record.references)))
        }
        (TaskKind::DataToText, "structured_input") => record
            .structured_input
            .as_ref()
            .map(|m| Cow::Owned(serde_json::to_string_pretty(m).expect("json map serializes"))),
        (TaskKind::Summarization, "document") => record.document.as_deref().map(Cow::Borrowed),
        _ => None,
    }
}

/// Renders a record with the built-in templates.
pub fn render_prompt(record: &PromptRecord) -> Result<String, CorpusError> {
    thread_local! {
        static DEFAULTS: TemplateSet = TemplateSet::default();
    }
    DEFAULTS.with(|set| set.render(record))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_n: usize,
    pub dev_n: usize,
    pub test_n: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn total(&self) -> usize {
        self.train_n + self.dev_n + self.test_n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
    /// Records left over after the requested counts were filled.
    pub discarded: usize,
}

/// Seeded random partition into train/dev/test with exact counts.
pub fn split_dataset<T: Clone>(items: &[T], spec: SplitSpec) -> Result<Splits<T>, CorpusError> {
    if spec.total() > items.len() {
        return Err(CorpusError::InfeasibleSplit { requested: spec.total(), available: items.len() });
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut derive_rng(spec.seed, &["split".into()]));
    let take = |range: std::ops::Range<usize>| -> Vec<T> {
        order[range].iter().map(|&i| items[i].clone()).collect()
    };
    let train_end = spec.train_n;
    let dev_end = train_end + spec.dev_n;
    let test_end = dev_end + spec.test_n;
    let discarded = items.len() - test_end;
    if discarded > 0 {
        log::warn!("split discarded {discarded} of {} records", items.len());
    }
    Ok(Splits {
        train: take(0..train_end),
        dev: take(train_end..dev_end),
        test: take(dev_end..test_end),
        discarded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_qa_line() {
        let f = write_lines(&[
            r#"{"id":"q1","task":"qa","question":"Why?","references":["first passage","second passage"]}"#,
        ]);
        let report = load_records(f.path(), TaskKind::QuestionAnswering).unwrap();
        assert_eq!(report.records.len(), 1);
        let r = &report.records[0];
        assert_eq!(r.task, TaskKind::QuestionAnswering);
        assert_eq!(r.references.len(), 2);
    }

    #[test]
    fn loads_business_record() {
        let f = write_lines(&[
            r#"{"id":"y1","task":"d2t","structured_input":{"name":"The Green Pheasant","address":"215 1st Ave S","city":"Nashville","state":"TN","attributes":{"HappyHour":true,"DogsAllowed":false}}}"#,
        ]);
        let report = load_records(f.path(), TaskKind::DataToText).unwrap();
        let input = report.records[0].structured_input.as_ref().unwrap();
        assert_eq!(input["name"], "The Green Pheasant");
        assert_eq!(input["city"], "Nashville");
        let keys: Vec<_> = input.keys().cloned().collect();
        assert_eq!(keys, ["name", "address", "city", "state", "attributes"]);
    }

    #[test]
    fn rejects_bad_lines_with_line_numbers() {
        let f = write_lines(&[
            r#"{"id":"s1","task":"sum","document":"text"}"#,
            r#"{"id":"s2","task":"sum"}"#,
            "not json",
            r#"{"id":"s1","task":"sum","document":"dup"}"#,
            r#"{"id":"s3","task":"qa","question":"q","references":["r"]}"#,
        ]);
        let report = load_records(f.path(), TaskKind::Summarization).unwrap();
        assert_eq!(report.records.len(), 1);
        let lines: Vec<_> = report.rejected.iter().map(|e| e.line).collect();
        assert_eq!(lines, [2, 3, 4, 5]);
        assert!(report.rejected[0].message.contains("`document`"));
        assert!(report.rejected[1].message.contains("malformed"));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let f = write_lines(&["", r#"{"id":"x","task":"sum"}"#]);
        assert!(matches!(
            load_records(f.path(), TaskKind::Summarization),
            Err(CorpusError::EmptyCorpus { rejected: 1, .. })
        ));
    }

    #[test]
    fn qa_prompt_shape() {
        let r = PromptRecord::question_answering(
            "q",
            "Why are gas tiers 10 cents apart?",
            vec!["The gap between premium and regular...".into(), "According to national averages...".into()],
        );
        let p = render_prompt(&r).unwrap();
        assert!(p.starts_with("Answer the following question: Why are gas tiers 10 cents apart?"));
        assert!(p.contains("Your response should be based on the following passages"));
        assert!(p.contains("[1] The gap between premium"));
        assert!(p.contains("[2] According to national"));
        assert!(p.contains("refer to the source of information"));
        assert!(!p.contains("{passages}"));
    }

    #[test]
    fn summarization_and_d2t_prompts() {
        let s = render_prompt(&PromptRecord::summarization("s", "The full cost of damage...")).unwrap();
        assert!(s.starts_with("Summarize the following document:"));
        let mut m = Map::new();
        m.insert("name".into(), "The Green Pheasant".into());
        let d = render_prompt(&PromptRecord::data_to_text("d", m)).unwrap();
        assert!(d.starts_with("Write an overview about the following business"));
        assert!(d.contains("\"name\": \"The Green Pheasant\""));
    }

    #[test]
    fn placeholder_in_user_text_is_verbatim() {
        let r = PromptRecord::question_answering("q", "what does {question} mean?", vec!["p".into()]);
        let p = render_prompt(&r).unwrap();
        assert_eq!(p.matches("{question}").count(), 1);
    }

    #[test]
    fn qa_without_references_fails_to_render() {
        let r = PromptRecord::question_answering("q", "why", vec![]);
        assert!(render_prompt(&r).is_err());
    }

    #[test]
    fn unmatched_placeholder_fails_to_render() {
        let mut set = TemplateSet::default();
        set.set(TaskKind::Summarization, Template::parse("{document} {question}").unwrap());
        let r = PromptRecord::summarization("s", "doc");
        assert!(matches!(set.render(&r), Err(CorpusError::MissingField(f)) if f == "question"));
    }

    #[test]
    fn template_override_from_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("sum.txt"), "TL;DR {{please}}: {document}\n").unwrap();
        let set = TemplateSet::from_dir(dir.path()).unwrap();
        let out = set.render(&PromptRecord::summarization("s", "doc")).unwrap();
        assert_eq!(out, "TL;DR {please}: doc");
    }

    #[test]
    fn split_exact_counts() {
        let items: Vec<usize> = (0..14_500).collect();
        let spec = SplitSpec { train_n: 11_000, dev_n: 3_000, test_n: 500, seed: 1 };
        let s = split_dataset(&items, spec).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len(), s.discarded), (11_000, 3_000, 500, 0));
        let all: HashSet<_> = s.train.iter().chain(&s.dev).chain(&s.test).collect();
        assert_eq!(all.len(), 14_500);
    }

    #[test]
    fn split_train_only_is_permutation() {
        let items: Vec<usize> = (0..50).collect();
        let s = split_dataset(&items, SplitSpec { train_n: 50, dev_n: 0, test_n: 0, seed: 3 }).unwrap();
        let mut sorted = s.train.clone();
        sorted.sort();
        assert_eq!(sorted, items);
        assert!(s.dev.is_empty() && s.test.is_empty());
    }

    #[test]
    fn split_seed_determinism() {
        let items: Vec<usize> = (0..20).collect();
        let spec = |seed| SplitSpec { train_n: 10, dev_n: 5, test_n: 5, seed };
        let a = split_dataset(&items, spec(11)).unwrap();
        let b = split_dataset(&items, spec(11)).unwrap();
        let c = split_dataset(&items, spec(12)).unwrap();
        assert_eq!(a, b);
        let flat = |s: &Splits<usize>| [s.train.clone(), s.dev.clone(), s.test.clone()].concat();
        assert_ne!(flat(&a), flat(&c));
    }

    #[test]
    fn split_infeasible_names_shortfall() {
        let items = vec![0; 10];
        let err = split_dataset(&items, SplitSpec { train_n: 8, dev_n: 2, test_n: 3, seed: 0 })
            .unwrap_err();
        assert!(err.to_string().contains("short by 3"), "{err}");
    }

    #[test]
    fn split_logs_leftovers() {
        let items: Vec<usize> = (0..10).collect();
        let s = split_dataset(&items, SplitSpec { train_n: 3, dev_n: 2, test_n: 1, seed: 0 }).unwrap();
        assert_eq!(s.discarded, 4);
    }
}
