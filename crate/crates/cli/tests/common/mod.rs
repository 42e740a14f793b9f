//! Stub endpoints and fixtures shared by the pipeline and acceptance tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Output;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use longpref::corpus::{write_records, PromptRecord};
use serde_json::{json, Value};

pub const JUDGE_MODEL: &str = "stub-judge";
pub const MARKER: &str = "grounded fact.";
/// A source containing this word makes the stub judge answer unparseably.
pub const AMBIGUOUS: &str = "AMBIGUOUS";

/// Generator models and their planted quality.
pub const MODELS: [(&str, usize); 4] = [("gen-q1", 1), ("gen-q2", 2), ("gen-q3", 3), ("gen-q4", 4)];

#[derive(Default)]
pub struct Counters {
    pub generate: AtomicUsize,
    pub judge: AtomicUsize,
    pub score: AtomicUsize,
}

pub struct StubServer {
    pub base: String,
    pub counters: Arc<Counters>,
}

impl StubServer {
    pub fn chat_url(&self) -> String {
        format!("{}/v1/chat/completions", self.base)
    }

    pub fn score_url(&self) -> String {
        format!("{}/score", self.base)
    }

    pub fn calls(&self) -> usize {
        self.counters.generate.load(Ordering::SeqCst) + self.counters.judge.load(Ordering::SeqCst)
    }
}

/// Canned generator output: the prompt's first line followed by `q` markers,
/// one more when the request seed is odd.
pub fn canned_generation(model: &str, prompt: &str, seed: u64) -> String {
    let q = MODELS.iter().find(|(m, _)| *m == model).map_or(0, |(_, q)| *q) + (seed % 2) as usize;
    let topic = prompt.lines().next().unwrap_or("").trim();
    let mut text = format!("Overview: {topic}");
    for _ in 0..q {
        text.push(' ');
        text.push_str(MARKER);
    }
    text
}

fn between<'a>(text: &'a str, start: &str, end: Option<&str>) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let to = match end {
        Some(e) => text[from..].find(e)? + from,
        None => text.len(),
    };
    Some(&text[from..to])
}

/// Prefers whichever shown response carries more markers; equal counts or an
/// ambiguous source get an unparseable answer.
pub fn content_keyed_verdict(user: &str) -> String {
    let source = between(user, "", Some("\n\nResponse A:\n")).unwrap_or("");
    let a = between(user, "\n\nResponse A:\n", Some("\n\nResponse B:\n")).unwrap_or("");
    let b = between(user, "\n\nResponse B:\n", None).unwrap_or("");
    let (ca, cb) = (a.matches(MARKER).count(), b.matches(MARKER).count());
    if source.contains(AMBIGUOUS) || ca == cb {
        return "Both responses are equally good.\nChosen: tie".into();
    }
    let label = if ca > cb { "A" } else { "B" };
    format!("Comprehensiveness: Response {label} covers more.\nChosen: {label}")
}

async fn chat(State(counters): State<Arc<Counters>>, Json(body): Json<Value>) -> Json<Value> {
    let model = body["model"].as_str().unwrap_or_default();
    let messages = body["messages"].as_array().cloned().unwrap_or_default();
    let user = messages.last().and_then(|m| m["content"].as_str()).unwrap_or_default();
    let content = if model == JUDGE_MODEL {
        counters.judge.fetch_add(1, Ordering::SeqCst);
        content_keyed_verdict(user)
    } else {
        counters.generate.fetch_add(1, Ordering::SeqCst);
        canned_generation(model, user, body["seed"].as_u64().unwrap_or(0))
    };
    Json(json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] }))
}

async fn score(State(counters): State<Arc<Counters>>, Json(body): Json<Value>) -> Json<Value> {
    counters.score.fetch_add(1, Ordering::SeqCst);
    let len = body["response"].as_str().map_or(0, |r| r.chars().count());
    Json(json!({ "score": len as f64 }))
}

/// Starts the stub on a background thread; it lives until the process exits.
pub fn start_stub() -> StubServer {
    let counters = Arc::new(Counters::default());
    let app = Router::new().route("/v1/chat/completions", post(chat)).route("/score", post(score)).with_state(counters.clone());
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    StubServer { base: format!("http://{addr}"), counters }
}

/// `n` summarization and `n` question-answering records.
pub fn write_corpus(dir: &Path, n: usize, ambiguous: usize) -> (PathBuf, PathBuf) {
    let sum: Vec<_> = (0..n)
        .map(|i| {
            let flag = if i < ambiguous { format!(" {AMBIGUOUS}") } else { String::new() };
            PromptRecord::summarization(format!("s{i:04}"), format!("Report number {i} on river levels{flag}."))
        })
        .collect();
    let qa: Vec<_> = (0..n)
        .map(|i| {
            PromptRecord::question_answering(
                format!("q{i:04}"),
                format!("What happened in town {i}?"),
                vec![format!("Town {i} opened a library."), format!("Town {i} held a fair.")],
            )
        })
        .collect();
    let (sum_path, qa_path) = (dir.join("sum.jsonl"), dir.join("qa.jsonl"));
    write_records(&sum_path, &sum).unwrap();
    write_records(&qa_path, &qa).unwrap();
    (sum_path, qa_path)
}

/// Run config pointing every model at the stub.
pub fn write_config(dir: &Path, stub: &StubServer, split: Option<(usize, usize, usize)>) -> PathBuf {
    let (sum, qa) = (dir.join("sum.jsonl"), dir.join("qa.jsonl"));
    let mut text = format!(
        "output_dir = {:?}\nseed = 1234\nvotes = 3\n\n[corpus]\nsum = {:?}\nqa = {:?}\n\n",
        dir.join("run"),
        sum,
        qa
    );
    if let Some((train, dev, test)) = split {
        text += &format!("[split]\ntrain_n = {train}\ndev_n = {dev}\ntest_n = {test}\n\n");
    }
    for (model, _) in MODELS {
        text += &format!("[[pool]]\nmodel_id = {model:?}\nendpoint = {:?}\n\n", stub.chat_url());
    }
    text += &format!("[judge]\nmodel_id = {JUDGE_MODEL:?}\nendpoint = {:?}\n\n", stub.chat_url());
    text += "[http]\nmax_attempts = 2\nbase_delay_ms = 10\nmax_delay_ms = 50\ntimeout_secs = 10\n\n";
    text += "[reward]\nfeaturizer = \"hash-ngram-v1:d=4096:n=2-4\"\nepochs = 40\nlr = 0.5\n\n";
    text += "[annotation]\nannotators = [\"u1\", \"u2\", \"u3\"]\n";
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub fn longpref(config: &Path, args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_longpref"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Panics with the command's output unless it succeeded.
pub fn check(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        stdout(&out),
        String::from_utf8_lossy(&out.stderr)
    );
    stdout(&out)
}
