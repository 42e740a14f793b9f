use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use longpref::annotation::{replay_log, AnnotationConfig, AnnotationItem, AnnotationService};
use longpref::corpus::TaskKind;
use longpref::judge::{Outcome, Preference, Side, Tally};
use longpref_annotate::{router, ServerOptions, SECRET_HEADER};
use serde_json::{json, Value};

const SECRET: &str = "s3cret";

fn ai(winner: Option<Side>) -> Option<Outcome> {
    let tally = Tally { first: 2, second: 1, invalid: 0 };
    Some(match winner {
        Some(winner) => Outcome::Consensus(Preference { winner, tally, judge_model_id: "judge".into() }),
        None => Outcome::NoConsensus { tally: Tally { first: 1, second: 1, invalid: 1 }, judge_model_id: "judge".into() },
    })
}

/// Five tasks: (id, kind, AI winner).
fn items() -> Vec<AnnotationItem> {
    [
        ("t1", TaskKind::QuestionAnswering, Some(Side::First)),
        ("t2", TaskKind::QuestionAnswering, Some(Side::Second)),
        ("t3", TaskKind::Summarization, Some(Side::First)),
        ("t4", TaskKind::DataToText, None),
        ("t5", TaskKind::Summarization, Some(Side::Second)),
    ]
    .into_iter()
    .map(|(id, task, winner)| AnnotationItem {
        task_id: id.into(),
        task,
        prompt: format!("prompt for {id}"),
        first: format!("first response of {id}"),
        second: format!("second response of {id}"),
        ai: ai(winner),
    })
    .collect()
}

fn config() -> AnnotationConfig {
    AnnotationConfig::new(vec!["u1".into(), "u2".into(), "u3".into()], 2024)
}

/// Human votes as stored sides, per task and annotator.
fn plan(task: &str, annotator: &str) -> Side {
    let votes = match task {
        "t1" => ["F", "F", "S"], // human First, AI First: agree
        "t2" => ["F", "S", "F"], // human First, AI Second: disagree
        "t3" => ["F", "F", "F"], // human First, AI First: agree
        "t4" => ["S", "S", "F"], // AI no consensus: excluded
        "t5" => ["S", "F", "S"], // human Second, AI Second: agree
        _ => unreachable!(),
    };
    let i = ["u1", "u2", "u3"].iter().position(|a| *a == annotator).unwrap();
    if votes[i] == "F" {
        Side::First
    } else {
        Side::Second
    }
}

struct Server {
    base: String,
    client: reqwest::Client,
}

impl Server {
    async fn start(service: Arc<AnnotationService>, secret: Option<&str>) -> Self {
        let options = ServerOptions { secret: secret.map(str::to_owned), static_dir: None };
        let app = router(service, &options);
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        Self { base, client: reqwest::Client::new() }
    }

    async fn get(&self, path: &str) -> (u16, Value) {
        let resp = self.client.get(format!("{}{path}", self.base)).header(SECRET_HEADER, SECRET).send().await.unwrap();
        (resp.status().as_u16(), resp.json().await.unwrap())
    }

    async fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        let resp =
            self.client.post(format!("{}{path}", self.base)).header(SECRET_HEADER, SECRET).json(body).send().await.unwrap();
        (resp.status().as_u16(), resp.json().await.unwrap())
    }
}

fn open(log: &Path) -> Arc<AnnotationService> {
    Arc::new(AnnotationService::open(items(), &config(), log).unwrap())
}

/// Judgment body voting for `side` on the served task.
fn judgment_for(task: &Value, annotator: &str, side: Side) -> Value {
    let id = task["task_id"].as_str().unwrap();
    let first_text = format!("first response of {id}");
    let first_is_a = task["response_a"].as_str().unwrap() == first_text;
    let label = match (side, first_is_a) {
        (Side::First, true) | (Side::Second, false) => "A",
        _ => "B",
    };
    let per_metric: BTreeMap<String, &str> =
        task["metrics"].as_array().unwrap().iter().map(|m| (m.as_str().unwrap().to_owned(), label)).collect();
    json!({ "task_id": id, "annotator_id": annotator, "per_metric": per_metric, "overall": label })
}

async fn run_session(server: &Server) -> BTreeMap<String, HashSet<String>> {
    let mut seen: BTreeMap<String, HashSet<String>> = BTreeMap::new();
    let mut active = vec!["u1", "u2", "u3"];
    while !active.is_empty() {
        let mut still = Vec::new();
        for who in active {
            let (status, body) = server.get(&format!("/api/tasks/next?annotator={who}")).await;
            assert_eq!(status, 200);
            assert_eq!(body["schema_version"], 1);
            if body["status"] == "done" {
                continue;
            }
            assert!(body.get("ai").is_none(), "AI label must stay hidden");
            let id = body["task_id"].as_str().unwrap().to_owned();
            assert!(seen.entry(who.into()).or_default().insert(id.clone()), "{who} served {id} twice");
            let (status, reply) = server.post("/api/judgments", &judgment_for(&body, who, plan(&id, who))).await;
            assert_eq!(status, 201, "{reply}");
            still.push(who);
        }
        active = still;
    }
    seen
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scripted_session_reproduces_hand_computed_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("judgments.jsonl");
    let service = open(&log);
    let server = Server::start(service.clone(), Some(SECRET)).await;

    let seen = run_session(&server).await;
    assert!(seen.values().all(|s| s.len() == 5));

    let (status, progress) = server.get("/api/progress").await;
    assert_eq!(status, 200);
    assert_eq!(progress["fully_judged"], 5);
    assert_eq!(progress["judgments"], 15);

    let (status, report) = server.get("/api/agreement").await;
    assert_eq!(status, 200);
    let expected = json!({
        "schema_version": 1,
        "overall": { "agreement": 0.75, "matches": 3, "n": 4, "excluded": 1 },
        "per_task": {
            "d2t": { "agreement": null, "matches": 0, "n": 0, "excluded": 1 },
            "qa":  { "agreement": 0.5,  "matches": 1, "n": 2, "excluded": 0 },
            "sum": { "agreement": 1.0,  "matches": 2, "n": 2, "excluded": 0 }
        }
    });
    assert_eq!(report, expected);

    // event-sourcing round trip
    let live = service.snapshot();
    assert_eq!(replay_log(items(), &config(), &log).unwrap(), live);
    let reopened = AnnotationService::open(items(), &config(), &log).unwrap();
    assert_eq!(reopened.snapshot(), live);
    assert_eq!(
        serde_json::to_value(reopened.agreement_summary().unwrap()).unwrap(),
        serde_json::to_value(service.agreement_summary().unwrap()).unwrap()
    );
}

#[tokio::test]
async fn errors_map_to_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(open(&dir.path().join("log")), Some(SECRET)).await;

    let (status, body) = server.get("/api/agreement").await;
    assert_eq!((status, body["error"].as_str()), (409, Some("no_judged_tasks")));

    let (status, _) = server.get("/api/tasks/next?annotator=stranger").await;
    assert_eq!(status, 403);

    // find the QA task t1 for u1 and omit Attribution
    let (_, task) = server.get("/api/tasks/next?annotator=u1").await;
    assert_eq!(task["task_id"], "t1");
    assert_eq!(task["metrics"].as_array().unwrap().len(), 4);
    let mut body = judgment_for(&task, "u1", Side::First);
    body["per_metric"].as_object_mut().unwrap().remove("Attribution");
    let (status, reply) = server.post("/api/judgments", &body).await;
    assert_eq!(status, 422);
    assert_eq!(reply["fields"], json!(["Attribution"]));
    assert!(reply["message"].as_str().unwrap().contains("Attribution"));

    let good = judgment_for(&task, "u1", Side::First);
    assert_eq!(server.post("/api/judgments", &good).await.0, 201);
    let (status, reply) = server.post("/api/judgments", &good).await;
    assert_eq!((status, reply["error"].as_str()), (409, Some("conflict")));

    let mut unknown = good.clone();
    unknown["task_id"] = json!("nope");
    assert_eq!(server.post("/api/judgments", &unknown).await.0, 404);

    let (_, progress) = server.get("/api/progress").await;
    assert_eq!(progress["judgments"], 1);
}

#[tokio::test]
async fn secret_is_enforced_and_ui_served() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(open(&dir.path().join("log")), Some(SECRET)).await;
    let resp = server.client.get(format!("{}/api/progress", server.base)).send().await.unwrap();
    assert_eq!(resp.status().as_u16(), 401);
    let resp = server.client.get(format!("{}/api/progress", server.base)).header(SECRET_HEADER, "wrong").send().await.unwrap();
    assert_eq!(resp.status().as_u16(), 401);
    let page = server.client.get(format!("{}/", server.base)).send().await.unwrap();
    assert_eq!(page.status().as_u16(), 200);
    assert!(page.text().await.unwrap().contains("/api/tasks/next"));
}
