use std::collections::BTreeMap;

use longpref::judge::{parse_metrics, parse_overall, Label, Metric, Overall};
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    form: String,
    raw: String,
    overall: Overall,
    per_metric: BTreeMap<Metric, Label>,
}

fn cases() -> Vec<Case> {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/verdicts.jsonl")).unwrap();
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn fixture_overall_labels() {
    let cases = cases();
    assert!(cases.len() >= 12);
    assert!(cases.iter().any(|c| c.overall == Overall::Unparseable));
    let wrong: Vec<_> = cases.iter().filter(|c| parse_overall(&c.raw) != c.overall).map(|c| c.form.as_str()).collect();
    assert!(wrong.is_empty(), "mislabelled forms: {wrong:?}");
}

#[test]
fn fixture_metric_labels() {
    for c in cases().iter().filter(|c| !c.per_metric.is_empty()) {
        assert_eq!(parse_metrics(&c.raw), c.per_metric, "form {}", c.form);
    }
}
