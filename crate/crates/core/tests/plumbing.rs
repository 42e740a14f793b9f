use std::collections::{BTreeMap, HashSet};

use longpref::corpus::{split_dataset, PromptRecord, SplitSpec, TaskKind};
use longpref::judge::Tally;
use longpref::store::{mix_datasets, read_triplets, write_triplets, MixSource, PreferenceTriplet, Provenance, Source};

fn triplet(i: usize, source: Source) -> PreferenceTriplet {
    let provenance = (source != Source::External).then(|| Provenance {
        tally: Some(Tally { first: 2, second: 1, invalid: 0 }),
        judge_model_id: Some("judge".into()),
        record_id: Some(format!("r{i}")),
        ..Provenance::default()
    });
    let task = (source != Source::External).then_some(TaskKind::ALL[i % 3]);
    PreferenceTriplet::new(task, format!("prompt {i} \u{e9}\n\"quoted\""), format!("better {i}"), format!("worse {i}"), source, provenance)
        .unwrap()
}

#[test]
fn corpus_split_has_exact_shape() {
    let corpus: Vec<PromptRecord> =
        (0..14_500).map(|i| PromptRecord::summarization(format!("doc-{i}"), format!("text {i}"))).collect();
    let splits = split_dataset(&corpus, SplitSpec { train_n: 11_000, dev_n: 3_000, test_n: 500, seed: 42 }).unwrap();
    assert_eq!((splits.train.len(), splits.dev.len(), splits.test.len(), splits.discarded), (11_000, 3_000, 500, 0));
    let ids: HashSet<&str> = splits.train.iter().chain(&splits.dev).chain(&splits.test).map(|r| r.id.as_str()).collect();
    assert_eq!(ids.len(), 14_500);
}

#[test]
fn triplet_file_round_trip_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let triplets: Vec<_> = (0..300).map(|i| triplet(i, if i % 4 == 0 { Source::External } else { Source::AiJudge })).collect();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    write_triplets(&a, &triplets).unwrap();
    let back = read_triplets(&a).unwrap();
    assert_eq!(back, triplets);
    write_triplets(&b, &back).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn mixing_keeps_exact_per_source_counts() {
    let ours: Vec<_> = (0..60_000).map(|i| triplet(i, Source::AiJudge)).collect();
    let theirs: Vec<_> = (0..40_000).map(|i| triplet(i, Source::External)).collect();
    let mixed = mix_datasets(
        &[MixSource { triplets: &ours, take: 50_000, seed: 1 }, MixSource { triplets: &theirs, take: 33_000, seed: 2 }],
        3,
    )
    .unwrap();
    assert_eq!(mixed.len(), 83_000);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in &mixed {
        *counts.entry(format!("{:?}", t.source)).or_default() += 1;
    }
    assert_eq!(counts["AiJudge"], 50_000);
    assert_eq!(counts["External"], 33_000);
    assert_eq!(mixed.iter().map(|t| &t.id).collect::<HashSet<_>>().len(), 83_000);
}
