use longpref::judge::{majority_vote, tally_votes, JudgeVerdict, Overall, PresentationOrder, Side};

const CHOICES: [Option<Side>; 3] = [Some(Side::First), Some(Side::Second), None];

fn all_patterns() -> Vec<[Option<Side>; 3]> {
    let mut out = Vec::new();
    for a in CHOICES {
        for b in CHOICES {
            for c in CHOICES {
                out.push([a, b, c]);
            }
        }
    }
    out
}

/// A side wins with at least 2 of 3 votes.
fn expected(votes: &[Option<Side>; 3]) -> Option<Side> {
    [Side::First, Side::Second].into_iter().find(|s| votes.iter().filter(|v| **v == Some(*s)).count() >= 2)
}

fn verdict(vote: Option<Side>, order: PresentationOrder) -> JudgeVerdict {
    let overall = match vote.map(|s| order.label_of(s)) {
        Some(longpref::judge::Label::A) => Overall::A,
        Some(longpref::judge::Label::B) => Overall::B,
        None => Overall::Unparseable,
    };
    JudgeVerdict {
        record_id: "r".into(),
        vote_index: 0,
        presentation_order: order,
        per_metric: Default::default(),
        overall,
        raw_text: String::new(),
        error: None,
    }
}

#[test]
fn exhaustive_three_vote_patterns() {
    let patterns = all_patterns();
    assert_eq!(patterns.len(), 27);
    for votes in &patterns {
        let (winner, tally) = tally_votes(votes).unwrap();
        assert_eq!(winner, expected(votes), "{votes:?}");
        assert_eq!(tally.total(), 3);
        // presented in either order, the mapped verdicts aggregate identically
        for order in [PresentationOrder::FirstAsA, PresentationOrder::SecondAsA] {
            let verdicts: Vec<_> = votes.iter().map(|v| verdict(*v, order)).collect();
            assert_eq!(majority_vote(&verdicts, "j").unwrap().winner(), expected(votes));
        }
    }
}

#[test]
fn permutation_invariance_over_all_patterns() {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    for votes in all_patterns() {
        let base = tally_votes(&votes).unwrap();
        for p in PERMS {
            assert_eq!(tally_votes(&p.map(|i| votes[i])).unwrap(), base);
        }
    }
}
