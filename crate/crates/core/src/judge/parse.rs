use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;

use super::{Label, Metric, Overall};

static CHOSEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bchosen\s*:(.*)$").unwrap());
static RESPONSE_A: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bresponse\s+a\b").unwrap());
static RESPONSE_B: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bresponse\s+b\b").unwrap());

fn strip_markup(line: &str) -> String {
    line.chars().filter(|c| !matches!(c, '*' | '_' | '#' | '`' | '>')).collect()
}

/// Reads the label out of whatever follows `Chosen:`. Exactly one distinct
/// standalone `A`/`B` token must be present; a lowercase letter only counts
/// when it is the whole answer.
fn label_of(rest: &str) -> Overall {
    let tokens: Vec<&str> = rest.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).collect();
    if let [only] = tokens.as_slice() {
        return match *only {
            "A" | "a" => Overall::A,
            "B" | "b" => Overall::B,
            _ => Overall::Unparseable,
        };
    }
    let has_a = tokens.contains(&"A");
    let has_b = tokens.contains(&"B");
    match (has_a, has_b) {
        (true, false) => Overall::A,
        (false, true) => Overall::B,
        _ => Overall::Unparseable,
    }
}

/// Overall choice from the last line carrying a `Chosen:` marker.
pub fn parse_overall(raw: &str) -> Overall {
    raw.lines()
        .rev()
        .find_map(|line| {
            let clean = strip_markup(line);
            CHOSEN.captures(&clean).map(|c| label_of(&c[1]))
        })
        .unwrap_or(Overall::Unparseable)
}

fn metric_of(line_lower: &str) -> Option<Metric> {
    if line_lower.contains("hallucination") || line_lower.contains("faithfulness") {
        Some(Metric::Hallucination)
    } else if line_lower.contains("comprehensiveness") || line_lower.contains("coverage") {
        Some(Metric::Comprehensiveness)
    } else if line_lower.contains("conciseness") || line_lower.contains("verbosity") {
        Some(Metric::Verbosity)
    } else if line_lower.contains("attribution") {
        Some(Metric::Attribution)
    } else {
        None
    }
}

/// Best-effort per-metric preferences: a metric heading or sentence that names
/// exactly one of "Response A"/"Response B" records that label. A line naming
/// neither defers to the next non-empty line.
pub fn parse_metrics(raw: &str) -> BTreeMap<Metric, Label> {
    let lines: Vec<String> = raw.lines().map(strip_markup).collect();
    let mut out = BTreeMap::new();
    for (i, line) in lines.iter().enumerate() {
        let Some(metric) = metric_of(&line.to_lowercase()) else { continue };
        if out.contains_key(&metric) {
            continue;
        }
        let named = |l: &str| match (RESPONSE_A.is_match(l), RESPONSE_B.is_match(l)) {
            (true, false) => Some(Some(Label::A)),
            (false, true) => Some(Some(Label::B)),
            (true, true) => Some(None),
            (false, false) => None,
        };
        let choice = match named(line) {
            Some(choice) => choice,
            None => lines[i + 1..].iter().find(|l| !l.trim().is_empty()).and_then(|l| named(l)).flatten(),
        };
        let Some(choice) = choice else { continue };
        out.insert(metric, choice);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_chosen_line_wins() {
        assert_eq!(parse_overall("Chosen: A\nOn reflection...\nChosen: B"), Overall::B);
        assert_eq!(parse_overall("Chosen: A\nChosen: (A or B)"), Overall::Unparseable);
    }

    #[test]
    fn no_marker() {
        assert_eq!(parse_overall("Both are equally good."), Overall::Unparseable);
        assert_eq!(parse_overall(""), Overall::Unparseable);
    }

    #[test]
    fn metrics_best_effort() {
        let raw = "Hallucination: Response A sticks to the passages.\n\
                   Comprehensiveness:\nResponse B covers more.\n\
                   Conciseness: both fine.\nChosen: A";
        let m = parse_metrics(raw);
        assert_eq!(m.get(&Metric::Hallucination), Some(&Label::A));
        assert_eq!(m.get(&Metric::Comprehensiveness), Some(&Label::B));
        assert_eq!(m.get(&Metric::Verbosity), None);
    }
}
