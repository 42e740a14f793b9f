use serde::{Deserialize, Serialize};

use super::{JudgeError, JudgeVerdict, Side};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tally {
    pub first: u32,
    pub second: u32,
    pub invalid: u32,
}

impl Tally {
    pub fn total(&self) -> u32 {
        self.first + self.second + self.invalid
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preference {
    pub winner: Side,
    pub tally: Tally,
    pub judge_model_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Consensus(Preference),
    NoConsensus { tally: Tally, judge_model_id: String },
}

impl Outcome {
    pub fn winner(&self) -> Option<Side> {
        match self {
            Outcome::Consensus(p) => Some(p.winner),
            Outcome::NoConsensus { .. } => None,
        }
    }

    pub fn tally(&self) -> Tally {
        match self {
            Outcome::Consensus(p) => p.tally,
            Outcome::NoConsensus { tally, .. } => *tally,
        }
    }

    pub fn preference(&self) -> Option<&Preference> {
        match self {
            Outcome::Consensus(p) => Some(p),
            Outcome::NoConsensus { .. } => None,
        }
    }
}

/// Counts already-resolved votes (`None` = invalid) and applies the strict
/// majority rule: a side wins only with more than k/2 of all k votes.
pub fn tally_votes(votes: &[Option<Side>]) -> Result<(Option<Side>, Tally), JudgeError> {
    let k = votes.len();
    if k == 0 || k % 2 == 0 {
        return Err(JudgeError::Config(format!("vote count must be odd and positive, got {k}")));
    }
    let mut tally = Tally::default();
    for vote in votes {
        match vote {
            Some(Side::First) => tally.first += 1,
            Some(Side::Second) => tally.second += 1,
            None => tally.invalid += 1,
        }
    }
    let k = k as u32;
    let winner = if 2 * tally.first > k {
        Some(Side::First)
    } else if 2 * tally.second > k {
        Some(Side::Second)
    } else {
        None
    };
    Ok((winner, tally))
}

/// Aggregates judge verdicts after mapping each A/B back through its
/// presentation order.
pub fn majority_vote(verdicts: &[JudgeVerdict], judge_model_id: &str) -> Result<Outcome, JudgeError> {
    let votes: Vec<Option<Side>> = verdicts.iter().map(JudgeVerdict::side).collect();
    let (winner, tally) = tally_votes(&votes)?;
    let judge_model_id = judge_model_id.to_owned();
    Ok(match winner {
        Some(winner) => Outcome::Consensus(Preference { winner, tally, judge_model_id }),
        None => Outcome::NoConsensus { tally, judge_model_id },
    })
}
