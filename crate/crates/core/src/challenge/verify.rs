use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{AudioChallenge, ChallengeError, GridChallenge};

/// Either kind of issued challenge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "modality", rename_all = "lowercase")]
pub enum Challenge {
    Grid(GridChallenge),
    Audio(AudioChallenge),
}

impl Challenge {
    pub fn time_limit_s(&self) -> f64 {
        match self {
            Challenge::Grid(g) => g.time_limit_s,
            Challenge::Audio(a) => a.time_limit_s,
        }
    }
}

/// A submitted answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Solution {
    Grid { indices: Vec<u8> },
    Audio { transcript: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub correct: bool,
    pub elapsed_s: f64,
    pub within_limit: bool,
}

/// Lowercase, trim, collapse internal whitespace to single spaces.
pub fn normalize_transcript(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn grid_selection(indices: &[u8]) -> Result<BTreeSet<u8>, ChallengeError> {
    let mut set = BTreeSet::new();
    for &i in indices {
        if i > 8 {
            return Err(ChallengeError::IndexOutOfRange(i));
        }
        if !set.insert(i) {
            return Err(ChallengeError::DuplicateIndex(i));
        }
    }
    Ok(set)
}

/// Grid answers must equal the target set exactly; audio answers must match
/// the expected transcript after normalization.
pub fn verify_solution(
    challenge: &Challenge,
    solution: &Solution,
    elapsed_s: f64,
) -> Result<VerificationResult, ChallengeError> {
    if !elapsed_s.is_finite() || elapsed_s < 0.0 {
        return Err(ChallengeError::InvalidElapsed(elapsed_s));
    }
    let correct = match (challenge, solution) {
        (Challenge::Grid(g), Solution::Grid { indices }) => {
            grid_selection(indices)? == g.target_indices
        }
        (Challenge::Audio(a), Solution::Audio { transcript }) => {
            let normalized = normalize_transcript(transcript);
            if normalized.is_empty() {
                return Err(ChallengeError::EmptyTranscript);
            }
            normalized == a.expected_transcript
        }
        _ => return Err(ChallengeError::VariantMismatch),
    };
    Ok(VerificationResult {
        correct,
        elapsed_s,
        within_limit: elapsed_s <= challenge.time_limit_s(),
    })
}
