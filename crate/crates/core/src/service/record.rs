use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::analysis::Verdict;
use crate::challenge::{DifficultyLevel, VerificationResult};
use crate::nonce::{ChallengeId, SessionId};
use crate::rl::{Reward, RlAction, SessionStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Created,
    Challenged,
    VerifiedHuman,
    Blocked,
    Escalated,
}

impl SessionState {
    pub const ALL: [SessionState; 5] = [
        SessionState::Created,
        SessionState::Challenged,
        SessionState::VerifiedHuman,
        SessionState::Blocked,
        SessionState::Escalated,
    ];

    /// The legal transition relation.
    pub fn can_transition_to(self, to: SessionState) -> bool {
        use SessionState::*;
        matches!(
            (self, to),
            (Created, Challenged)
                | (Challenged, VerifiedHuman)
                | (Challenged, Blocked)
                | (Challenged, Escalated)
                | (Escalated, Challenged)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::VerifiedHuman | SessionState::Blocked)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Grid,
    Audio,
    /// A grid whose target is named first in an accompanying audio clip.
    Paired,
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "grid" => Ok(Modality::Grid),
            "audio" => Ok(Modality::Audio),
            "paired" => Ok(Modality::Paired),
            _ => Err(format!(
                "unknown modality {s:?}; expected grid, audio or paired"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockReason {
    BotVerdict,
    ChallengeLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub challenge_id: ChallengeId,
    pub level: DifficultyLevel,
    pub result: VerificationResult,
    pub verdict: Verdict,
    pub reward: Reward,
    /// The adjustment that chose this challenge's level.
    pub action: RlAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: SessionId,
    pub state: SessionState,
    pub stats: SessionStats,
    pub history: Vec<HistoryEntry>,
    pub outstanding: Option<ChallengeId>,
    pub block_reason: Option<BlockReason>,
    pub verified_at: Option<DateTime<Utc>>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}
