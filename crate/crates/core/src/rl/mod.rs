//! Tabular Q-learning over discretized session state.
//!
//! The agent picks a difficulty adjustment (lower, hold, raise) for the next
//! challenge of a session and learns from the outcome of that challenge with
//! the temporal-difference update
//!
//! ```text
//! Q(s, a) <- Q(s, a) + alpha * (r + gamma * max_a' Q(s', a') - Q(s, a))
//! ```

mod agent;
mod qtable;
mod snapshot;
mod state;

use serde::{Deserialize, Serialize};

use crate::challenge::{DifficultyLevel, VerificationResult};

pub use agent::{select_action, AdaptiveAgent, LearningParams, ParamsError};
pub use qtable::{QTable, QUpdate};
pub use snapshot::{load_qtable, save_qtable, SnapshotError, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};
pub use state::{
    encode_state, FailureBucket, RlState, SessionStats, StateParts, TimeBucket, FAST_RESPONSE_S,
    SLOW_RESPONSE_S,
};

/// Difficulty adjustment. Table column order is lower, hold, raise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum RlAction {
    Lower,
    Hold,
    Raise,
}

impl RlAction {
    pub const ALL: [RlAction; 3] = [RlAction::Lower, RlAction::Hold, RlAction::Raise];
    pub const COUNT: usize = 3;

    pub const fn delta(self) -> i8 {
        match self {
            RlAction::Lower => -1,
            RlAction::Hold => 0,
            RlAction::Raise => 1,
        }
    }

    pub const fn index(self) -> usize {
        (self.delta() + 1) as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn from_delta(delta: i8) -> Option<Self> {
        match delta {
            -1 => Some(RlAction::Lower),
            0 => Some(RlAction::Hold),
            1 => Some(RlAction::Raise),
            _ => None,
        }
    }
}

impl TryFrom<i8> for RlAction {
    type Error = String;

    fn try_from(delta: i8) -> Result<Self, Self::Error> {
        Self::from_delta(delta).ok_or_else(|| format!("action delta {delta} not in {{-1, 0, 1}}"))
    }
}

impl From<RlAction> for i8 {
    fn from(a: RlAction) -> i8 {
        a.delta()
    }
}

/// `level + delta`, clamped to the valid range.
pub fn apply_action(level: DifficultyLevel, action: RlAction) -> DifficultyLevel {
    level.offset(action.delta())
}

/// Immediate reward: +1, 0 or -1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub struct Reward(i8);

impl Reward {
    pub const POSITIVE: Reward = Reward(1);
    pub const NEUTRAL: Reward = Reward(0);
    pub const NEGATIVE: Reward = Reward(-1);

    pub const fn get(self) -> i8 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64
    }
}

impl TryFrom<i8> for Reward {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            -1..=1 => Ok(Reward(v)),
            _ => Err(format!("reward {v} not in {{-1, 0, 1}}")),
        }
    }
}

impl From<Reward> for i8 {
    fn from(r: Reward) -> i8 {
        r.0
    }
}

/// +1 for a correct answer within the time limit, -1 for a wrong or late
/// answer, 0 whenever the interaction is ambiguous.
pub fn reward(result: &VerificationResult, ambiguous: bool) -> Reward {
    if ambiguous {
        Reward::NEUTRAL
    } else if result.correct && result.within_limit {
        Reward::POSITIVE
    } else {
        Reward::NEGATIVE
    }
}
