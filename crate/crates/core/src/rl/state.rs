use serde::{Deserialize, Serialize};

use crate::challenge::DifficultyLevel;

/// Responses faster than this land in the "fast" time bucket.
pub const FAST_RESPONSE_S: f64 = 2.0;
/// Responses slower than this land in the "slow" time bucket.
pub const SLOW_RESPONSE_S: f64 = 10.0;

/// Per-session behavioral summary the agent conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub current_level: DifficultyLevel,
    pub consecutive_failures: u32,
    pub last_response_time_s: Option<f64>,
    pub suspicion_flag: bool,
}

impl SessionStats {
    pub fn new(level: DifficultyLevel) -> Self {
        Self {
            current_level: level,
            consecutive_failures: 0,
            last_response_time_s: None,
            suspicion_flag: false,
        }
    }

    /// Folds one answered challenge into the stats. A correct answer within
    /// the limit resets the failure streak; anything else extends it.
    pub fn record_response(&mut self, passed: bool, elapsed_s: f64, suspicious: bool) {
        if passed {
            self.consecutive_failures = 0;
        } else {
            self.consecutive_failures = self.consecutive_failures.saturating_add(1);
        }
        self.last_response_time_s = Some(elapsed_s);
        self.suspicion_flag = suspicious;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureBucket {
    None,
    One,
    TwoOrMore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeBucket {
    Fast,
    Normal,
    Slow,
}

impl TimeBucket {
    pub fn of(response_time_s: Option<f64>) -> Self {
        match response_time_s {
            Some(t) if t < FAST_RESPONSE_S => TimeBucket::Fast,
            Some(t) if t > SLOW_RESPONSE_S => TimeBucket::Slow,
            _ => TimeBucket::Normal,
        }
    }
}

/// Decoded form of an [`RlState`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StateParts {
    pub level: DifficultyLevel,
    pub failures: FailureBucket,
    pub time: TimeBucket,
    pub suspicious: bool,
}

/// Dense state index in `0..90`: level x failures x time x suspicion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct RlState(u8);

impl RlState {
    pub const COUNT: usize = 90;

    pub fn from_index(i: usize) -> Option<Self> {
        (i < Self::COUNT).then_some(RlState(i as u8))
    }

    pub const fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = RlState> {
        (0..Self::COUNT as u8).map(RlState)
    }

    pub fn encode(parts: StateParts) -> Self {
        let failures = match parts.failures {
            FailureBucket::None => 0,
            FailureBucket::One => 1,
            FailureBucket::TwoOrMore => 2,
        };
        let time = match parts.time {
            TimeBucket::Fast => 0,
            TimeBucket::Normal => 1,
            TimeBucket::Slow => 2,
        };
        let idx = ((parts.level.index() * 3 + failures) * 3 + time) * 2 + parts.suspicious as usize;
        RlState(idx as u8)
    }

    pub fn decode(self) -> StateParts {
        let mut i = self.0 as usize;
        let suspicious = i % 2 == 1;
        i /= 2;
        let time = [TimeBucket::Fast, TimeBucket::Normal, TimeBucket::Slow][i % 3];
        i /= 3;
        let failures = [
            FailureBucket::None,
            FailureBucket::One,
            FailureBucket::TwoOrMore,
        ][i % 3];
        i /= 3;
        let level =
            DifficultyLevel::new(i as i64 + 1).expect("index < 90 decodes to a valid level");
        StateParts {
            level,
            failures,
            time,
            suspicious,
        }
    }
}

impl TryFrom<u8> for RlState {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        RlState::from_index(v as usize).ok_or_else(|| format!("state {v} outside 0..90"))
    }
}

impl From<RlState> for u8 {
    fn from(s: RlState) -> u8 {
        s.0
    }
}

/// Buckets session stats; a session with no response yet counts as "normal" time.
pub fn encode_state(stats: &SessionStats) -> RlState {
    let failures = match stats.consecutive_failures {
        0 => FailureBucket::None,
        1 => FailureBucket::One,
        _ => FailureBucket::TwoOrMore,
    };
    RlState::encode(StateParts {
        level: stats.current_level,
        failures,
        time: TimeBucket::of(stats.last_response_time_s),
        suspicious: stats.suspicion_flag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn stats(level: i64, failures: u32, time: Option<f64>, suspicion: bool) -> SessionStats {
        SessionStats {
            current_level: DifficultyLevel::new(level).unwrap(),
            consecutive_failures: failures,
            last_response_time_s: time,
            suspicion_flag: suspicion,
        }
    }

    #[test]
    fn bucket_examples() {
        let p = encode_state(&stats(1, 0, Some(1.5), false)).decode();
        assert_eq!(p.level.get(), 1);
        assert_eq!(p.failures, FailureBucket::None);
        assert_eq!(p.time, TimeBucket::Fast);
        assert!(!p.suspicious);

        let p = encode_state(&stats(5, 7, Some(25.0), true)).decode();
        assert_eq!(p.level.get(), 5);
        assert_eq!(p.failures, FailureBucket::TwoOrMore);
        assert_eq!(p.time, TimeBucket::Slow);
        assert!(p.suspicious);

        assert_eq!(
            encode_state(&stats(3, 0, None, false)).decode().time,
            TimeBucket::Normal
        );
        assert_eq!(TimeBucket::of(Some(2.0)), TimeBucket::Normal);
        assert_eq!(TimeBucket::of(Some(10.0)), TimeBucket::Normal);
    }

    #[test]
    fn encoding_is_a_bijection() {
        let mut seen = HashSet::new();
        for level in DifficultyLevel::all() {
            for failures in [
                FailureBucket::None,
                FailureBucket::One,
                FailureBucket::TwoOrMore,
            ] {
                for time in [TimeBucket::Fast, TimeBucket::Normal, TimeBucket::Slow] {
                    for suspicious in [false, true] {
                        let parts = StateParts {
                            level,
                            failures,
                            time,
                            suspicious,
                        };
                        let s = RlState::encode(parts);
                        assert!(s.index() < RlState::COUNT);
                        assert_eq!(s.decode(), parts);
                        seen.insert(s);
                    }
                }
            }
        }
        assert_eq!(seen.len(), 90);
        for s in RlState::all() {
            assert_eq!(RlState::encode(s.decode()), s);
        }
    }

    #[test]
    fn failure_streak_resets() {
        let mut s = stats(2, 0, None, false);
        s.record_response(false, 4.0, false);
        s.record_response(false, 4.0, true);
        assert_eq!(s.consecutive_failures, 2);
        assert!(s.suspicion_flag);
        s.record_response(true, 3.0, false);
        assert_eq!(s.consecutive_failures, 0);
        assert_eq!(s.last_response_time_s, Some(3.0));
    }
}
