//! Append-only JSON-lines event journal and replay.
//!
//! The service mutates session records only by applying the events it
//! journals, so replaying a journal reproduces the live state exactly.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::record::{BlockReason, HistoryEntry, Modality, SessionRecord, SessionState};
use crate::analysis::{FeatureVector, InteractionEvent, Verdict};
use crate::challenge::{DifficultyLevel, VerificationResult};
use crate::nonce::{ChallengeId, SessionId};
use crate::rl::{QTable, QUpdate, Reward, RlAction, RlState, SessionStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum JournalEvent {
    SessionCreated {
        session_id: SessionId,
        level: DifficultyLevel,
    },
    ChallengeIssued {
        session_id: SessionId,
        challenge_id: ChallengeId,
        modality: Modality,
        seed: u64,
        from: SessionState,
        rl_state: RlState,
        action: RlAction,
        /// Level before the action was applied.
        previous_level: DifficultyLevel,
        level: DifficultyLevel,
    },
    ResponseSubmitted {
        session_id: SessionId,
        challenge_id: ChallengeId,
        result: VerificationResult,
        telemetry: Vec<InteractionEvent>,
        features: Option<FeatureVector>,
        malformed: bool,
    },
    Verdict {
        session_id: SessionId,
        challenge_id: ChallengeId,
        result: VerificationResult,
        verdict: Verdict,
        reward: Reward,
        action: RlAction,
        level: DifficultyLevel,
        from: SessionState,
        to: SessionState,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<BlockReason>,
    },
    QUpdate {
        session_id: SessionId,
        challenge_id: ChallengeId,
        update: QUpdate,
    },
    /// Simulation-only: the true nature of the agent behind a session.
    GroundTruth {
        session_id: SessionId,
        kind: String,
    },
    Marker {
        name: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub seq: u64,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub event: JournalEvent,
}

/// In-memory and/or file-backed journal. Each record is written as one
/// complete line and flushed before `append` returns.
#[derive(Debug, Default)]
pub struct Journal {
    file: Option<File>,
    memory: Option<Vec<JournalRecord>>,
    next_seq: u64,
}

impl Journal {
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn in_memory() -> Self {
        Self {
            memory: Some(Vec::new()),
            ..Self::default()
        }
    }

    /// Appends to `path`, creating it if needed. Sequence numbers continue
    /// from `next_seq`.
    pub fn open(path: &Path, keep_in_memory: bool, next_seq: u64) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Some(file),
            memory: keep_in_memory.then(Vec::new),
            next_seq,
        })
    }

    pub fn append(&mut self, at: DateTime<Utc>, event: JournalEvent) -> std::io::Result<()> {
        let record = JournalRecord {
            seq: self.next_seq,
            at,
            event,
        };
        self.next_seq += 1;
        if let Some(file) = self.file.as_mut() {
            let mut line = serde_json::to_vec(&record).expect("journal records serialize");
            line.push(b'\n');
            file.write_all(&line)?;
        }
        if let Some(memory) = self.memory.as_mut() {
            memory.push(record);
        }
        Ok(())
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        match self.file.as_mut() {
            Some(f) => f.sync_data(),
            None => Ok(()),
        }
    }

    pub fn records(&self) -> &[JournalRecord] {
        self.memory.as_deref().unwrap_or(&[])
    }

    pub fn len(&self) -> u64 {
        self.next_seq
    }

    pub fn is_empty(&self) -> bool {
        self.next_seq == 0
    }
}

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("reading journal: {0}")]
    Io(#[from] std::io::Error),
    #[error("journal line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

/// Parsed journal plus a count of dropped torn trailing lines (0 or 1).
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedJournal {
    pub records: Vec<JournalRecord>,
    pub torn_lines: usize,
}

/// Parses a journal. An unparsable final line is a torn write: it is dropped
/// with a warning. An unparsable line anywhere else is an error.
pub fn read_journal(reader: impl BufRead) -> Result<LoadedJournal, JournalError> {
    let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut records = Vec::with_capacity(lines.len());
    let mut torn_lines = 0;
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<JournalRecord>(line) {
            Ok(r) => records.push(r),
            Err(e) if Some(i) == last => {
                log::warn!("dropping torn final journal line {}: {e}", i + 1);
                torn_lines += 1;
            }
            Err(e) => {
                return Err(JournalError::Corrupt {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(LoadedJournal {
        records,
        torn_lines,
    })
}

pub fn read_journal_file(path: &Path) -> Result<LoadedJournal, JournalError> {
    read_journal(BufReader::new(File::open(path)?))
}

/// Everything a journal determines.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayState {
    pub sessions: BTreeMap<SessionId, SessionRecord>,
    pub qtable: QTable,
    pub ground_truth: BTreeMap<SessionId, String>,
}

impl ReplayState {
    pub fn apply(&mut self, record: &JournalRecord) -> Result<(), String> {
        match &record.event {
            JournalEvent::SessionCreated { session_id, level } => {
                if self.sessions.contains_key(session_id) {
                    return Err(format!("session {session_id} created twice"));
                }
                self.sessions.insert(
                    *session_id,
                    SessionRecord::new(*session_id, *level, record.at),
                );
                Ok(())
            }
            JournalEvent::QUpdate { update, .. } => {
                self.qtable.set(update.state, update.action, update.after);
                self.qtable.bump_visits(update.state, update.action);
                Ok(())
            }
            JournalEvent::GroundTruth { session_id, kind } => {
                self.ground_truth.insert(*session_id, kind.clone());
                Ok(())
            }
            JournalEvent::Marker { .. } => Ok(()),
            JournalEvent::ChallengeIssued { session_id, .. }
            | JournalEvent::ResponseSubmitted { session_id, .. }
            | JournalEvent::Verdict { session_id, .. } => {
                let session = self
                    .sessions
                    .get_mut(session_id)
                    .ok_or_else(|| format!("event for unknown session {session_id}"))?;
                session.apply(record)
            }
        }
    }
}

pub fn replay(records: &[JournalRecord]) -> Result<ReplayState, JournalError> {
    let mut state = ReplayState::default();
    for r in records {
        state.apply(r).map_err(|message| JournalError::Corrupt {
            line: r.seq as usize + 1,
            message,
        })?;
    }
    Ok(state)
}

/// Replaces every timestamp with the Unix epoch so that journals of runs
/// with a wall clock can be compared.
pub fn canonicalize(records: &[JournalRecord]) -> Vec<JournalRecord> {
    records
        .iter()
        .map(|r| JournalRecord {
            at: DateTime::<Utc>::UNIX_EPOCH,
            ..r.clone()
        })
        .collect()
}

impl SessionRecord {
    pub(crate) fn new(session_id: SessionId, level: DifficultyLevel, at: DateTime<Utc>) -> Self {
        Self {
            session_id,
            state: SessionState::Created,
            stats: SessionStats::new(level),
            history: Vec::new(),
            outstanding: None,
            block_reason: None,
            verified_at: None,
            created_at: at,
            updated_at: at,
        }
    }

    /// Folds one of this session's events into the record.
    pub(crate) fn apply(&mut self, record: &JournalRecord) -> Result<(), String> {
        match &record.event {
            JournalEvent::ChallengeIssued {
                challenge_id,
                from,
                level,
                ..
            } => {
                if *from != self.state || !self.state.can_transition_to(SessionState::Challenged) {
                    return Err(format!(
                        "illegal issue from {:?} (journal says {from:?})",
                        self.state
                    ));
                }
                self.state = SessionState::Challenged;
                self.stats.current_level = *level;
                self.outstanding = Some(*challenge_id);
            }
            JournalEvent::ResponseSubmitted { challenge_id, .. } => {
                if self.outstanding != Some(*challenge_id) {
                    return Err(format!(
                        "response for {challenge_id}, which is not outstanding"
                    ));
                }
            }
            JournalEvent::Verdict {
                challenge_id,
                result,
                verdict,
                reward,
                action,
                level,
                from,
                to,
                reason,
                ..
            } => {
                if *from != self.state || !self.state.can_transition_to(*to) {
                    return Err(format!("illegal transition {from:?} -> {to:?}"));
                }
                if self.outstanding != Some(*challenge_id) {
                    return Err(format!(
                        "verdict for {challenge_id}, which is not outstanding"
                    ));
                }
                let passed = result.correct && result.within_limit;
                let suspicious = verdict.label != crate::analysis::VerdictLabel::Human;
                self.stats
                    .record_response(passed, result.elapsed_s, suspicious);
                self.history.push(HistoryEntry {
                    challenge_id: *challenge_id,
                    level: *level,
                    result: *result,
                    verdict: *verdict,
                    reward: *reward,
                    action: *action,
                });
                self.state = *to;
                self.outstanding = None;
                self.block_reason = *reason;
                if *to == SessionState::VerifiedHuman {
                    self.verified_at = Some(record.at);
                }
            }
            _ => return Err("not a session event".into()),
        }
        self.updated_at = record.at;
        Ok(())
    }
}
