//! Run metrics, computed identically from a live run or from its journal.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::analysis::{ClassifierMetrics, ConfusionCounts, Label, Verdict, VerdictLabel};
use crate::challenge::{DifficultyLevel, VerificationResult};
use crate::nonce::SessionId;
use crate::rl::{FAST_RESPONSE_S, SLOW_RESPONSE_S};
use crate::service::{BlockReason, JournalEvent, JournalRecord, SessionState};

use super::AgentKind;

/// Journal marker separating warm-up sessions from measured ones.
pub const MEASURE_MARKER: &str = "measurement_start";

/// Kind recorded for sessions without ground truth.
pub const UNKNOWN_KIND: &str = "unknown";

/// Fraction of follow-up challenges whose level moved the way the oracle
/// says it should.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AdaptabilityScore {
    /// Follow-ups for which the oracle has an opinion.
    pub events: u64,
    pub matches: u64,
    pub score: Option<f64>,
}

/// The direction a well-behaved controller should move after a response:
/// `+1` after a bot-flagged or suspiciously fast correct answer, `-1` after
/// a human failed, timed out or was slow, otherwise `0` (no opinion).
pub fn oracle_direction(truth_human: bool, result: &VerificationResult, verdict: &Verdict) -> i8 {
    let flagged = verdict.label == VerdictLabel::Bot || verdict.flags.any();
    if flagged || (result.correct && result.elapsed_s < FAST_RESPONSE_S) {
        1
    } else if truth_human
        && (!result.correct || !result.within_limit || result.elapsed_s > SLOW_RESPONSE_S)
    {
        -1
    } else {
        0
    }
}

/// A follow-up matches when its level equals the previous level moved one
/// step in the oracle's direction, saturating at the bounds.
pub fn adaptation_matches(
    previous: DifficultyLevel,
    served: DifficultyLevel,
    direction: i8,
) -> bool {
    served == previous.offset(direction)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Measured sessions (warm-up excluded).
    pub sessions: u64,
    pub warmup_sessions: u64,
    pub sessions_by_kind: BTreeMap<String, u64>,
    /// Measured sessions that never reached a terminal state.
    pub unterminated_sessions: u64,
    pub challenges: u64,
    /// Challenges served per level, index 0 = level 1.
    pub level_counts: [u64; DifficultyLevel::COUNT],
    pub mean_level_by_kind: BTreeMap<String, f64>,
    /// Bot sessions that ended verified.
    pub bypass_rate: Option<f64>,
    /// Human sessions that ended verified.
    pub human_success_rate: Option<f64>,
    /// Human sessions blocked on a bot verdict.
    pub fpr: Option<f64>,
    /// Mean time to answer over all human responses.
    pub avg_response_time_s: Option<f64>,
    /// Per-response verdicts against ground truth, human positive,
    /// `uncertain` counted as not human.
    pub classifier: Option<ClassifierMetrics>,
    pub adaptability: AdaptabilityScore,
}

impl MetricsReport {
    pub fn to_table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("n/a".to_owned(), |v| format!("{:.2}%", v * 100.0));
        let mut out = String::new();
        let mut row = |k: &str, v: String| {
            let _ = writeln!(out, "{k:<24} {v}");
        };
        row(
            "sessions",
            format!("{} (+{} warm-up)", self.sessions, self.warmup_sessions),
        );
        for (kind, n) in &self.sessions_by_kind {
            row(&format!("  {kind}"), n.to_string());
        }
        row("challenges", self.challenges.to_string());
        row("bypass rate", pct(self.bypass_rate));
        row("human success rate", pct(self.human_success_rate));
        row("false positive rate", pct(self.fpr));
        row(
            "avg response time",
            self.avg_response_time_s
                .map_or("n/a".into(), |t| format!("{t:.2} s")),
        );
        if let Some(c) = &self.classifier {
            row("classifier f1", format!("{:.4}", c.f1));
            row("classifier precision", format!("{:.4}", c.precision));
            row("classifier recall", format!("{:.4}", c.recall));
        }
        row(
            "adaptability",
            format!(
                "{} ({}/{})",
                pct(self.adaptability.score),
                self.adaptability.matches,
                self.adaptability.events
            ),
        );
        let levels: Vec<String> = self.level_counts.iter().map(u64::to_string).collect();
        row("challenges by level", levels.join(" / "));
        for (kind, mean) in &self.mean_level_by_kind {
            row(&format!("  mean level {kind}"), format!("{mean:.3}"));
        }
        out
    }
}

#[derive(Debug, Clone)]
struct SessionTally {
    kind: String,
    measured: bool,
    last_level: Option<DifficultyLevel>,
    last_response: Option<(VerificationResult, Verdict)>,
    terminal: bool,
}

#[derive(Debug, Default, Clone)]
struct KindTally {
    sessions: u64,
    verified: u64,
    bot_blocked: u64,
    level_sum: u64,
    challenges: u64,
}

/// Folds session events into a [`MetricsReport`]. Fed either by the
/// simulator as it runs or by [`compute_metrics`] from a journal.
#[derive(Debug, Default, Clone)]
pub struct MetricsAccumulator {
    sessions: HashMap<SessionId, SessionTally>,
    warmup_sessions: u64,
    unterminated: u64,
    kinds: BTreeMap<String, KindTally>,
    level_counts: [u64; DifficultyLevel::COUNT],
    human_time_sum: f64,
    human_responses: u64,
    confusion: ConfusionCounts,
    adapt_events: u64,
    adapt_matches: u64,
}

fn is_human(kind: &str) -> bool {
    kind == AgentKind::Human.name()
}

fn is_bot(kind: &str) -> bool {
    kind != UNKNOWN_KIND && !is_human(kind)
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn session(&mut self, sid: SessionId, kind: &str, measured: bool) {
        if !measured {
            self.warmup_sessions += 1;
        } else {
            self.kinds.entry(kind.to_owned()).or_default().sessions += 1;
            self.unterminated += 1;
        }
        self.sessions.insert(
            sid,
            SessionTally {
                kind: kind.to_owned(),
                measured,
                last_level: None,
                last_response: None,
                terminal: false,
            },
        );
    }

    pub fn issued(&mut self, sid: SessionId, level: DifficultyLevel) {
        let Some(s) = self.sessions.get_mut(&sid) else {
            return;
        };
        let previous = s.last_level.replace(level);
        let response = s.last_response.take();
        if !s.measured {
            return;
        }
        self.level_counts[level.index()] += 1;
        let kind = self.kinds.entry(s.kind.clone()).or_default();
        kind.level_sum += level.get() as u64;
        kind.challenges += 1;
        if let (Some(previous), Some((result, verdict))) = (previous, response) {
            let direction = oracle_direction(is_human(&s.kind), &result, &verdict);
            if direction != 0 {
                self.adapt_events += 1;
                if adaptation_matches(previous, level, direction) {
                    self.adapt_matches += 1;
                }
            }
        }
    }

    pub fn responded(&mut self, sid: SessionId, result: &VerificationResult, verdict: &Verdict) {
        let Some(s) = self.sessions.get_mut(&sid) else {
            return;
        };
        s.last_response = Some((*result, *verdict));
        if !s.measured {
            return;
        }
        if is_human(&s.kind) {
            self.human_time_sum += result.elapsed_s;
            self.human_responses += 1;
        }
        let truth = if is_human(&s.kind) {
            Label::Human
        } else if is_bot(&s.kind) {
            Label::Bot
        } else {
            return;
        };
        self.confusion
            .record(truth, verdict.label == VerdictLabel::Human);
    }

    pub fn finished(&mut self, sid: SessionId, state: SessionState, reason: Option<BlockReason>) {
        let Some(s) = self.sessions.get_mut(&sid) else {
            return;
        };
        if !s.measured || s.terminal || !state.is_terminal() {
            return;
        }
        s.terminal = true;
        self.unterminated -= 1;
        let kind = self.kinds.entry(s.kind.clone()).or_default();
        if state == SessionState::VerifiedHuman {
            kind.verified += 1;
        }
        if reason == Some(BlockReason::BotVerdict) {
            kind.bot_blocked += 1;
        }
    }

    pub fn report(&self) -> MetricsReport {
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        let mut humans = KindTally::default();
        let mut bots = KindTally::default();
        for (kind, t) in &self.kinds {
            let into = if is_human(kind) {
                &mut humans
            } else if is_bot(kind) {
                &mut bots
            } else {
                continue;
            };
            into.sessions += t.sessions;
            into.verified += t.verified;
            into.bot_blocked += t.bot_blocked;
        }
        MetricsReport {
            sessions: self.kinds.values().map(|t| t.sessions).sum(),
            warmup_sessions: self.warmup_sessions,
            sessions_by_kind: self
                .kinds
                .iter()
                .map(|(k, t)| (k.clone(), t.sessions))
                .collect(),
            unterminated_sessions: self.unterminated,
            challenges: self.level_counts.iter().sum(),
            level_counts: self.level_counts,
            mean_level_by_kind: self
                .kinds
                .iter()
                .filter(|(_, t)| t.challenges > 0)
                .map(|(k, t)| (k.clone(), t.level_sum as f64 / t.challenges as f64))
                .collect(),
            bypass_rate: ratio(bots.verified, bots.sessions),
            human_success_rate: ratio(humans.verified, humans.sessions),
            fpr: ratio(humans.bot_blocked, humans.sessions),
            avg_response_time_s: (self.human_responses > 0)
                .then(|| self.human_time_sum / self.human_responses as f64),
            classifier: self.confusion.metrics().ok(),
            adaptability: AdaptabilityScore {
                events: self.adapt_events,
                matches: self.adapt_matches,
                score: ratio(self.adapt_matches, self.adapt_events),
            },
        }
    }
}

/// Recomputes the metrics of a run from its journal. Sessions created
/// before a [`MEASURE_MARKER`] count as warm-up; without a marker every
/// session is measured.
pub fn compute_metrics(records: &[JournalRecord]) -> MetricsReport {
    let mut measuring = !records
        .iter()
        .any(|r| matches!(&r.event, JournalEvent::Marker { name } if name == MEASURE_MARKER));
    let mut acc = MetricsAccumulator::new();
    let mut created: Vec<(SessionId, bool)> = Vec::new();
    let mut tagged: HashMap<SessionId, String> = HashMap::new();
    let mut pending: HashMap<SessionId, bool> = HashMap::new();

    // Ground truth follows session creation, so registration waits for the
    // first event that needs the session.
    let ensure = |acc: &mut MetricsAccumulator,
                  pending: &mut HashMap<SessionId, bool>,
                  tagged: &HashMap<SessionId, String>,
                  sid: SessionId| {
        if let Some(measured) = pending.remove(&sid) {
            let kind = tagged.get(&sid).map_or(UNKNOWN_KIND, String::as_str);
            acc.session(sid, kind, measured);
        }
    };
    for r in records {
        match &r.event {
            JournalEvent::Marker { name } if name == MEASURE_MARKER => measuring = true,
            JournalEvent::Marker { .. }
            | JournalEvent::QUpdate { .. }
            | JournalEvent::ResponseSubmitted { .. } => {}
            JournalEvent::SessionCreated { session_id, .. } => {
                created.push((*session_id, measuring));
                pending.insert(*session_id, measuring);
            }
            JournalEvent::GroundTruth { session_id, kind } => {
                tagged.insert(*session_id, kind.clone());
                ensure(&mut acc, &mut pending, &tagged, *session_id);
            }
            JournalEvent::ChallengeIssued {
                session_id, level, ..
            } => {
                ensure(&mut acc, &mut pending, &tagged, *session_id);
                acc.issued(*session_id, *level);
            }
            JournalEvent::Verdict {
                session_id,
                result,
                verdict,
                to,
                reason,
                ..
            } => {
                ensure(&mut acc, &mut pending, &tagged, *session_id);
                acc.responded(*session_id, result, verdict);
                acc.finished(*session_id, *to, *reason);
            }
        }
    }
    for (sid, _) in created {
        ensure(&mut acc, &mut pending, &tagged, sid);
    }
    acc.report()
}

/// Adaptability of a journal on its own.
pub fn adaptability_score(records: &[JournalRecord]) -> AdaptabilityScore {
    compute_metrics(records).adaptability
}
