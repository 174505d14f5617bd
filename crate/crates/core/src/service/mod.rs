//! Verification sessions: challenge issuance at the RL-chosen level, response
//! checking, classification, Q-learning updates, pass tokens and the journal.
//!
//! Session lifecycle:
//!
//! ```text
//! created -> challenged -> verified_human
//!                       -> blocked
//!                       -> escalated -> challenged -> ...
//! ```
//!
//! An escalation immediately issues the next challenge, so a client sees
//! `escalated` in the submit response together with `next_challenge`.

mod clock;
mod config;
mod journal;
mod payload;
mod record;
mod token;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::{BuildHasher, RandomState};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use clock::{seconds_between, Clock, ManualClock, SystemClock};
pub use config::{AssetMode, ConfigError, RlConfig, SeedMode, ServiceConfig};
pub use journal::{
    canonicalize, read_journal, read_journal_file, replay, Journal, JournalError, JournalEvent,
    JournalRecord, LoadedJournal, ReplayState,
};
pub use payload::{
    audio_url, build_payload, tile_url, Asset, ChallengePayload, IssuedChallenge, PGM_MEDIA_TYPE,
    WAV_MEDIA_TYPE,
};
pub use record::{BlockReason, HistoryEntry, Modality, SessionRecord, SessionState};
pub use token::{sign_pass_token, verify_pass_token};

use crate::analysis::{
    classify, extract_features, validate_telemetry, InteractionEvent, SvmModel, Verdict,
    VerdictLabel,
};
use crate::challenge::{
    generate_audio_challenge, generate_grid_challenge, verify_solution, Challenge, ChallengeMeta,
    Solution, VerificationResult,
};
use crate::nonce::{ChallengeId, NonceSource, SessionId};
use crate::rl::{
    apply_action, encode_state, load_qtable, reward, save_qtable, AdaptiveAgent, QTable, Reward,
    RlAction,
};
use crate::rng::{mix64, SplitMix64};

pub const TOKEN_KEY_ENV: &str = "ADAPTCHA_TOKEN_KEY";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("challenge {0} was already answered")]
    Gone(ChallengeId),
    #[error("{0}")]
    Unprocessable(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Gone(_) => "gone",
            ServiceError::Unprocessable(_) => "unprocessable",
            ServiceError::Config(_) => "config",
            ServiceError::Internal(_) => "internal",
        }
    }
}

fn internal(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Internal(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: SessionId,
    pub state: SessionState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub challenge_id: ChallengeId,
    pub solution: Solution,
    #[serde(default)]
    pub telemetry: Vec<InteractionEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubmitOutcome {
    pub verdict: Verdict,
    /// State reached by the verdict (`escalated` even when the next
    /// challenge has already been issued).
    pub state: SessionState,
    pub block_reason: Option<BlockReason>,
    pub result: VerificationResult,
    pub reward: Reward,
    pub malformed: bool,
    pub next_challenge: Option<ChallengePayload>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictView {
    pub state: SessionState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verified_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    /// Number of Q-table updates applied since startup.
    pub qtable_version: u64,
}

#[derive(Debug)]
struct SessionEntry {
    record: SessionRecord,
    outstanding: Option<IssuedChallenge>,
    answered: HashSet<ChallengeId>,
}

#[derive(Debug)]
struct Learner {
    agent: AdaptiveAgent,
    rng: SplitMix64,
}

pub struct Service {
    config: ServiceConfig,
    clock: Arc<dyn Clock>,
    nonces: NonceSource,
    model: SvmModel,
    token_key: Vec<u8>,
    sessions: Mutex<HashMap<SessionId, Arc<Mutex<SessionEntry>>>>,
    learner: Mutex<Learner>,
    seeds: Mutex<SplitMix64>,
    journal: Mutex<Journal>,
}

fn entropy_seed() -> u64 {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos() as u64);
    mix64(RandomState::new().hash_one(nanos) ^ nanos)
}

/// What recovery needs to regenerate an outstanding challenge.
type IssueParams = (Modality, u64, crate::rl::RlState, RlAction, DateTime<Utc>);

const SEED_STREAM: u64 = 0x7365_6564;
const RL_STREAM: u64 = 0x726c;
const TOKEN_STREAM: u64 = 0x0074_6f6b_656e;

impl Service {
    /// Production constructor: wall clock, configured model and journal.
    /// An existing journal is replayed to recover sessions and the Q-table.
    pub fn from_config(config: ServiceConfig) -> Result<Self, ServiceError> {
        config.validate()?;
        let model = match &config.classifier_model {
            Some(path) => SvmModel::load(path).map_err(|e| {
                ServiceError::Internal(format!("classifier_model {}: {e}", path.display()))
            })?,
            None => crate::analysis::builtin_model().clone(),
        };
        let mut recovered = None;
        let journal = match &config.journal {
            Some(path) => {
                let mut next_seq = 0;
                if path.exists() {
                    let loaded = read_journal_file(path).map_err(internal)?;
                    next_seq = loaded.records.last().map_or(0, |r| r.seq + 1);
                    if !loaded.records.is_empty() {
                        recovered = Some(loaded.records);
                    }
                }
                Journal::open(path, false, next_seq).map_err(|e| {
                    ServiceError::Internal(format!("opening journal {}: {e}", path.display()))
                })?
            }
            None => Journal::disabled(),
        };
        let qtable = match (&recovered, &config.qtable) {
            (None, Some(path)) if path.exists() => {
                let bytes = std::fs::read(path).map_err(internal)?;
                Some(load_qtable(&bytes).map_err(|e| {
                    ServiceError::Internal(format!("qtable {}: {e}", path.display()))
                })?)
            }
            _ => None,
        };
        let service = Self::with_parts(config, Arc::new(SystemClock), journal, model, qtable)?;
        if let Some(records) = recovered {
            service.recover(&records)?;
        }
        Ok(service)
    }

    /// Assembles a service from explicit parts. Used by the simulator and tests.
    pub fn with_parts(
        config: ServiceConfig,
        clock: Arc<dyn Clock>,
        journal: Journal,
        model: SvmModel,
        qtable: Option<QTable>,
    ) -> Result<Self, ServiceError> {
        config.validate()?;
        let seed = match config.seed {
            SeedMode::Fixed(s) => s,
            SeedMode::Entropy => entropy_seed(),
        };
        let token_key = match (&config.pass_token_key, std::env::var(TOKEN_KEY_ENV)) {
            (Some(k), _) => k.as_bytes().to_vec(),
            (None, Ok(k)) if !k.is_empty() => k.into_bytes(),
            _ => {
                let mut rng = SplitMix64::stream(seed, TOKEN_STREAM);
                (0..4).flat_map(|_| rng.next_u64().to_le_bytes()).collect()
            }
        };
        let params = config.rl.params();
        let agent = match qtable {
            Some(q) => AdaptiveAgent::with_table(q, params),
            None => AdaptiveAgent::new(params),
        };
        Ok(Self {
            nonces: NonceSource::from_seed(seed),
            model,
            token_key,
            sessions: Mutex::new(HashMap::new()),
            learner: Mutex::new(Learner {
                agent,
                rng: SplitMix64::stream(seed, RL_STREAM),
            }),
            seeds: Mutex::new(SplitMix64::stream(seed, SEED_STREAM)),
            journal: Mutex::new(journal),
            clock,
            config,
        })
    }

    fn recover(&self, records: &[JournalRecord]) -> Result<(), ServiceError> {
        let state = replay(records).map_err(internal)?;
        let nonces_used = records
            .iter()
            .filter(|r| {
                matches!(
                    r.event,
                    JournalEvent::SessionCreated { .. } | JournalEvent::ChallengeIssued { .. }
                )
            })
            .count() as u64;
        self.nonces.skip(nonces_used);
        *self.seeds.lock().expect("seed lock") =
            SplitMix64::stream(mix64(self.nonces.next_u128() as u64), SEED_STREAM);

        let mut issued: HashMap<ChallengeId, IssueParams> = HashMap::new();
        for r in records {
            if let JournalEvent::ChallengeIssued {
                challenge_id,
                modality,
                seed,
                rl_state,
                action,
                ..
            } = &r.event
            {
                issued.insert(*challenge_id, (*modality, *seed, *rl_state, *action, r.at));
            }
        }
        let mut learner = self.learner.lock().expect("learner lock");
        learner.agent = AdaptiveAgent::with_table(state.qtable.clone(), self.config.rl.params());
        drop(learner);

        let mut sessions = self.sessions.lock().expect("sessions lock");
        for (sid, record) in state.sessions {
            let outstanding = record.outstanding.and_then(|cid| {
                let (modality, seed, rl_state, action, at) = issued.get(&cid).copied()?;
                let meta = ChallengeMeta {
                    challenge_id: cid,
                    issued_at: at,
                    time_limit_s: self.config.time_limit_s,
                };
                Some(generate(
                    sid,
                    modality,
                    seed,
                    record.stats.current_level,
                    meta,
                    rl_state,
                    action,
                ))
            });
            let answered = record.history.iter().map(|h| h.challenge_id).collect();
            sessions.insert(
                sid,
                Arc::new(Mutex::new(SessionEntry {
                    record,
                    outstanding,
                    answered,
                })),
            );
        }
        log::info!("recovered {} sessions from the journal", sessions.len());
        Ok(())
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    fn entry(&self, sid: SessionId) -> Result<Arc<Mutex<SessionEntry>>, ServiceError> {
        self.sessions
            .lock()
            .expect("sessions lock")
            .get(&sid)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session {sid}")))
    }

    fn append(&self, event: JournalEvent) -> Result<JournalRecord, ServiceError> {
        let mut journal = self.journal.lock().expect("journal lock");
        let at = self.clock.now();
        let seq = journal.len();
        journal.append(at, event.clone()).map_err(internal)?;
        Ok(JournalRecord { seq, at, event })
    }

    fn emit(&self, entry: &mut SessionEntry, event: JournalEvent) -> Result<(), ServiceError> {
        let record = self.append(event)?;
        entry.record.apply(&record).map_err(internal)
    }

    pub fn create_session(&self) -> Result<SessionView, ServiceError> {
        let sid = self.nonces.session_id();
        let record = self.append(JournalEvent::SessionCreated {
            session_id: sid,
            level: self.config.initial_level,
        })?;
        let entry = SessionEntry {
            record: SessionRecord::new(sid, self.config.initial_level, record.at),
            outstanding: None,
            answered: HashSet::new(),
        };
        self.sessions
            .lock()
            .expect("sessions lock")
            .insert(sid, Arc::new(Mutex::new(entry)));
        Ok(SessionView {
            session_id: sid,
            state: SessionState::Created,
        })
    }

    pub fn issue_challenge(
        &self,
        sid: SessionId,
        modality: Modality,
    ) -> Result<ChallengePayload, ServiceError> {
        let entry = self.entry(sid)?;
        let mut entry = entry.lock().expect("session lock");
        let state = entry.record.state;
        if !matches!(state, SessionState::Created | SessionState::Escalated) {
            return Err(ServiceError::Conflict(format!(
                "session {sid} is {}; a challenge can only be issued when created or escalated",
                state_name(state)
            )));
        }
        let issued = self.issue(&mut entry, modality)?;
        build_payload(&issued, self.config.asset_mode, self.config.tile_size).map_err(internal)
    }

    fn issue(
        &self,
        entry: &mut SessionEntry,
        modality: Modality,
    ) -> Result<IssuedChallenge, ServiceError> {
        let sid = entry.record.session_id;
        let s = encode_state(&entry.record.stats);
        let action = if self.config.rl.enabled {
            let mut learner = self.learner.lock().expect("learner lock");
            let Learner { agent, rng } = &mut *learner;
            agent.select(s, rng)
        } else {
            RlAction::Hold
        };
        let previous_level = entry.record.stats.current_level;
        let level = apply_action(previous_level, action);
        let seed = self.seeds.lock().expect("seed lock").next_u64();
        let meta = ChallengeMeta {
            challenge_id: self.nonces.challenge_id(),
            issued_at: self.clock.now(),
            time_limit_s: self.config.time_limit_s,
        };
        let issued = generate(sid, modality, seed, level, meta, s, action);
        self.emit(
            entry,
            JournalEvent::ChallengeIssued {
                session_id: sid,
                challenge_id: meta.challenge_id,
                modality,
                seed,
                from: entry.record.state,
                rl_state: s,
                action,
                previous_level,
                level,
            },
        )?;
        entry.outstanding = Some(issued.clone());
        Ok(issued)
    }

    pub fn submit_response(
        &self,
        sid: SessionId,
        req: SubmitRequest,
    ) -> Result<SubmitOutcome, ServiceError> {
        let entry = self.entry(sid)?;
        let mut entry = entry.lock().expect("session lock");
        let cid = req.challenge_id;
        if entry.answered.contains(&cid) {
            return Err(ServiceError::Gone(cid));
        }
        let issued = match &entry.outstanding {
            Some(issued) if issued.challenge_id() == cid => issued.clone(),
            _ => {
                return Err(ServiceError::NotFound(format!(
                    "challenge {cid} in session {sid}"
                )))
            }
        };
        if entry.record.state != SessionState::Challenged {
            return Err(ServiceError::Conflict(format!(
                "session {sid} is not awaiting a response"
            )));
        }

        let elapsed = seconds_between(issued.issued_at(), self.clock.now()).max(0.0);
        let result = verify_solution(&issued.challenge, &req.solution, elapsed)
            .map_err(|e| ServiceError::Unprocessable(e.to_string()))?;
        let time_limit = issued.challenge.time_limit_s();
        let malformed = validate_telemetry(&req.telemetry, time_limit).is_err();
        let verdict = if malformed {
            Verdict::malformed()
        } else {
            classify(
                &self.model,
                &req.telemetry,
                elapsed,
                &self.config.heuristics,
            )
        };
        let features = if malformed {
            None
        } else {
            extract_features(&req.telemetry).ok()
        };
        let r = reward(&result, verdict.label == VerdictLabel::Uncertain);

        let passed = result.correct && result.within_limit;
        let (to, reason) = match verdict.label {
            VerdictLabel::Bot => (SessionState::Blocked, Some(BlockReason::BotVerdict)),
            VerdictLabel::Human if passed => (SessionState::VerifiedHuman, None),
            _ if entry.record.history.len() + 1 >= self.config.max_challenges_per_session => {
                (SessionState::Blocked, Some(BlockReason::ChallengeLimit))
            }
            _ => (SessionState::Escalated, None),
        };

        self.emit(
            &mut entry,
            JournalEvent::ResponseSubmitted {
                session_id: sid,
                challenge_id: cid,
                result,
                telemetry: req.telemetry,
                features,
                malformed,
            },
        )?;
        self.emit(
            &mut entry,
            JournalEvent::Verdict {
                session_id: sid,
                challenge_id: cid,
                result,
                verdict,
                reward: r,
                action: issued.action,
                level: issued.level(),
                from: SessionState::Challenged,
                to,
                reason,
            },
        )?;
        entry.outstanding = None;
        entry.answered.insert(cid);

        if self.config.rl.enabled {
            let next = (!to.is_terminal()).then(|| encode_state(&entry.record.stats));
            let mut learner = self.learner.lock().expect("learner lock");
            let update = learner.agent.learn(issued.rl_state, issued.action, r, next);
            if to.is_terminal() {
                learner.agent.end_episode();
            }
            self.append(JournalEvent::QUpdate {
                session_id: sid,
                challenge_id: cid,
                update,
            })?;
        }

        let next_challenge = if to == SessionState::Escalated {
            let next = self.issue(&mut entry, issued.modality)?;
            Some(
                build_payload(&next, self.config.asset_mode, self.config.tile_size)
                    .map_err(internal)?,
            )
        } else {
            None
        };
        Ok(SubmitOutcome {
            verdict,
            state: to,
            block_reason: reason,
            result,
            reward: r,
            malformed,
            next_challenge,
        })
    }

    /// Read-only; signs a pass token for verified sessions.
    pub fn get_verdict(&self, sid: SessionId) -> Result<VerdictView, ServiceError> {
        let entry = self.entry(sid)?;
        let entry = entry.lock().expect("session lock");
        let record = &entry.record;
        let token = record
            .verified_at
            .map(|at| sign_pass_token(&self.token_key, sid, at));
        Ok(VerdictView {
            state: record.state,
            token,
            verified_at: record.verified_at,
        })
    }

    pub fn verify_token(&self, sid: SessionId, verified_at: DateTime<Utc>, token: &str) -> bool {
        verify_pass_token(&self.token_key, sid, verified_at, token)
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".into(),
            qtable_version: self.learner.lock().expect("learner lock").agent.updates(),
        }
    }

    fn outstanding(
        &self,
        sid: SessionId,
        cid: ChallengeId,
    ) -> Result<IssuedChallenge, ServiceError> {
        let entry = self.entry(sid)?;
        let entry = entry.lock().expect("session lock");
        if entry.answered.contains(&cid) {
            return Err(ServiceError::Gone(cid));
        }
        match &entry.outstanding {
            Some(issued) if issued.challenge_id() == cid => Ok(issued.clone()),
            _ => Err(ServiceError::NotFound(format!(
                "challenge {cid} in session {sid}"
            ))),
        }
    }

    /// PGM bytes of one tile of an outstanding grid challenge.
    pub fn tile_pgm(
        &self,
        sid: SessionId,
        cid: ChallengeId,
        index: usize,
    ) -> Result<Vec<u8>, ServiceError> {
        let issued = self.outstanding(sid, cid)?;
        payload::tile_pgm(&issued, index, self.config.tile_size)
            .map_err(internal)?
            .ok_or_else(|| ServiceError::NotFound(format!("tile {index} of challenge {cid}")))
    }

    /// WAV bytes of the clip of an outstanding audio or paired challenge.
    pub fn audio_wav(&self, sid: SessionId, cid: ChallengeId) -> Result<Vec<u8>, ServiceError> {
        let issued = self.outstanding(sid, cid)?;
        payload::audio_wav(&issued)
            .ok_or_else(|| ServiceError::NotFound(format!("audio of challenge {cid}")))
    }

    /// The outstanding challenge with its answer. Never exposed over HTTP;
    /// the simulator and tests use it as an oracle.
    pub fn ground_truth(&self, sid: SessionId) -> Result<IssuedChallenge, ServiceError> {
        let entry = self.entry(sid)?;
        let entry = entry.lock().expect("session lock");
        entry.outstanding.clone().ok_or_else(|| {
            ServiceError::NotFound(format!("outstanding challenge in session {sid}"))
        })
    }

    /// Journals the true agent kind behind a simulated session.
    pub fn tag_session(&self, sid: SessionId, kind: &str) -> Result<(), ServiceError> {
        self.append(JournalEvent::GroundTruth {
            session_id: sid,
            kind: kind.to_owned(),
        })
        .map(drop)
    }

    pub fn mark(&self, name: &str) -> Result<(), ServiceError> {
        self.append(JournalEvent::Marker {
            name: name.to_owned(),
        })
        .map(drop)
    }

    pub fn session(&self, sid: SessionId) -> Option<SessionRecord> {
        let entry = self.entry(sid).ok()?;
        let record = entry.lock().expect("session lock").record.clone();
        Some(record)
    }

    pub fn sessions(&self) -> BTreeMap<SessionId, SessionRecord> {
        let entries: Vec<_> = self
            .sessions
            .lock()
            .expect("sessions lock")
            .values()
            .cloned()
            .collect();
        entries
            .iter()
            .map(|e| {
                let e = e.lock().expect("session lock");
                (e.record.session_id, e.record.clone())
            })
            .collect()
    }

    pub fn qtable(&self) -> QTable {
        self.learner
            .lock()
            .expect("learner lock")
            .agent
            .table()
            .clone()
    }

    pub fn epsilon(&self) -> f64 {
        self.learner.lock().expect("learner lock").agent.epsilon()
    }

    /// In-memory journal records (empty for file-only journals).
    pub fn journal_records(&self) -> Vec<JournalRecord> {
        self.journal
            .lock()
            .expect("journal lock")
            .records()
            .to_vec()
    }

    pub fn journal_len(&self) -> u64 {
        self.journal.lock().expect("journal lock").len()
    }

    /// Flushes the journal and writes the Q-table snapshot if configured.
    pub fn shutdown(&self) -> Result<(), ServiceError> {
        self.journal
            .lock()
            .expect("journal lock")
            .flush()
            .map_err(internal)?;
        if let Some(path) = &self.config.qtable {
            std::fs::write(path, save_qtable(&self.qtable()))
                .map_err(|e| ServiceError::Internal(format!("writing {}: {e}", path.display())))?;
        }
        Ok(())
    }
}

fn state_name(s: SessionState) -> String {
    serde_json::to_value(s)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn generate(
    sid: SessionId,
    modality: Modality,
    seed: u64,
    level: crate::challenge::DifficultyLevel,
    meta: ChallengeMeta,
    rl_state: crate::rl::RlState,
    action: RlAction,
) -> IssuedChallenge {
    let (challenge, paired_audio) = match modality {
        Modality::Grid => (
            Challenge::Grid(generate_grid_challenge(seed, level, meta)),
            None,
        ),
        Modality::Audio => (
            Challenge::Audio(generate_audio_challenge(seed, level, None, meta)),
            None,
        ),
        Modality::Paired => {
            let grid = generate_grid_challenge(seed, level, meta);
            let audio = generate_audio_challenge(seed, level, Some(&grid), meta);
            (Challenge::Grid(grid), Some(audio))
        }
    };
    IssuedChallenge {
        session_id: sid,
        modality,
        seed,
        challenge,
        paired_audio,
        rl_state,
        action,
    }
}
