use std::sync::Arc;

use proptest::prelude::*;

use adaptcha_core::analysis::{builtin_model, EventKind, InteractionEvent, VerdictLabel};
use adaptcha_core::challenge::{Challenge, Solution};
use adaptcha_core::nonce::{ChallengeId, SessionId};
use adaptcha_core::rl::Reward;
use adaptcha_core::service::{
    canonicalize, read_journal_file, replay, AssetMode, BlockReason, IssuedChallenge, Journal,
    JournalEvent, JournalRecord, ManualClock, Modality, SeedMode, Service, ServiceConfig,
    ServiceError, SessionState, SubmitRequest,
};
use adaptcha_core::sim::{human_play, random_bot_play, HumanModel, RandomBotModel};
use adaptcha_core::SplitMix64;

fn config(seed: u64) -> ServiceConfig {
    ServiceConfig {
        seed: SeedMode::Fixed(seed),
        ..ServiceConfig::default()
    }
}

fn service_with(config: ServiceConfig, journal: Journal) -> (Service, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::default());
    let service = Service::with_parts(
        config,
        clock.clone(),
        journal,
        builtin_model().clone(),
        None,
    )
    .unwrap();
    (service, clock)
}

fn service(seed: u64) -> (Service, Arc<ManualClock>) {
    service_with(config(seed), Journal::in_memory())
}

fn correct(issued: &IssuedChallenge) -> Solution {
    match &issued.challenge {
        Challenge::Grid(g) => Solution::Grid {
            indices: g.target_indices.iter().copied().collect(),
        },
        Challenge::Audio(a) => Solution::Audio {
            transcript: a.expected_transcript.clone(),
        },
    }
}

/// Submits a human play with the given skill.
fn play_human(
    service: &Service,
    clock: &ManualClock,
    sid: SessionId,
    skill: f64,
    rng: &mut SplitMix64,
) -> SubmitRequest {
    let issued = service.ground_truth(sid).unwrap();
    let play = human_play(rng, &HumanModel::default(), Some(skill), &issued);
    clock.advance(play.elapsed_s);
    SubmitRequest {
        challenge_id: issued.challenge_id(),
        solution: play.solution,
        telemetry: play.telemetry,
    }
}

fn count(records: &[JournalRecord], pred: impl Fn(&JournalEvent) -> bool) -> usize {
    records.iter().filter(|r| pred(&r.event)).count()
}

#[test]
fn create_session_journals_once() {
    let (s, _) = service(1);
    let a = s.create_session().unwrap();
    let b = s.create_session().unwrap();
    assert_ne!(a.session_id, b.session_id);
    assert_eq!(a.state, SessionState::Created);
    let records = s.journal_records();
    assert_eq!(records.len(), 2);
    assert!(
        matches!(records[0].event, JournalEvent::SessionCreated { session_id, .. } if session_id == a.session_id)
    );
}

#[test]
fn issue_errors() {
    let (s, _) = service(1);
    let unknown = SessionId::from_u128(7);
    assert!(matches!(
        s.issue_challenge(unknown, Modality::Grid),
        Err(ServiceError::NotFound(_))
    ));
    let sid = s.create_session().unwrap().session_id;
    s.issue_challenge(sid, Modality::Grid).unwrap();
    assert!(matches!(
        s.issue_challenge(sid, Modality::Grid),
        Err(ServiceError::Conflict(_))
    ));
}

#[test]
fn payloads_never_carry_the_answer() {
    for modality in [Modality::Grid, Modality::Audio, Modality::Paired] {
        for mode in [AssetMode::Inline, AssetMode::Url] {
            let (s, _) = service_with(
                ServiceConfig {
                    asset_mode: mode,
                    ..config(2)
                },
                Journal::in_memory(),
            );
            let sid = s.create_session().unwrap().session_id;
            let payload = s.issue_challenge(sid, modality).unwrap();
            let json = serde_json::to_string(&payload).unwrap();
            for key in [
                "target_indices",
                "expected_transcript",
                "tokens",
                "target_category",
                "\"seed\"",
                "waveform_ref",
            ] {
                assert!(
                    !json.contains(key),
                    "{modality:?}/{mode:?} payload contains {key}"
                );
            }
            if let Some(audio) = s.ground_truth(sid).unwrap().audio() {
                assert!(!json.contains(&audio.expected_transcript));
            }
        }
    }
}

#[test]
fn paired_audio_names_the_grid_target() {
    let (s, _) = service(3);
    for _ in 0..20 {
        let sid = s.create_session().unwrap().session_id;
        let payload = s.issue_challenge(sid, Modality::Paired).unwrap();
        assert_eq!(payload.tiles.len(), 9);
        assert!(payload.audio.is_some());
        let truth = s.ground_truth(sid).unwrap();
        let target = truth.grid().unwrap().target_category.name();
        let audio = truth.audio().unwrap();
        let first_word = audio.tokens.iter().find(|t| !is_digit(t)).unwrap();
        assert_eq!(first_word, target);
    }
}

fn is_digit(t: &str) -> bool {
    adaptcha_core::challenge::DIGIT_WORDS.contains(&t)
}

#[test]
fn human_pass_applies_positive_reward_and_signs_token() {
    let (s, clock) = service(4);
    let sid = s.create_session().unwrap().session_id;
    s.issue_challenge(sid, Modality::Grid).unwrap();
    let mut rng = SplitMix64::new(4);
    let req = play_human(&s, &clock, sid, 1.0, &mut rng);
    let out = s.submit_response(sid, req.clone()).unwrap();
    assert_eq!(out.verdict.label, VerdictLabel::Human);
    assert_eq!(out.state, SessionState::VerifiedHuman);
    assert_eq!(out.reward, Reward::POSITIVE);
    let update = s
        .journal_records()
        .into_iter()
        .find_map(|r| match r.event {
            JournalEvent::QUpdate { update, .. } => Some(update),
            _ => None,
        })
        .unwrap();
    assert_eq!(update.reward, Reward::POSITIVE);
    assert_eq!(update.next_state, None);

    let before = s.journal_len();
    let v = s.get_verdict(sid).unwrap();
    assert_eq!(s.get_verdict(sid).unwrap(), v);
    assert_eq!(s.journal_len(), before);
    let token = v.token.unwrap();
    let at = v.verified_at.unwrap();
    assert!(s.verify_token(sid, at, &token));
    let mut tampered = token.into_bytes();
    tampered[0] = if tampered[0] == b'0' { b'1' } else { b'0' };
    assert!(!s.verify_token(sid, at, std::str::from_utf8(&tampered).unwrap()));

    assert!(matches!(
        s.submit_response(sid, req),
        Err(ServiceError::Gone(_))
    ));
}

#[test]
fn instant_no_movement_answer_is_blocked() {
    let (s, clock) = service(5);
    let sid = s.create_session().unwrap().session_id;
    s.issue_challenge(sid, Modality::Grid).unwrap();
    let issued = s.ground_truth(sid).unwrap();
    clock.advance(0.05);
    let out = s
        .submit_response(
            sid,
            SubmitRequest {
                challenge_id: issued.challenge_id(),
                solution: correct(&issued),
                telemetry: vec![
                    InteractionEvent::at(EventKind::Click, 0.0),
                    InteractionEvent::at(EventKind::Submit, 0.05),
                ],
            },
        )
        .unwrap();
    assert_eq!(out.verdict.label, VerdictLabel::Bot);
    assert_eq!(out.state, SessionState::Blocked);
    assert_eq!(out.block_reason, Some(BlockReason::BotVerdict));
    assert_eq!(s.get_verdict(sid).unwrap().token, None);
}

#[test]
fn malformed_telemetry_is_a_bot_signal() {
    let (s, clock) = service(6);
    let sid = s.create_session().unwrap().session_id;
    s.issue_challenge(sid, Modality::Grid).unwrap();
    let issued = s.ground_truth(sid).unwrap();
    clock.advance(5.0);
    let unsorted = vec![
        InteractionEvent::pointer(EventKind::PointerMove, 3.0, 10.0, 10.0),
        InteractionEvent::pointer(EventKind::PointerMove, 1.0, 50.0, 80.0),
        InteractionEvent::at(EventKind::Submit, 4.0),
    ];
    let out = s
        .submit_response(
            sid,
            SubmitRequest {
                challenge_id: issued.challenge_id(),
                solution: correct(&issued),
                telemetry: unsorted,
            },
        )
        .unwrap();
    assert!(out.malformed);
    assert_eq!(out.state, SessionState::Blocked);
}

#[test]
fn failing_human_escalates_until_the_limit() {
    let (s, clock) = service(7);
    let sid = s.create_session().unwrap().session_id;
    s.issue_challenge(sid, Modality::Grid).unwrap();
    let mut rng = SplitMix64::new(7);
    let mut states = Vec::new();
    loop {
        let req = play_human(&s, &clock, sid, 0.0, &mut rng);
        let out = s.submit_response(sid, req).unwrap();
        states.push(out.state);
        assert_eq!(
            out.next_challenge.is_some(),
            out.state == SessionState::Escalated
        );
        if out.state.is_terminal() {
            assert_eq!(out.block_reason, Some(BlockReason::ChallengeLimit));
            break;
        }
    }
    assert_eq!(states.len(), 5);
    assert!(states[..4].iter().all(|&st| st == SessionState::Escalated));
    let record = s.session(sid).unwrap();
    assert_eq!(record.history.len(), 5);
    assert!(record
        .history
        .iter()
        .all(|h| h.reward == Reward::NEGATIVE || h.reward == Reward::NEUTRAL));
}

#[test]
fn submit_errors() {
    let (s, _) = service(8);
    let sid = s.create_session().unwrap().session_id;
    let req = SubmitRequest {
        challenge_id: ChallengeId::from_u128(1),
        solution: Solution::Grid {
            indices: vec![0, 1, 2],
        },
        telemetry: vec![],
    };
    assert!(matches!(
        s.submit_response(sid, req.clone()),
        Err(ServiceError::NotFound(_))
    ));
    s.issue_challenge(sid, Modality::Grid).unwrap();
    let issued = s.ground_truth(sid).unwrap();
    let wrong_kind = SubmitRequest {
        challenge_id: issued.challenge_id(),
        solution: Solution::Audio {
            transcript: "one".into(),
        },
        telemetry: vec![],
    };
    assert!(matches!(
        s.submit_response(sid, wrong_kind),
        Err(ServiceError::Unprocessable(_))
    ));
    // A rejected submission leaves the challenge outstanding.
    assert_eq!(s.session(sid).unwrap().state, SessionState::Challenged);
}

/// A scripted mix of humans and random bots against one service.
fn drive(s: &Service, clock: &ManualClock, sessions: usize, seed: u64) {
    let mut rng = SplitMix64::new(seed);
    for n in 0..sessions {
        let sid = s.create_session().unwrap().session_id;
        let modality = [Modality::Grid, Modality::Audio, Modality::Paired][n % 3];
        s.issue_challenge(sid, modality).unwrap();
        let bot = n % 4 == 3;
        loop {
            let issued = s.ground_truth(sid).unwrap();
            let play = if bot {
                random_bot_play(&mut rng, &RandomBotModel::default(), &issued)
            } else {
                human_play(&mut rng, &HumanModel::default(), Some(0.7), &issued)
            };
            clock.advance(play.elapsed_s);
            let out = s
                .submit_response(
                    sid,
                    SubmitRequest {
                        challenge_id: issued.challenge_id(),
                        solution: play.solution,
                        telemetry: play.telemetry,
                    },
                )
                .unwrap();
            if out.next_challenge.is_none() {
                break;
            }
        }
        clock.advance(1.0);
    }
}

#[test]
fn replay_reconstructs_live_state() {
    let (s, clock) = service(9);
    drive(&s, &clock, 100, 9);
    let state = replay(&s.journal_records()).unwrap();
    assert_eq!(state.sessions, s.sessions());
    assert_eq!(state.qtable, s.qtable());
    let records = s.journal_records();
    let submitted = count(&records, |e| {
        matches!(e, JournalEvent::ResponseSubmitted { .. })
    });
    assert_eq!(
        submitted,
        count(&records, |e| matches!(e, JournalEvent::QUpdate { .. }))
    );
    assert!(submitted >= 100);
}

#[test]
fn empty_journal_replays_to_nothing() {
    let state = replay(&[]).unwrap();
    assert!(state.sessions.is_empty());
}

#[test]
fn journal_file_survives_torn_write_and_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("journal.jsonl");
    let cfg = ServiceConfig {
        journal: Some(path.clone()),
        ..config(10)
    };
    let (s, clock) = service_with(cfg.clone(), Journal::open(&path, true, 0).unwrap());
    drive(&s, &clock, 20, 10);
    let live = s.sessions();
    s.shutdown().unwrap();
    drop(s);

    let loaded = read_journal_file(&path).unwrap();
    assert_eq!(loaded.torn_lines, 0);
    assert_eq!(replay(&loaded.records).unwrap().sessions, live);

    // Restart from the file: sessions and the Q-table come back.
    let restarted = Service::from_config(cfg).unwrap();
    assert_eq!(restarted.sessions(), live);
    let fresh = restarted.create_session().unwrap().session_id;
    assert!(!live.contains_key(&fresh));
    restarted.shutdown().unwrap();
    drop(restarted);

    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"seq\":");
    std::fs::write(&path, text).unwrap();
    let torn = read_journal_file(&path).unwrap();
    assert_eq!(torn.torn_lines, 1);
    assert_eq!(torn.records.len(), loaded.records.len() + 1);
    replay(&torn.records).unwrap();
}

#[test]
fn scripted_runs_are_deterministic() {
    let run = || {
        let (s, clock) = service(11);
        drive(&s, &clock, 40, 11);
        canonicalize(&s.journal_records())
    };
    assert_eq!(run(), run());
}

#[derive(Debug, Clone)]
enum Op {
    Create,
    Issue(usize, u8),
    SubmitCorrect(usize, u8),
    SubmitWrong(usize, u8),
    SubmitStale(usize),
    Verdict(usize),
    Wait(u8),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        Just(Op::Create),
        (0..8usize, 0..3u8).prop_map(|(i, m)| Op::Issue(i, m)),
        (0..8usize, 0..40u8).prop_map(|(i, t)| Op::SubmitCorrect(i, t)),
        (0..8usize, 0..40u8).prop_map(|(i, t)| Op::SubmitWrong(i, t)),
        (0..8usize).prop_map(Op::SubmitStale),
        (0..8usize).prop_map(Op::Verdict),
        (0..40u8).prop_map(Op::Wait),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_call_sequences_stay_legal(ops in prop::collection::vec(op(), 1..80)) {
        let (s, clock) = service(12);
        let mut sessions: Vec<SessionId> = Vec::new();
        let mut stale: Vec<(SessionId, ChallengeId)> = Vec::new();
        let mut accepted = 0usize;
        let mut rng = SplitMix64::new(12);
        for op in ops {
            let pick = |i: usize| sessions.get(i % sessions.len().max(1)).copied();
            match op {
                Op::Create => sessions.push(s.create_session().unwrap().session_id),
                Op::Issue(i, m) => if let Some(sid) = pick(i) {
                    let modality = [Modality::Grid, Modality::Audio, Modality::Paired][m as usize];
                    match s.issue_challenge(sid, modality) {
                        Ok(_) | Err(ServiceError::Conflict(_)) => {}
                        Err(e) => panic!("{e}"),
                    }
                },
                Op::SubmitCorrect(i, t) | Op::SubmitWrong(i, t) => if let Some(sid) = pick(i) {
                    let Ok(issued) = s.ground_truth(sid) else { continue };
                    let solution = if matches!(op, Op::SubmitCorrect(..)) {
                        correct(&issued)
                    } else {
                        human_play(&mut rng, &HumanModel::default(), Some(0.0), &issued).solution
                    };
                    let play = human_play(&mut rng, &HumanModel::default(), Some(1.0), &issued);
                    clock.advance(t as f64);
                    let req = SubmitRequest { challenge_id: issued.challenge_id(), solution, telemetry: play.telemetry };
                    s.submit_response(sid, req).unwrap();
                    accepted += 1;
                    stale.push((sid, issued.challenge_id()));
                },
                Op::SubmitStale(i) => if let Some(&(sid, cid)) = stale.get(i % stale.len().max(1)) {
                    let req = SubmitRequest { challenge_id: cid, solution: Solution::Grid { indices: vec![0, 1, 2] }, telemetry: vec![] };
                    prop_assert!(matches!(s.submit_response(sid, req), Err(ServiceError::Gone(_))));
                },
                Op::Verdict(i) => if let Some(sid) = pick(i) {
                    let before = s.journal_len();
                    s.get_verdict(sid).unwrap();
                    prop_assert_eq!(s.journal_len(), before);
                },
                Op::Wait(t) => clock.advance(t as f64),
            }
        }
        let records = s.journal_records();
        for r in &records {
            if let JournalEvent::Verdict { from, to, .. } = r.event {
                prop_assert!(from.can_transition_to(to));
            }
        }
        prop_assert_eq!(count(&records, |e| matches!(e, JournalEvent::QUpdate { .. })), accepted);
        prop_assert_eq!(replay(&records).unwrap().sessions, s.sessions());
    }
}
