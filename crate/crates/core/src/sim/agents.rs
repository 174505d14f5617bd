//! Behavior models: what each agent kind answers and the telemetry it emits.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::analysis::{EventKind, InteractionEvent};
use crate::challenge::{
    normalize_transcript, Challenge, DifficultyLevel, Solution, Wordlist, DIGIT_WORDS, GRID_TILES,
};
use crate::rng::SplitMix64;
use crate::service::IssuedChallenge;

/// Layout of the client widget the synthetic pointer moves over, in pixels.
const TILE_PITCH: f64 = 70.0;
const GRID_ORIGIN: (f64, f64) = (20.0, 80.0);
const SUBMIT_BUTTON: (f64, f64) = (125.0, 320.0);
const PLAY_BUTTON: (f64, f64) = (40.0, 40.0);
const TEXT_BOX: (f64, f64) = (125.0, 280.0);
const CANVAS: (f64, f64) = (250.0, 350.0);

fn tile_centre(i: u8) -> (f64, f64) {
    (
        GRID_ORIGIN.0 + TILE_PITCH * (i % 3) as f64 + TILE_PITCH / 2.0,
        GRID_ORIGIN.1 + TILE_PITCH * (i / 3) as f64 + TILE_PITCH / 2.0,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HumanModel {
    /// Accuracy at level 1 for humans whose spec gives no skill.
    pub base_accuracy: f64,
    /// Accuracy lost per difficulty level above 1.
    pub accuracy_slope: f64,
    /// Response time is lognormal with `mu = ln(time_base_s + time_per_level_s * level)`.
    pub time_base_s: f64,
    pub time_per_level_s: f64,
    pub time_sigma: f64,
    pub min_waypoints: u32,
    pub max_waypoints: u32,
    pub max_extra_clicks: u32,
    pub jitter_px: f64,
}

impl Default for HumanModel {
    fn default() -> Self {
        Self {
            base_accuracy: 0.98,
            accuracy_slope: 0.03,
            time_base_s: 4.0,
            time_per_level_s: 0.6,
            time_sigma: 0.3,
            min_waypoints: 5,
            max_waypoints: 15,
            max_extra_clicks: 2,
            jitter_px: 6.0,
        }
    }
}

impl HumanModel {
    /// Probability of answering correctly: `skill - slope * (level - 1)`,
    /// clamped to `[0, 1]`.
    pub fn accuracy(&self, skill: Option<f64>, level: DifficultyLevel) -> f64 {
        let skill = skill.unwrap_or(self.base_accuracy);
        (skill - self.accuracy_slope * level.index() as f64).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomBotModel {
    pub min_elapsed_s: f64,
    pub max_elapsed_s: f64,
}

impl Default for RandomBotModel {
    fn default() -> Self {
        Self {
            min_elapsed_s: 0.1,
            max_elapsed_s: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisionBotModel {
    /// Per-tile (or per-token) accuracy at level 1.
    pub base_accuracy: f64,
    pub accuracy_slope: f64,
    pub min_elapsed_s: f64,
    pub max_elapsed_s: f64,
    /// Pointer samples on each straight segment between targets.
    pub moves_per_segment: u32,
}

impl Default for VisionBotModel {
    fn default() -> Self {
        Self {
            base_accuracy: 0.95,
            accuracy_slope: 0.12,
            min_elapsed_s: 0.5,
            max_elapsed_s: 1.0,
            moves_per_segment: 4,
        }
    }
}

impl VisionBotModel {
    pub fn accuracy(&self, level: DifficultyLevel) -> f64 {
        (self.base_accuracy - self.accuracy_slope * level.index() as f64).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayBotModel {
    /// Fixed interval at which the replay tool re-emits captured events.
    pub tick_s: f64,
    /// How many captured human answers the attacker keeps.
    pub pool_size: usize,
}

impl Default for ReplayBotModel {
    fn default() -> Self {
        Self {
            tick_s: 0.04,
            pool_size: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BotModels {
    pub random_bot: RandomBotModel,
    pub vision_bot: VisionBotModel,
    pub replay_bot: ReplayBotModel,
}

/// One answer with its telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct Play {
    pub solution: Solution,
    pub telemetry: Vec<InteractionEvent>,
    pub elapsed_s: f64,
}

/// Human answers seen on the wire, available to replay attackers.
#[derive(Debug, Clone, Default)]
pub struct CapturePool {
    items: VecDeque<Play>,
}

impl CapturePool {
    pub fn push(&mut self, play: Play, capacity: usize) {
        if capacity == 0 {
            return;
        }
        while self.items.len() >= capacity {
            self.items.pop_front();
        }
        self.items.push_back(play);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn pick(&self, rng: &mut SplitMix64) -> Option<&Play> {
        (!self.items.is_empty()).then(|| &self.items[rng.index(self.items.len())])
    }
}

fn random_subset(rng: &mut SplitMix64, size: usize) -> BTreeSet<u8> {
    let mut all: Vec<u8> = (0..GRID_TILES as u8).collect();
    rng.shuffle(&mut all);
    all.into_iter().take(size).collect()
}

/// Replaces 1 or 2 selected tiles by unselected ones.
fn perturb(rng: &mut SplitMix64, answer: &BTreeSet<u8>) -> BTreeSet<u8> {
    let mut inside: Vec<u8> = answer.iter().copied().collect();
    let mut outside: Vec<u8> = (0..GRID_TILES as u8)
        .filter(|i| !answer.contains(i))
        .collect();
    rng.shuffle(&mut inside);
    rng.shuffle(&mut outside);
    let swaps = (1 + rng.index(2)).min(inside.len()).min(outside.len());
    let mut out = answer.clone();
    for k in 0..swaps {
        out.remove(&inside[k]);
        out.insert(outside[k]);
    }
    out
}

fn grid_solution(selection: &BTreeSet<u8>) -> Solution {
    Solution::Grid {
        indices: selection.iter().copied().collect(),
    }
}

fn wrong_token(rng: &mut SplitMix64, current: &str) -> String {
    loop {
        let t = random_token(rng);
        if t != current {
            return t;
        }
    }
}

fn random_token(rng: &mut SplitMix64) -> String {
    let words = Wordlist::builtin().words();
    let i = rng.index(DIGIT_WORDS.len() + words.len());
    if i < DIGIT_WORDS.len() {
        DIGIT_WORDS[i].to_owned()
    } else {
        words[i - DIGIT_WORDS.len()].clone()
    }
}

fn jitter(rng: &mut SplitMix64, p: (f64, f64), px: f64) -> (f64, f64) {
    (p.0 + rng.uniform(-px, px), p.1 + rng.uniform(-px, px))
}

enum Step {
    Move((f64, f64)),
    Click((f64, f64)),
    Key,
}

/// Irregular human timing: event times are sorted uniform draws over the
/// answer window, followed by the submit at `elapsed`.
fn human_timeline(rng: &mut SplitMix64, steps: Vec<Step>, elapsed: f64) -> Vec<InteractionEvent> {
    let mut times: Vec<f64> = (0..steps.len())
        .map(|_| rng.uniform(0.02, 0.97) * elapsed)
        .collect();
    times.sort_by(f64::total_cmp);
    let mut events: Vec<InteractionEvent> = steps
        .into_iter()
        .zip(times)
        .map(|(step, t)| match step {
            Step::Move((x, y)) => InteractionEvent::pointer(EventKind::PointerMove, t, x, y),
            Step::Click((x, y)) => InteractionEvent::pointer(EventKind::Click, t, x, y),
            Step::Key => InteractionEvent::at(EventKind::Key, t),
        })
        .collect();
    events.push(InteractionEvent::at(EventKind::Submit, elapsed));
    events
}

/// Pointer path through `targets`: waypoints spread over the segments with
/// jitter, a click at every target flagged as such.
fn human_path(
    rng: &mut SplitMix64,
    model: &HumanModel,
    targets: &[((f64, f64), bool)],
    extra_clicks: u32,
) -> Vec<Step> {
    let waypoints = model.min_waypoints
        + rng.below((model.max_waypoints - model.min_waypoints + 1) as u64) as u32;
    let mut per_segment = vec![0u32; targets.len()];
    for _ in 0..waypoints {
        per_segment[rng.index(targets.len())] += 1;
    }
    let mut pos = (rng.uniform(0.0, CANVAS.0), rng.uniform(0.0, CANVAS.1));
    let mut steps = Vec::new();
    let mut extra_left = extra_clicks;
    for (&(target, click), &n) in targets.iter().zip(&per_segment) {
        for k in 1..=n {
            let f = k as f64 / (n + 1) as f64;
            let p = (
                pos.0 + (target.0 - pos.0) * f,
                pos.1 + (target.1 - pos.1) * f,
            );
            steps.push(Step::Move(jitter(rng, p, model.jitter_px)));
            if extra_left > 0 && rng.chance(0.3) {
                steps.push(Step::Click(jitter(rng, p, model.jitter_px)));
                extra_left -= 1;
            }
        }
        let landed = jitter(rng, target, model.jitter_px / 2.0);
        if click {
            steps.push(Step::Click(landed));
        } else {
            steps.push(Step::Move(landed));
        }
        pos = landed;
    }
    for _ in 0..extra_left {
        steps.push(Step::Click(jitter(rng, SUBMIT_BUTTON, 20.0)));
    }
    steps
}

pub fn human_play(
    rng: &mut SplitMix64,
    model: &HumanModel,
    skill: Option<f64>,
    issued: &IssuedChallenge,
) -> Play {
    let level = issued.level();
    let p = model.accuracy(skill, level);
    let correct = rng.chance(p);
    let mu = (model.time_base_s + model.time_per_level_s * level.get() as f64).ln();
    let elapsed = rng.lognormal(mu, model.time_sigma);
    let extra = rng.below(model.max_extra_clicks as u64 + 1) as u32;

    match &issued.challenge {
        Challenge::Grid(g) => {
            let selection = if correct {
                g.target_indices.clone()
            } else {
                perturb(rng, &g.target_indices)
            };
            let mut order: Vec<u8> = selection.iter().copied().collect();
            rng.shuffle(&mut order);
            let mut targets: Vec<((f64, f64), bool)> = Vec::new();
            if issued.paired_audio.is_some() {
                targets.push((PLAY_BUTTON, true));
            }
            targets.extend(order.iter().map(|&i| (tile_centre(i), true)));
            targets.push((SUBMIT_BUTTON, false));
            let steps = human_path(rng, model, &targets, extra);
            Play {
                solution: grid_solution(&selection),
                telemetry: human_timeline(rng, steps, elapsed),
                elapsed_s: elapsed,
            }
        }
        Challenge::Audio(a) => {
            let mut tokens = a.tokens.clone();
            if !correct {
                let i = rng.index(tokens.len());
                tokens[i] = wrong_token(rng, &tokens[i]);
            }
            let transcript = tokens.join(" ");
            let mut steps = human_path(rng, model, &[(PLAY_BUTTON, true), (TEXT_BOX, true)], extra);
            steps.extend(transcript.chars().map(|_| Step::Key));
            let steps_with_submit = {
                let mut s = steps;
                s.push(Step::Move(jitter(rng, SUBMIT_BUTTON, model.jitter_px)));
                s
            };
            Play {
                solution: Solution::Audio { transcript },
                telemetry: human_timeline(rng, steps_with_submit, elapsed),
                elapsed_s: elapsed,
            }
        }
    }
}

pub fn random_bot_play(
    rng: &mut SplitMix64,
    model: &RandomBotModel,
    issued: &IssuedChallenge,
) -> Play {
    let elapsed = rng.uniform(model.min_elapsed_s, model.max_elapsed_s);
    let (solution, clicks) = match &issued.challenge {
        Challenge::Grid(_) => {
            let size = 3 + rng.index(3);
            (grid_solution(&random_subset(rng, size)), size)
        }
        Challenge::Audio(_) => {
            let n = 4 + rng.index(5);
            let words: Vec<String> = (0..n).map(|_| random_token(rng)).collect();
            (
                Solution::Audio {
                    transcript: words.join(" "),
                },
                1,
            )
        }
    };
    let mut times: Vec<f64> = (0..clicks).map(|_| rng.uniform(0.0, elapsed)).collect();
    times.sort_by(f64::total_cmp);
    let mut telemetry: Vec<InteractionEvent> = times
        .into_iter()
        .map(|t| InteractionEvent::at(EventKind::Click, t))
        .collect();
    telemetry.push(InteractionEvent::at(EventKind::Submit, elapsed));
    Play {
        solution,
        telemetry,
        elapsed_s: elapsed,
    }
}

/// Evenly spaced events along straight lines, ending with the submit at
/// `elapsed`.
fn scripted_timeline(points: &[((f64, f64), EventKind)], elapsed: f64) -> Vec<InteractionEvent> {
    let n = points.len() + 1;
    let tick = elapsed / n as f64;
    let mut events: Vec<InteractionEvent> = points
        .iter()
        .enumerate()
        .map(|(i, &((x, y), kind))| InteractionEvent::pointer(kind, tick * (i + 1) as f64, x, y))
        .collect();
    events.push(InteractionEvent::at(EventKind::Submit, elapsed));
    events
}

fn straight_path(targets: &[(f64, f64)], moves_per_segment: u32) -> Vec<((f64, f64), EventKind)> {
    let mut pos = (0.0, 0.0);
    let mut out = Vec::new();
    for (k, &t) in targets.iter().enumerate() {
        for m in 1..=moves_per_segment {
            let f = m as f64 / (moves_per_segment + 1) as f64;
            out.push((
                (pos.0 + (t.0 - pos.0) * f, pos.1 + (t.1 - pos.1) * f),
                EventKind::PointerMove,
            ));
        }
        let last = k + 1 == targets.len();
        out.push((
            t,
            if last {
                EventKind::PointerMove
            } else {
                EventKind::Click
            },
        ));
        pos = t;
    }
    out
}

pub fn vision_bot_play(
    rng: &mut SplitMix64,
    model: &VisionBotModel,
    issued: &IssuedChallenge,
) -> Play {
    let a = model.accuracy(issued.level());
    let elapsed = rng.uniform(model.min_elapsed_s, model.max_elapsed_s);
    match &issued.challenge {
        Challenge::Grid(g) => {
            let selection: BTreeSet<u8> = (0..GRID_TILES as u8)
                .filter(|i| g.target_indices.contains(i) == rng.chance(a))
                .collect();
            let mut targets: Vec<(f64, f64)> = Vec::new();
            if issued.paired_audio.is_some() {
                targets.push(PLAY_BUTTON);
            }
            targets.extend(selection.iter().map(|&i| tile_centre(i)));
            targets.push(SUBMIT_BUTTON);
            Play {
                solution: grid_solution(&selection),
                telemetry: scripted_timeline(
                    &straight_path(&targets, model.moves_per_segment),
                    elapsed,
                ),
                elapsed_s: elapsed,
            }
        }
        Challenge::Audio(au) => {
            let tokens: Vec<String> = au
                .tokens
                .iter()
                .map(|t| {
                    if rng.chance(a) {
                        t.clone()
                    } else {
                        wrong_token(rng, t)
                    }
                })
                .collect();
            let mut points = straight_path(
                &[PLAY_BUTTON, TEXT_BOX, SUBMIT_BUTTON],
                model.moves_per_segment,
            );
            points.extend(std::iter::repeat_n(
                (TEXT_BOX, EventKind::Key),
                tokens.len(),
            ));
            Play {
                solution: Solution::Audio {
                    transcript: tokens.join(" "),
                },
                telemetry: scripted_timeline(&points, elapsed),
                elapsed_s: elapsed,
            }
        }
    }
}

/// Resubmits a captured human answer. The replay tool re-emits the captured
/// events on its own fixed timer, so timing is regular.
pub fn replay_bot_play(
    rng: &mut SplitMix64,
    model: &ReplayBotModel,
    pool: &CapturePool,
    issued: &IssuedChallenge,
    fallback: impl FnOnce(&mut SplitMix64) -> Play,
) -> Play {
    let same_kind = |p: &Play| {
        matches!(
            (&p.solution, &issued.challenge),
            (Solution::Grid { .. }, Challenge::Grid(_))
                | (Solution::Audio { .. }, Challenge::Audio(_))
        )
    };
    let captured = match pool.pick(rng) {
        Some(p) if same_kind(p) => p.clone(),
        _ => fallback(rng),
    };
    let mut telemetry: Vec<InteractionEvent> = captured
        .telemetry
        .iter()
        .enumerate()
        .map(|(i, e)| InteractionEvent {
            t: model.tick_s * (i + 1) as f64,
            ..*e
        })
        .collect();
    let elapsed = telemetry.last().map_or(model.tick_s, |e| e.t);
    if let Some(last) = telemetry.last_mut() {
        last.t = elapsed;
    }
    let solution = match captured.solution {
        Solution::Audio { transcript } => Solution::Audio {
            transcript: normalize_transcript(&transcript),
        },
        grid => grid,
    };
    Play {
        solution,
        telemetry,
        elapsed_s: elapsed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{extract_features, heuristic_flags, validate_telemetry, HeuristicConfig};
    use crate::challenge::{generate_grid_challenge, verify_solution, ChallengeMeta};
    use crate::nonce::SessionId;
    use crate::rl::{RlAction, RlState};
    use crate::service::Modality;

    fn issued(seed: u64, level: i64) -> IssuedChallenge {
        let level = DifficultyLevel::new(level).unwrap();
        IssuedChallenge {
            session_id: SessionId::from_u128(1),
            modality: Modality::Grid,
            seed,
            challenge: Challenge::Grid(generate_grid_challenge(
                seed,
                level,
                ChallengeMeta::offline(seed),
            )),
            paired_audio: None,
            rl_state: RlState::from_index(0).unwrap(),
            action: RlAction::Hold,
        }
    }

    #[test]
    fn perfect_human_submits_targets() {
        let model = HumanModel::default();
        for seed in 0..200 {
            let c = issued(seed, 1);
            let play = human_play(&mut SplitMix64::new(seed), &model, Some(1.0), &c);
            let r = verify_solution(&c.challenge, &play.solution, play.elapsed_s).unwrap();
            assert!(r.correct);
        }
    }

    #[test]
    fn accuracy_formulas() {
        let l = |v| DifficultyLevel::new(v).unwrap();
        assert_eq!(HumanModel::default().accuracy(Some(1.0), l(1)), 1.0);
        assert!((VisionBotModel::default().accuracy(l(5)) - 0.47).abs() < 1e-12);
        assert_eq!(HumanModel::default().accuracy(Some(0.01), l(5)), 0.0);
    }

    #[test]
    fn human_telemetry_is_valid_and_unflagged() {
        let model = HumanModel::default();
        let cfg = HeuristicConfig::default();
        for seed in 0..500 {
            let c = issued(seed, 1 + (seed % 5) as i64);
            let play = human_play(&mut SplitMix64::new(seed), &model, None, &c);
            validate_telemetry(&play.telemetry, 30.0).unwrap();
            let f = extract_features(&play.telemetry).unwrap();
            let flags = heuristic_flags(&play.telemetry, Some(&f), play.elapsed_s, &cfg);
            assert!(!flags.any(), "seed {seed}: {flags:?}");
        }
    }

    #[test]
    fn random_bot_never_moves() {
        for seed in 0..100 {
            let play = random_bot_play(
                &mut SplitMix64::new(seed),
                &RandomBotModel::default(),
                &issued(seed, 3),
            );
            assert!(play
                .telemetry
                .iter()
                .all(|e| e.kind != EventKind::PointerMove));
            assert!(play.elapsed_s >= 0.1 && play.elapsed_s <= 0.5);
        }
    }

    #[test]
    fn vision_bot_is_metronomic() {
        let cfg = HeuristicConfig::default();
        for seed in 0..100 {
            let play = vision_bot_play(
                &mut SplitMix64::new(seed),
                &VisionBotModel::default(),
                &issued(seed, 5),
            );
            validate_telemetry(&play.telemetry, 30.0).unwrap();
            let f = extract_features(&play.telemetry).unwrap();
            assert!(
                heuristic_flags(&play.telemetry, Some(&f), play.elapsed_s, &cfg).metronomic_timing
            );
        }
    }

    #[test]
    fn replay_bot_reuses_captured_answer() {
        let mut pool = CapturePool::default();
        let c = issued(1, 2);
        let human = human_play(&mut SplitMix64::new(1), &HumanModel::default(), None, &c);
        pool.push(human.clone(), 4);
        let replay = replay_bot_play(
            &mut SplitMix64::new(2),
            &ReplayBotModel::default(),
            &pool,
            &issued(2, 2),
            |_| unreachable!(),
        );
        assert_eq!(replay.solution, human.solution);
        assert_eq!(replay.telemetry.len(), human.telemetry.len());
        let f = extract_features(&replay.telemetry).unwrap();
        assert!(f.std_time_interval < 1e-9);
    }

    #[test]
    fn perturbation_swaps_one_or_two() {
        let mut rng = SplitMix64::new(3);
        let answer: BTreeSet<u8> = [0, 4, 8].into();
        for _ in 0..100 {
            let p = perturb(&mut rng, &answer);
            assert_eq!(p.len(), 3);
            let kept = p.intersection(&answer).count();
            assert!(kept == 1 || kept == 2);
        }
    }
}
