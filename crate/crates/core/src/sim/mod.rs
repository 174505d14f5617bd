//! Closed-loop simulation: synthetic humans and bots drive a [`Service`]
//! through complete sessions, with every event journaled and tagged with
//! the agent's true kind.

mod agents;
mod metrics;
mod training;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use agents::{
    human_play, random_bot_play, replay_bot_play, vision_bot_play, BotModels, CapturePool,
    HumanModel, Play, RandomBotModel, ReplayBotModel, VisionBotModel,
};
pub use metrics::{
    adaptability_score, adaptation_matches, compute_metrics, oracle_direction, AdaptabilityScore,
    MetricsAccumulator, MetricsReport, MEASURE_MARKER, UNKNOWN_KIND,
};
pub use training::{
    bootstrap_model, bootstrap_training_set, build_training_set, train_classifier, TrainingSet,
    BOOTSTRAP_SEED, BOOTSTRAP_SESSIONS,
};

use crate::analysis::{AnalysisError, SvmModel};
use crate::rl::QTable;
use crate::rng::SplitMix64;
use crate::service::{
    AssetMode, Journal, JournalError, JournalRecord, ManualClock, Modality, SeedMode, Service,
    ServiceConfig, ServiceError, SessionState, SubmitRequest,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Human,
    RandomBot,
    VisionBot,
    ReplayBot,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [
        AgentKind::Human,
        AgentKind::RandomBot,
        AgentKind::VisionBot,
        AgentKind::ReplayBot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Human => "human",
            AgentKind::RandomBot => "random_bot",
            AgentKind::VisionBot => "vision_bot",
            AgentKind::ReplayBot => "replay_bot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub kind: AgentKind,
    /// Relative share of sessions.
    pub count: u64,
    /// Level-1 accuracy of humans in this cohort.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill: Option<f64>,
    /// Mixed into the behavior RNG of this cohort.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Population {
    pub agents: Vec<AgentSpec>,
    #[serde(default = "default_modality")]
    pub modality: Modality,
    #[serde(default)]
    pub human_model: HumanModel,
    #[serde(default)]
    pub bot_models: BotModels,
}

fn default_modality() -> Modality {
    Modality::Grid
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("population: {0}")]
    Population(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing population: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("training: {0}")]
    Training(#[from] AnalysisError),
}

const REFERENCE_POPULATION: &str = include_str!("../../assets/population.json");

impl Population {
    /// The bundled reference population.
    pub fn reference() -> Self {
        Self::from_json(REFERENCE_POPULATION).expect("bundled population is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let p: Population = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.agents.iter().map(|a| a.count).sum::<u64>() == 0 {
            return Err(SimError::Population("agent counts sum to zero".into()));
        }
        for a in &self.agents {
            if let Some(s) = a.skill {
                if !(0.0..=1.0).contains(&s) {
                    return Err(SimError::Population(format!("skill {s} outside [0, 1]")));
                }
                if a.kind != AgentKind::Human {
                    return Err(SimError::Population(format!(
                        "skill set on {}",
                        a.kind.name()
                    )));
                }
            }
        }
        let h = &self.human_model;
        if h.min_waypoints > h.max_waypoints || h.min_waypoints == 0 {
            return Err(SimError::Population(
                "human_model waypoints range is empty".into(),
            ));
        }
        if !(h.time_sigma >= 0.0 && h.time_base_s > 0.0) {
            return Err(SimError::Population(
                "human_model timing must be positive".into(),
            ));
        }
        let b = &self.bot_models;
        if !(0.0 < b.random_bot.min_elapsed_s
            && b.random_bot.min_elapsed_s <= b.random_bot.max_elapsed_s)
        {
            return Err(SimError::Population(
                "random_bot elapsed range is invalid".into(),
            ));
        }
        if !(0.0 < b.vision_bot.min_elapsed_s
            && b.vision_bot.min_elapsed_s <= b.vision_bot.max_elapsed_s)
        {
            return Err(SimError::Population(
                "vision_bot elapsed range is invalid".into(),
            ));
        }
        if b.replay_bot.tick_s <= 0.0 {
            return Err(SimError::Population(
                "replay_bot tick must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Splits `sessions` over the specs in proportion to their counts
    /// (largest remainder, ties to the earlier spec) and shuffles the order.
    pub fn schedule(&self, sessions: u64, rng: &mut SplitMix64) -> Vec<usize> {
        let total: u64 = self.agents.iter().map(|a| a.count).sum();
        let exact: Vec<(u64, u64)> = self
            .agents
            .iter()
            .map(|a| {
                let num = a.count as u128 * sessions as u128;
                ((num / total as u128) as u64, (num % total as u128) as u64)
            })
            .collect();
        let mut shares: Vec<u64> = exact.iter().map(|e| e.0).collect();
        let mut left = sessions - shares.iter().sum::<u64>();
        let mut by_remainder: Vec<usize> = (0..exact.len()).collect();
        by_remainder.sort_by(|&a, &b| exact[b].1.cmp(&exact[a].1).then(a.cmp(&b)));
        for &i in &by_remainder {
            if left == 0 {
                break;
            }
            shares[i] += 1;
            left -= 1;
        }
        let mut order: Vec<usize> = shares
            .iter()
            .enumerate()
            .flat_map(|(i, &n)| std::iter::repeat_n(i, n as usize))
            .collect();
        rng.shuffle(&mut order);
        order
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub sessions: u64,
    /// Leading sessions excluded from the metrics while the agent learns.
    pub warmup: u64,
    pub seed: u64,
    /// Also write the journal to this file, replacing any previous content.
    pub journal_path: Option<PathBuf>,
}

impl SimOptions {
    pub fn new(sessions: u64, seed: u64) -> Self {
        Self {
            sessions,
            warmup: 0,
            seed,
            journal_path: None,
        }
    }

    pub fn with_warmup(mut self, warmup: u64) -> Self {
        self.warmup = warmup;
        self
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    /// Tallied while the run progressed.
    pub live_report: MetricsReport,
    pub journal: Vec<JournalRecord>,
    pub qtable: QTable,
}

impl SimOutput {
    /// Metrics recomputed from the journal.
    pub fn report(&self) -> MetricsReport {
        compute_metrics(&self.journal)
    }
}

/// Simulated clock start: 2025-01-01T00:00:00Z.
pub const SIM_EPOCH_S: i64 = 1_735_689_600;
const THINK_TIME_S: f64 = 1.0;
const BEHAVIOR_STREAM: u64 = 0x0061_6765_6e74;
const SCHEDULE_STREAM: u64 = 0x0073_6368_6564;

/// Runs `options.sessions` sessions (warm-up included) against a fresh
/// service built from `config`, which is overridden to use a fixed seed
/// derived from `options.seed` and URL assets. Deterministic in
/// `(population, config, model, options)`.
pub fn run_simulation(
    population: &Population,
    config: &ServiceConfig,
    model: &SvmModel,
    options: &SimOptions,
) -> Result<SimOutput, SimError> {
    population.validate()?;
    let mut config = config.clone();
    config.seed = SeedMode::Fixed(options.seed);
    config.asset_mode = AssetMode::Url;
    config.journal = None;
    config.qtable = None;
    let start = DateTime::<Utc>::from_timestamp(SIM_EPOCH_S, 0).expect("valid epoch");
    let clock = Arc::new(ManualClock::new(start));
    let journal = match &options.journal_path {
        Some(path) => std::fs::File::create(path)
            .and_then(|_| Journal::open(path, true, 0))
            .map_err(|source| SimError::Io {
                path: path.clone(),
                source,
            })?,
        None => Journal::in_memory(),
    };
    let service = Service::with_parts(config, clock.clone(), journal, model.clone(), None)?;

    let mut schedule_rng = SplitMix64::stream(options.seed, SCHEDULE_STREAM);
    let order = population.schedule(options.sessions, &mut schedule_rng);
    let mut acc = MetricsAccumulator::new();
    let mut pool = CapturePool::default();
    let modality = population.modality;

    for (n, &spec_index) in order.iter().enumerate() {
        let n = n as u64;
        if n == options.warmup && options.warmup > 0 {
            service.mark(MEASURE_MARKER)?;
        }
        let measured = n >= options.warmup;
        let spec = &population.agents[spec_index];
        let mut rng = SplitMix64::stream(options.seed ^ spec.seed, BEHAVIOR_STREAM.wrapping_add(n));

        let sid = service.create_session()?.session_id;
        service.tag_session(sid, spec.kind.name())?;
        acc.session(sid, spec.kind.name(), measured);
        let mut payload = service.issue_challenge(sid, modality)?;
        acc.issued(sid, payload.level);
        loop {
            let issued = service.ground_truth(sid)?;
            let play = match spec.kind {
                AgentKind::Human => {
                    human_play(&mut rng, &population.human_model, spec.skill, &issued)
                }
                AgentKind::RandomBot => {
                    random_bot_play(&mut rng, &population.bot_models.random_bot, &issued)
                }
                AgentKind::VisionBot => {
                    vision_bot_play(&mut rng, &population.bot_models.vision_bot, &issued)
                }
                AgentKind::ReplayBot => replay_bot_play(
                    &mut rng,
                    &population.bot_models.replay_bot,
                    &pool,
                    &issued,
                    |r| human_play(r, &population.human_model, None, &issued),
                ),
            };
            clock.advance(play.elapsed_s);
            let outcome = service.submit_response(
                sid,
                SubmitRequest {
                    challenge_id: payload.challenge_id,
                    solution: play.solution.clone(),
                    telemetry: play.telemetry.clone(),
                },
            )?;
            if spec.kind == AgentKind::Human {
                pool.push(play, population.bot_models.replay_bot.pool_size);
            }
            acc.responded(sid, &outcome.result, &outcome.verdict);
            acc.finished(sid, outcome.state, outcome.block_reason);
            match outcome.next_challenge {
                Some(next) => {
                    acc.issued(sid, next.level);
                    payload = next;
                }
                None => {
                    debug_assert!(outcome.state != SessionState::Escalated);
                    break;
                }
            }
        }
        clock.advance(THINK_TIME_S);
    }
    service.shutdown()?;
    Ok(SimOutput {
        live_report: acc.report(),
        journal: service.journal_records(),
        qtable: service.qtable(),
    })
}
