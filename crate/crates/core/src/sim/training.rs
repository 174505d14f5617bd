//! Labeled training data from simulation journals, and the pipeline that
//! produces the bundled classifier.

use std::collections::{HashMap, HashSet};

use crate::analysis::{
    train_svm, FeatureVector, Label, LabeledSession, SvmHyper, SvmModel, TrainedSvm, FEATURE_COUNT,
};
use crate::nonce::SessionId;
use crate::rng::SplitMix64;
use crate::service::{JournalEvent, JournalRecord, ServiceConfig};

use super::{run_simulation, AgentKind, Population, SimError, SimOptions};

pub const BOOTSTRAP_SEED: u64 = 0;
pub const BOOTSTRAP_SESSIONS: u64 = 2_000;
const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub train: Vec<LabeledSession>,
    pub holdout: Vec<LabeledSession>,
}

impl TrainingSet {
    pub fn train_samples(&self) -> Vec<(FeatureVector, Label)> {
        samples(&self.train)
    }

    pub fn holdout_samples(&self) -> Vec<(FeatureVector, Label)> {
        samples(&self.holdout)
    }
}

fn samples(rows: &[LabeledSession]) -> Vec<(FeatureVector, Label)> {
    rows.iter()
        .filter_map(|r| Some((r.features()?, r.label)))
        .collect()
}

/// One row per tagged session: the telemetry of its first response,
/// labeled from ground truth. Sessions are split 80/20 after a shuffle
/// seeded by `seed`.
pub fn build_training_set(records: &[JournalRecord], seed: u64) -> TrainingSet {
    let mut truth: HashMap<SessionId, Label> = HashMap::new();
    let mut seen: HashSet<SessionId> = HashSet::new();
    let mut rows: Vec<(SessionId, LabeledSession)> = Vec::new();
    let mut first: Vec<(SessionId, LabeledSession)> = Vec::new();
    for r in records {
        match &r.event {
            JournalEvent::GroundTruth { session_id, kind } => {
                let label = if kind == AgentKind::Human.name() {
                    Label::Human
                } else {
                    Label::Bot
                };
                truth.insert(*session_id, label);
            }
            JournalEvent::ResponseSubmitted {
                session_id,
                result,
                telemetry,
                malformed: false,
                ..
            } if seen.insert(*session_id) => first.push((
                *session_id,
                LabeledSession {
                    features: None,
                    events: telemetry.clone(),
                    elapsed_s: Some(result.elapsed_s),
                    label: Label::Human,
                },
            )),
            _ => {}
        }
    }
    for (sid, mut row) in first {
        if let Some(&label) = truth.get(&sid) {
            row.label = label;
            rows.push((sid, row));
        }
    }
    let mut rng = SplitMix64::new(seed);
    rng.shuffle(&mut rows);
    let n_train = (rows.len() as f64 * TRAIN_FRACTION).round() as usize;
    let holdout = rows
        .split_off(n_train)
        .into_iter()
        .map(|(_, r)| r)
        .collect();
    TrainingSet {
        train: rows.into_iter().map(|(_, r)| r).collect(),
        holdout,
    }
}

/// First-response training set from a run of the reference population
/// scored by an uninformative model (every unflagged response is
/// `uncertain`), so the labels cannot echo an earlier classifier.
pub fn bootstrap_training_set(seed: u64) -> Result<TrainingSet, SimError> {
    let neutral = SvmModel::new(
        [0.0; FEATURE_COUNT],
        0.0,
        [0.0; FEATURE_COUNT],
        [1.0; FEATURE_COUNT],
    )
    .expect("neutral model is valid");
    let out = run_simulation(
        &Population::reference(),
        &ServiceConfig::default(),
        &neutral,
        &SimOptions::new(BOOTSTRAP_SESSIONS, seed),
    )?;
    Ok(build_training_set(&out.journal, seed))
}

/// Trains on the 80% split with the default hyperparameters.
pub fn train_classifier(set: &TrainingSet, seed: u64) -> Result<TrainedSvm, SimError> {
    let hyper = SvmHyper {
        seed,
        ..SvmHyper::default()
    };
    Ok(train_svm(&set.train_samples(), &hyper)?)
}

/// Regenerates the bundled classifier.
pub fn bootstrap_model() -> Result<TrainedSvm, SimError> {
    train_classifier(&bootstrap_training_set(BOOTSTRAP_SEED)?, BOOTSTRAP_SEED)
}
