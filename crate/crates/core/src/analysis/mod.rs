//! Interaction telemetry analysis: feature extraction, behavioral heuristics,
//! a linear SVM and the combined human/bot/uncertain verdict.

mod classify;
mod dataset;
mod features;
mod heuristics;
mod metrics;
mod svm;

use serde::{Deserialize, Serialize};

pub use classify::{classify, Verdict, VerdictLabel};
pub use dataset::{read_dataset, write_dataset, DatasetError, Label, LabeledSession};
pub use features::{extract_features, FeatureVector, FEATURE_COUNT, FEATURE_NAMES};
pub use heuristics::{heuristic_flags, HeuristicConfig, HeuristicFlags};
pub use metrics::{evaluate_classifier, ClassifierMetrics, ConfusionCounts, UncertainPolicy};
pub use svm::{
    builtin_model, train_svm, ModelError, SvmHyper, SvmModel, TrainedSvm, TrainerMeta,
    MODEL_FORMAT_VERSION,
};

/// Extra time past the challenge limit during which telemetry is still accepted.
pub const TELEMETRY_GRACE_S: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PointerMove,
    Click,
    Key,
    Submit,
}

/// One telemetry sample. `t` is seconds since the challenge was issued.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionEvent {
    pub kind: EventKind,
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
}

impl InteractionEvent {
    pub fn at(kind: EventKind, t: f64) -> Self {
        Self {
            kind,
            t,
            x: None,
            y: None,
        }
    }

    pub fn pointer(kind: EventKind, t: f64, x: f64, y: f64) -> Self {
        Self {
            kind,
            t,
            x: Some(x),
            y: Some(y),
        }
    }

    /// Coordinates, when both are present.
    pub fn position(&self) -> Option<(f64, f64)> {
        self.x.zip(self.y)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("need at least 2 events, got {0}")]
    InsufficientData(usize),
    #[error("training set has no {0} samples")]
    SingleClass(&'static str),
    #[error("training set has {0} samples, need at least 10")]
    TooFewSamples(usize),
    #[error("invalid trainer setting: {0}")]
    InvalidHyper(String),
    #[error("evaluation set has no {0} sessions")]
    EmptyClass(&'static str),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TelemetryError {
    #[error("event {index} has non-finite or negative time {t}")]
    BadTime { index: usize, t: f64 },
    #[error("event {index} at t={t} is earlier than the one before it")]
    Unsorted { index: usize, t: f64 },
    #[error("event {index} at t={t} is past the accepted window of {limit} s")]
    TooLate { index: usize, t: f64, limit: f64 },
    #[error("event {index} has a non-finite coordinate")]
    BadCoordinate { index: usize },
    #[error("pointer_move event {index} has no coordinates")]
    MissingCoordinates { index: usize },
}

/// Checks the structural telemetry contract: finite, non-negative, sorted
/// times within `time_limit_s` plus the grace period, and pointer moves that
/// carry both coordinates.
pub fn validate_telemetry(
    events: &[InteractionEvent],
    time_limit_s: f64,
) -> Result<(), TelemetryError> {
    let limit = time_limit_s + TELEMETRY_GRACE_S;
    let mut prev = 0.0;
    for (index, e) in events.iter().enumerate() {
        if !e.t.is_finite() || e.t < 0.0 {
            return Err(TelemetryError::BadTime { index, t: e.t });
        }
        if e.t < prev {
            return Err(TelemetryError::Unsorted { index, t: e.t });
        }
        if e.t > limit {
            return Err(TelemetryError::TooLate {
                index,
                t: e.t,
                limit,
            });
        }
        if e.x.is_some_and(|v| !v.is_finite()) || e.y.is_some_and(|v| !v.is_finite()) {
            return Err(TelemetryError::BadCoordinate { index });
        }
        if e.kind == EventKind::PointerMove && e.position().is_none() {
            return Err(TelemetryError::MissingCoordinates { index });
        }
        prev = e.t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn telemetry_validation() {
        let ok = [
            InteractionEvent::pointer(EventKind::PointerMove, 0.1, 1.0, 2.0),
            InteractionEvent::at(EventKind::Click, 0.5),
            InteractionEvent::at(EventKind::Submit, 34.0),
        ];
        assert!(validate_telemetry(&ok, 30.0).is_ok());
        assert!(validate_telemetry(&[], 30.0).is_ok());

        let unsorted = [
            InteractionEvent::at(EventKind::Key, 2.0),
            InteractionEvent::at(EventKind::Key, 1.0),
        ];
        assert!(matches!(
            validate_telemetry(&unsorted, 30.0),
            Err(TelemetryError::Unsorted { index: 1, .. })
        ));

        let late = [InteractionEvent::at(EventKind::Submit, 35.5)];
        assert!(matches!(
            validate_telemetry(&late, 30.0),
            Err(TelemetryError::TooLate { .. })
        ));

        let negative = [InteractionEvent::at(EventKind::Key, -0.1)];
        assert!(matches!(
            validate_telemetry(&negative, 30.0),
            Err(TelemetryError::BadTime { .. })
        ));

        let bare_move = [InteractionEvent::at(EventKind::PointerMove, 0.0)];
        assert!(matches!(
            validate_telemetry(&bare_move, 30.0),
            Err(TelemetryError::MissingCoordinates { .. })
        ));
    }

    #[test]
    fn event_wire_format() {
        let e: InteractionEvent =
            serde_json::from_str(r#"{"kind":"pointer_move","t":0.5,"x":3,"y":4}"#).unwrap();
        assert_eq!(
            e,
            InteractionEvent::pointer(EventKind::PointerMove, 0.5, 3.0, 4.0)
        );
        let key = serde_json::to_string(&InteractionEvent::at(EventKind::Key, 1.0)).unwrap();
        assert_eq!(key, r#"{"kind":"key","t":1.0}"#);
        assert!(serde_json::from_str::<InteractionEvent>(r#"{"kind":"scroll","t":0}"#).is_err());
    }
}
