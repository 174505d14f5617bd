use serde::{Deserialize, Serialize};

use super::{AnalysisError, EventKind, InteractionEvent};

pub const FEATURE_COUNT: usize = 4;
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "avg_time_interval",
    "std_time_interval",
    "total_movement",
    "num_clicks",
];

/// Per-response summary of a telemetry stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub avg_time_interval: f64,
    pub std_time_interval: f64,
    pub total_movement: f64,
    pub num_clicks: u32,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.avg_time_interval,
            self.std_time_interval,
            self.total_movement,
            self.num_clicks as f64,
        ]
    }
}

/// Intervals are taken between consecutive events of any kind; the standard
/// deviation is the population one. The pointer path runs through every
/// `pointer_move` and every click that carries coordinates, in event order.
pub fn extract_features(events: &[InteractionEvent]) -> Result<FeatureVector, AnalysisError> {
    if events.len() < 2 {
        return Err(AnalysisError::InsufficientData(events.len()));
    }
    let n = (events.len() - 1) as f64;
    let intervals = events.windows(2).map(|w| w[1].t - w[0].t);
    let mean = intervals.clone().sum::<f64>() / n;
    let var = intervals.map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;

    let mut total_movement = 0.0;
    let mut last: Option<(f64, f64)> = None;
    for e in events {
        let on_path = matches!(e.kind, EventKind::PointerMove | EventKind::Click);
        if let (true, Some(p)) = (on_path, e.position()) {
            if let Some(q) = last {
                total_movement += (p.0 - q.0).hypot(p.1 - q.1);
            }
            last = Some(p);
        }
    }

    Ok(FeatureVector {
        avg_time_interval: mean,
        std_time_interval: var.sqrt(),
        total_movement,
        num_clicks: events.iter().filter(|e| e.kind == EventKind::Click).count() as u32,
    })
}
