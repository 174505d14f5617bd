use serde::{Deserialize, Serialize};

use super::{FeatureVector, InteractionEvent};

/// Thresholds for the behavioral flags and the SVM abstention band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicConfig {
    /// Pointer paths shorter than this count as no movement.
    pub min_movement_px: f64,
    /// Responses faster than this are not humanly possible.
    pub min_elapsed_s: f64,
    pub metronomic_min_intervals: usize,
    pub metronomic_max_std_s: f64,
    /// Scores inside `(-margin, margin)` are uncertain.
    pub margin: f64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            min_movement_px: 1.0,
            min_elapsed_s: 0.5,
            metronomic_min_intervals: 5,
            metronomic_max_std_s: 0.005,
            margin: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HeuristicFlags {
    pub no_movement: bool,
    pub inhuman_speed: bool,
    pub metronomic_timing: bool,
}

impl HeuristicFlags {
    pub fn any(&self) -> bool {
        self.no_movement || self.inhuman_speed || self.metronomic_timing
    }
}

/// `features` is `None` when extraction failed for lack of events; that case
/// counts as no movement.
pub fn heuristic_flags(
    events: &[InteractionEvent],
    features: Option<&FeatureVector>,
    elapsed_s: f64,
    cfg: &HeuristicConfig,
) -> HeuristicFlags {
    let intervals = events.len().saturating_sub(1);
    match features {
        Some(f) => HeuristicFlags {
            no_movement: f.total_movement < cfg.min_movement_px,
            inhuman_speed: elapsed_s < cfg.min_elapsed_s,
            metronomic_timing: intervals >= cfg.metronomic_min_intervals
                && f.std_time_interval < cfg.metronomic_max_std_s,
        },
        None => HeuristicFlags {
            no_movement: true,
            inhuman_speed: elapsed_s < cfg.min_elapsed_s,
            metronomic_timing: false,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{extract_features, EventKind};

    fn flags_of(events: &[InteractionEvent], elapsed: f64) -> HeuristicFlags {
        let f = extract_features(events).ok();
        heuristic_flags(events, f.as_ref(), elapsed, &HeuristicConfig::default())
    }

    #[test]
    fn still_and_fast() {
        let ev = [
            InteractionEvent::at(EventKind::Click, 0.0),
            InteractionEvent::at(EventKind::Submit, 0.2),
        ];
        let f = flags_of(&ev, 0.2);
        assert!(f.no_movement && f.inhuman_speed);
    }

    #[test]
    fn evenly_spaced_events_are_metronomic() {
        let ev: Vec<_> = (0..10)
            .map(|i| {
                InteractionEvent::pointer(
                    EventKind::PointerMove,
                    0.1 * i as f64,
                    10.0 * i as f64,
                    0.0,
                )
            })
            .collect();
        let f = flags_of(&ev, 1.0);
        assert!(f.metronomic_timing);
        assert!(!f.no_movement);
    }

    #[test]
    fn four_intervals_are_not_enough() {
        let ev: Vec<_> = (0..5)
            .map(|i| {
                InteractionEvent::pointer(
                    EventKind::PointerMove,
                    0.5 * i as f64,
                    10.0 * i as f64,
                    0.0,
                )
            })
            .collect();
        assert!(!flags_of(&ev, 2.5).metronomic_timing);
    }

    #[test]
    fn jittered_human_trace_is_clean() {
        let times = [0.0, 0.35, 0.6, 1.2, 1.3, 2.0, 2.45, 3.1, 3.5, 4.4, 5.0, 6.0];
        let ev: Vec<_> = times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                InteractionEvent::pointer(
                    EventKind::PointerMove,
                    t,
                    50.0 * i as f64,
                    7.0 * i as f64,
                )
            })
            .collect();
        let f = flags_of(&ev, 6.0);
        assert!(!f.any(), "{f:?}");
    }

    #[test]
    fn missing_features_count_as_no_movement() {
        let ev = [InteractionEvent::at(EventKind::Submit, 3.0)];
        let f = flags_of(&ev, 3.0);
        assert!(f.no_movement && !f.inhuman_speed && !f.metronomic_timing);
    }
}
