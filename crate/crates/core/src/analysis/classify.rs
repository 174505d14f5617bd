use serde::{Deserialize, Serialize};

use super::{
    extract_features, heuristic_flags, HeuristicConfig, HeuristicFlags, InteractionEvent, SvmModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictLabel {
    Human,
    Bot,
    Uncertain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: VerdictLabel,
    /// SVM decision value; absent when the telemetry was too short to score.
    pub score: Option<f64>,
    pub flags: HeuristicFlags,
}

impl Verdict {
    /// Verdict for telemetry that failed structural validation.
    pub fn malformed() -> Self {
        Self {
            label: VerdictLabel::Bot,
            score: None,
            flags: HeuristicFlags::default(),
        }
    }
}

/// Any heuristic flag forces `bot`. Otherwise the SVM score decides, with
/// scores inside the margin band reported as `uncertain`.
pub fn classify(
    model: &SvmModel,
    events: &[InteractionEvent],
    elapsed_s: f64,
    cfg: &HeuristicConfig,
) -> Verdict {
    let features = extract_features(events).ok();
    let flags = heuristic_flags(events, features.as_ref(), elapsed_s, cfg);
    let score = features.as_ref().map(|f| model.decision(f));
    let label = match score {
        _ if flags.any() => VerdictLabel::Bot,
        None => VerdictLabel::Bot,
        Some(s) if s >= cfg.margin => VerdictLabel::Human,
        Some(s) if s <= -cfg.margin => VerdictLabel::Bot,
        Some(_) => VerdictLabel::Uncertain,
    };
    Verdict {
        label,
        score,
        flags,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::EventKind;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn biased(b: f64) -> SvmModel {
        SvmModel::new([0.0; 4], b, [0.0; 4], [1.0; 4]).unwrap()
    }

    fn human_trace() -> Vec<InteractionEvent> {
        let times = [0.0, 0.4, 0.9, 1.1, 1.9, 2.6, 3.0, 4.2];
        times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                InteractionEvent::pointer(EventKind::PointerMove, t, 40.0 * i as f64, 15.0)
            })
            .collect()
    }

    #[test]
    fn margin_band() {
        let cfg = HeuristicConfig::default();
        let ev = human_trace();
        assert_eq!(
            classify(&biased(1.3), &ev, 4.2, &cfg).label,
            VerdictLabel::Human
        );
        assert_eq!(
            classify(&biased(0.1), &ev, 4.2, &cfg).label,
            VerdictLabel::Uncertain
        );
        assert_eq!(
            classify(&biased(-0.25), &ev, 4.2, &cfg).label,
            VerdictLabel::Bot
        );
        assert_eq!(
            classify(&biased(0.25), &ev, 4.2, &cfg).label,
            VerdictLabel::Human
        );
    }

    #[test]
    fn short_telemetry_is_bot() {
        let v = classify(
            &biased(5.0),
            &[InteractionEvent::at(EventKind::Submit, 2.0)],
            2.0,
            &HeuristicConfig::default(),
        );
        assert_eq!(v.label, VerdictLabel::Bot);
        assert_eq!(v.score, None);
    }

    proptest! {
        #[test]
        fn any_flag_forces_bot(seed in any::<u64>(), bias in -5.0f64..5.0) {
            let mut rng = SplitMix64::new(seed);
            let n = 2 + rng.index(12);
            let mut t = 0.0;
            let still = rng.chance(0.5);
            let events: Vec<_> = (0..n).map(|_| {
                t += if rng.chance(0.5) { 0.1 } else { rng.uniform(0.0, 1.0) };
                if still {
                    InteractionEvent::at(EventKind::Click, t)
                } else {
                    InteractionEvent::pointer(EventKind::PointerMove, t, rng.uniform(0.0, 300.0), rng.uniform(0.0, 300.0))
                }
            }).collect();
            let elapsed = rng.uniform(0.0, 3.0);
            let v = classify(&biased(bias), &events, elapsed, &HeuristicConfig::default());
            if v.flags.any() {
                prop_assert_eq!(v.label, VerdictLabel::Bot);
            }
        }
    }
}
