use serde::{Deserialize, Serialize};

use super::{QTable, QUpdate, Reward, RlAction, RlState};
use crate::rng::SplitMix64;

/// Learning-rate, discount and exploration schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningParams {
    pub alpha: f64,
    pub gamma: f64,
    /// Exploration probability at the start of learning.
    pub epsilon: f64,
    /// Multiplicative decay applied once per finished episode.
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
}

impl Default for LearningParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.9,
            epsilon: 1.0,
            epsilon_decay: 0.995,
            epsilon_min: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{field} = {value} is outside {range}")]
pub struct ParamsError {
    pub field: &'static str,
    pub value: f64,
    pub range: &'static str,
}

impl LearningParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        let check = |field, value: f64, ok: bool, range| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(ParamsError {
                    field,
                    value,
                    range,
                })
            }
        };
        check(
            "alpha",
            self.alpha,
            self.alpha > 0.0 && self.alpha <= 1.0,
            "(0, 1]",
        )?;
        check(
            "gamma",
            self.gamma,
            (0.0..1.0).contains(&self.gamma),
            "[0, 1)",
        )?;
        check(
            "epsilon",
            self.epsilon,
            (0.0..=1.0).contains(&self.epsilon),
            "[0, 1]",
        )?;
        check(
            "epsilon_decay",
            self.epsilon_decay,
            self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0,
            "(0, 1]",
        )?;
        check(
            "epsilon_min",
            self.epsilon_min,
            (0.0..=1.0).contains(&self.epsilon_min),
            "[0, 1]",
        )
    }
}

/// Epsilon-greedy choice. Exploration draws uniformly over all three actions;
/// exploitation breaks ties uniformly among the maximal actions.
pub fn select_action(q: &QTable, s: RlState, epsilon: f64, rng: &mut SplitMix64) -> RlAction {
    if rng.chance(epsilon) {
        return RlAction::ALL[rng.index(RlAction::COUNT)];
    }
    let best = q.greedy_actions(s);
    if best.len() == 1 {
        best[0]
    } else {
        *rng.choose(&best)
    }
}

/// Q-table plus the live exploration rate. Single writer: callers serialize
/// access (the service keeps it behind one lock).
#[derive(Debug, Clone)]
pub struct AdaptiveAgent {
    table: QTable,
    params: LearningParams,
    epsilon: f64,
    updates: u64,
}

impl AdaptiveAgent {
    pub fn new(params: LearningParams) -> Self {
        Self::with_table(QTable::new(), params)
    }

    pub fn with_table(table: QTable, params: LearningParams) -> Self {
        Self {
            table,
            epsilon: params.epsilon,
            params,
            updates: 0,
        }
    }

    pub fn table(&self) -> &QTable {
        &self.table
    }

    pub fn params(&self) -> &LearningParams {
        &self.params
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Updates applied since construction.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn select(&self, s: RlState, rng: &mut SplitMix64) -> RlAction {
        select_action(&self.table, s, self.epsilon, rng)
    }

    pub fn learn(&mut self, s: RlState, a: RlAction, r: Reward, next: Option<RlState>) -> QUpdate {
        self.updates += 1;
        self.table.q_update(s, a, r, next, &self.params)
    }

    pub fn end_episode(&mut self) {
        self.epsilon = (self.epsilon * self.params.epsilon_decay).max(self.params.epsilon_min);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(i: usize) -> RlState {
        RlState::from_index(i).unwrap()
    }

    #[test]
    fn greedy_picks_unique_max() {
        let mut q = QTable::new();
        q.set(st(0), RlAction::Lower, 0.1);
        q.set(st(0), RlAction::Hold, 0.9);
        q.set(st(0), RlAction::Raise, 0.3);
        let mut rng = SplitMix64::new(1);
        for _ in 0..100 {
            assert_eq!(select_action(&q, st(0), 0.0, &mut rng), RlAction::Hold);
        }
    }

    #[test]
    fn uniform_exploration() {
        let q = QTable::new();
        let mut rng = SplitMix64::new(77);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[select_action(&q, st(5), 1.0, &mut rng).index()] += 1;
        }
        for c in counts {
            assert!(
                (c as f64 / 30_000.0 - 1.0 / 3.0).abs() <= 0.01,
                "{counts:?}"
            );
        }
    }

    #[test]
    fn seeded_tie_break_is_reproducible() {
        let q = QTable::new();
        let first = select_action(&q, st(9), 0.0, &mut SplitMix64::new(4));
        for _ in 0..20 {
            assert_eq!(
                select_action(&q, st(9), 0.0, &mut SplitMix64::new(4)),
                first
            );
        }
        // Ties are broken over the whole tied set, not always the first column.
        let mut rng = SplitMix64::new(4);
        let mut seen = [false; 3];
        for _ in 0..200 {
            seen[select_action(&q, st(9), 0.0, &mut rng).index()] = true;
        }
        assert_eq!(seen, [true; 3]);
    }

    #[test]
    fn row_shift_keeps_greedy_choice() {
        let mut q = QTable::new();
        q.set(st(2), RlAction::Lower, 0.4);
        q.set(st(2), RlAction::Hold, -0.2);
        q.set(st(2), RlAction::Raise, 0.1);
        let base = select_action(&q, st(2), 0.0, &mut SplitMix64::new(0));
        for a in RlAction::ALL {
            q.set(st(2), a, q.get(st(2), a) + 17.5);
        }
        assert_eq!(select_action(&q, st(2), 0.0, &mut SplitMix64::new(0)), base);
    }

    #[test]
    fn epsilon_decays_to_floor() {
        let mut agent = AdaptiveAgent::new(LearningParams::default());
        assert_eq!(agent.epsilon(), 1.0);
        agent.end_episode();
        assert!((agent.epsilon() - 0.995).abs() < 1e-15);
        for _ in 0..2_000 {
            agent.end_episode();
        }
        assert_eq!(agent.epsilon(), 0.05);
    }

    #[test]
    fn params_validation_names_field() {
        let bad = LearningParams {
            gamma: 1.0,
            ..LearningParams::default()
        };
        assert_eq!(bad.validate().unwrap_err().field, "gamma");
        let bad = LearningParams {
            alpha: 0.0,
            ..LearningParams::default()
        };
        assert_eq!(bad.validate().unwrap_err().field, "alpha");
        assert!(LearningParams::default().validate().is_ok());
    }
}
