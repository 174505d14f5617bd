use serde::{Deserialize, Serialize};

use super::{LearningParams, Reward, RlAction, RlState};

/// Dense 90 x 3 action-value table with visit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub(crate) values: Vec<[f64; 3]>,
    pub(crate) visits: Vec<[u64; 3]>,
}

/// Record of one applied update, as journaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QUpdate {
    pub state: RlState,
    pub action: RlAction,
    pub reward: Reward,
    /// `None` when the transition ended the session.
    pub next_state: Option<RlState>,
    pub before: f64,
    pub after: f64,
}

impl Default for QTable {
    fn default() -> Self {
        Self::new()
    }
}

impl QTable {
    pub fn new() -> Self {
        Self {
            values: vec![[0.0; 3]; RlState::COUNT],
            visits: vec![[0; 3]; RlState::COUNT],
        }
    }

    pub fn get(&self, s: RlState, a: RlAction) -> f64 {
        self.values[s.index()][a.index()]
    }

    pub fn set(&mut self, s: RlState, a: RlAction, value: f64) {
        self.values[s.index()][a.index()] = value;
    }

    pub fn row(&self, s: RlState) -> [f64; 3] {
        self.values[s.index()]
    }

    pub fn visits(&self, s: RlState, a: RlAction) -> u64 {
        self.visits[s.index()][a.index()]
    }

    pub fn total_visits(&self) -> u64 {
        self.visits.iter().flatten().sum()
    }

    pub(crate) fn bump_visits(&mut self, s: RlState, a: RlAction) {
        self.visits[s.index()][a.index()] += 1;
    }

    pub fn max_value(&self, s: RlState) -> f64 {
        self.row(s).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Actions whose value equals the row maximum.
    pub fn greedy_actions(&self, s: RlState) -> Vec<RlAction> {
        let row = self.row(s);
        let best = self.max_value(s);
        RlAction::ALL
            .into_iter()
            .filter(|a| row[a.index()] == best)
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    /// One temporal-difference step on cell `(s, a)`. A terminal transition
    /// (`next = None`) has no successor value to bootstrap from.
    pub fn q_update(
        &mut self,
        s: RlState,
        a: RlAction,
        reward: Reward,
        next: Option<RlState>,
        params: &LearningParams,
    ) -> QUpdate {
        let before = self.get(s, a);
        let future = next.map_or(0.0, |n| self.max_value(n));
        let target = reward.value() + params.gamma * future;
        let after = before + params.alpha * (target - before);
        self.set(s, a, after);
        self.bump_visits(s, a);
        QUpdate {
            state: s,
            action: a,
            reward,
            next_state: next,
            before,
            after,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn params(alpha: f64, gamma: f64) -> LearningParams {
        LearningParams {
            alpha,
            gamma,
            ..LearningParams::default()
        }
    }

    fn st(i: usize) -> RlState {
        RlState::from_index(i).unwrap()
    }

    #[test]
    fn zero_table_positive_reward() {
        let mut q = QTable::new();
        let u = q.q_update(
            st(3),
            RlAction::Hold,
            Reward::POSITIVE,
            Some(st(4)),
            &params(0.5, 0.9),
        );
        assert_eq!(q.get(st(3), RlAction::Hold), 0.5);
        assert_eq!(u.before, 0.0);
        assert_eq!(u.after, 0.5);
        assert_eq!(q.visits(st(3), RlAction::Hold), 1);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut q = QTable::new();
        q.set(st(1), RlAction::Raise, 0.7);
        let snapshot = q.values.clone();
        q.q_update(
            st(1),
            RlAction::Raise,
            Reward::NEGATIVE,
            Some(st(2)),
            &params(0.0, 0.9),
        );
        assert_eq!(q.values, snapshot);
    }

    #[test]
    fn full_step_without_discount() {
        let mut q = QTable::new();
        q.set(st(10), RlAction::Lower, 2.0);
        q.set(st(11), RlAction::Raise, 3.0);
        q.q_update(
            st(10),
            RlAction::Lower,
            Reward::NEGATIVE,
            Some(st(11)),
            &params(1.0, 0.0),
        );
        assert_eq!(q.get(st(10), RlAction::Lower), -1.0);
    }

    #[test]
    fn terminal_transition_does_not_bootstrap() {
        let mut q = QTable::new();
        q.set(st(5), RlAction::Hold, 10.0);
        q.q_update(
            st(5),
            RlAction::Hold,
            Reward::POSITIVE,
            None,
            &params(1.0, 0.9),
        );
        assert_eq!(q.get(st(5), RlAction::Hold), 1.0);
    }

    fn random_reward(rng: &mut SplitMix64) -> Reward {
        [Reward::NEGATIVE, Reward::NEUTRAL, Reward::POSITIVE][rng.index(3)]
    }

    proptest! {
        #[test]
        fn single_cell_changes(seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let mut q = QTable::new();
            for s in RlState::all() {
                for a in RlAction::ALL {
                    q.set(s, a, rng.uniform(-3.0, 3.0));
                }
            }
            let s = st(rng.index(90));
            let a = RlAction::ALL[rng.index(3)];
            let before = q.clone();
            q.q_update(s, a, random_reward(&mut rng), Some(st(rng.index(90))), &params(0.3, 0.8));
            for s2 in RlState::all() {
                for a2 in RlAction::ALL {
                    if (s2, a2) != (s, a) {
                        prop_assert_eq!(q.get(s2, a2), before.get(s2, a2));
                        prop_assert_eq!(q.visits(s2, a2), before.visits(s2, a2));
                    }
                }
            }
        }

        #[test]
        fn values_stay_bounded(seed in any::<u64>(), gamma in 0.0f64..0.99, alpha in 0.01f64..1.0) {
            let mut rng = SplitMix64::new(seed);
            let mut q = QTable::new();
            let bound = 1.0 / (1.0 - gamma) + 1e-9;
            for _ in 0..2_000 {
                let next = if rng.chance(0.2) { None } else { Some(st(rng.index(90))) };
                q.q_update(st(rng.index(90)), RlAction::ALL[rng.index(3)], random_reward(&mut rng), next, &params(alpha, gamma));
            }
            prop_assert!(q.is_finite());
            prop_assert!(q.values.iter().flatten().all(|v| v.abs() <= bound));
        }
    }
}
