use serde::{Deserialize, Serialize};

use super::{AnalysisError, Label, VerdictLabel};

/// How an `uncertain` verdict is scored against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertainPolicy {
    /// Count it as a bot verdict.
    #[default]
    Strict,
    /// Count it as a human verdict.
    Lenient,
    /// Leave the session out.
    Exclude,
}

/// Confusion matrix with "human" as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    /// Humans labeled human.
    pub tp: u64,
    /// Bots labeled human.
    pub fp: u64,
    /// Humans labeled bot.
    pub fn_: u64,
    /// Bots labeled bot.
    pub tn: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Humans labeled bot over all humans.
    pub fpr: f64,
    pub counts: ConfusionCounts,
}

impl ConfusionCounts {
    pub fn record(&mut self, truth: Label, predicted_human: bool) {
        match (truth, predicted_human) {
            (Label::Human, true) => self.tp += 1,
            (Label::Human, false) => self.fn_ += 1,
            (Label::Bot, true) => self.fp += 1,
            (Label::Bot, false) => self.tn += 1,
        }
    }

    pub fn metrics(&self) -> Result<ClassifierMetrics, AnalysisError> {
        let humans = self.tp + self.fn_;
        if humans == 0 {
            return Err(AnalysisError::EmptyClass("human"));
        }
        if self.fp + self.tn == 0 {
            return Err(AnalysisError::EmptyClass("bot"));
        }
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        Ok(ClassifierMetrics {
            precision: ratio(self.tp, self.tp + self.fp),
            recall: ratio(self.tp, humans),
            f1: ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_),
            fpr: ratio(self.fn_, humans),
            counts: *self,
        })
    }
}

/// Scores `(ground truth, verdict)` pairs.
pub fn evaluate_classifier(
    outcomes: impl IntoIterator<Item = (Label, VerdictLabel)>,
    policy: UncertainPolicy,
) -> Result<ClassifierMetrics, AnalysisError> {
    let mut counts = ConfusionCounts::default();
    for (truth, verdict) in outcomes {
        let predicted_human = match (verdict, policy) {
            (VerdictLabel::Human, _) => true,
            (VerdictLabel::Bot, _) => false,
            (VerdictLabel::Uncertain, UncertainPolicy::Strict) => false,
            (VerdictLabel::Uncertain, UncertainPolicy::Lenient) => true,
            (VerdictLabel::Uncertain, UncertainPolicy::Exclude) => continue,
        };
        counts.record(truth, predicted_human);
    }
    counts.metrics()
}
