//! Linear SVM `f(x) = w . z + b` over standardized features `z`, trained by
//! stochastic subgradient descent on the L2-regularized hinge loss.

use std::cmp::Ordering;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{AnalysisError, FeatureVector, Label, FEATURE_COUNT};
use crate::rng::SplitMix64;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MIN_STD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainerMeta {
    pub seed: u64,
    pub epochs: u32,
    pub lambda: f64,
    pub eta0: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmModel {
    pub format_version: u32,
    pub w: [f64; FEATURE_COUNT],
    pub b: f64,
    pub feature_means: [f64; FEATURE_COUNT],
    pub feature_stds: [f64; FEATURE_COUNT],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainer: Option<TrainerMeta>,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("reading model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("model has a non-finite parameter")]
    NonFinite,
    #[error("feature std {0} is not strictly positive")]
    NonPositiveStd(usize),
}

impl SvmModel {
    pub fn new(
        w: [f64; FEATURE_COUNT],
        b: f64,
        feature_means: [f64; FEATURE_COUNT],
        feature_stds: [f64; FEATURE_COUNT],
    ) -> Result<Self, ModelError> {
        let model = Self {
            format_version: MODEL_FORMAT_VERSION,
            w,
            b,
            feature_means,
            feature_stds,
            trainer: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Version(self.format_version));
        }
        let all = self
            .w
            .iter()
            .chain(&self.feature_means)
            .chain(&self.feature_stds);
        if !self.b.is_finite() || !all.clone().all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        if let Some(i) = self.feature_stds.iter().position(|&s| s <= 0.0) {
            return Err(ModelError::NonPositiveStd(i));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let model: SvmModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn standardize(&self, x: &[f64; FEATURE_COUNT]) -> [f64; FEATURE_COUNT] {
        std::array::from_fn(|i| (x[i] - self.feature_means[i]) / self.feature_stds[i])
    }

    /// Decision value on raw (unstandardized) features.
    pub fn decision_raw(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        dot(&self.w, &self.standardize(x)) + self.b
    }

    /// Positive values lean human, negative lean bot.
    pub fn decision(&self, x: &FeatureVector) -> f64 {
        self.decision_raw(&x.to_array())
    }
}

/// The classifier shipped with the crate, trained on the reference
/// simulation (see `sim::bootstrap_model`).
pub fn builtin_model() -> &'static SvmModel {
    static MODEL: OnceLock<SvmModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        SvmModel::from_json(include_str!("../../assets/default_model.json"))
            .expect("bundled model is valid")
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmHyper {
    /// L2 regularization strength.
    pub lambda: f64,
    pub epochs: u32,
    /// Initial step size; step `t` uses `eta0 / (1 + eta0 * lambda * t)`.
    pub eta0: f64,
    pub seed: u64,
}

impl Default for SvmHyper {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            epochs: 40,
            eta0: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedSvm {
    pub model: SvmModel,
    /// Regularized hinge objective after each epoch.
    pub epoch_losses: Vec<f64>,
}

fn dot(a: &[f64; FEATURE_COUNT], b: &[f64; FEATURE_COUNT]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn canonical_cmp(a: &([f64; FEATURE_COUNT], f64), b: &([f64; FEATURE_COUNT], f64)) -> Ordering {
    a.1.total_cmp(&b.1).then_with(|| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

fn objective(
    w: &[f64; FEATURE_COUNT],
    b: f64,
    lambda: f64,
    data: &[([f64; FEATURE_COUNT], f64)],
) -> f64 {
    let hinge: f64 = data
        .iter()
        .map(|(z, y)| (1.0 - y * (dot(w, z) + b)).max(0.0))
        .sum();
    0.5 * lambda * dot(w, w) + hinge / data.len() as f64
}

/// Minimizes `lambda/2 |w|^2 + mean(max(0, 1 - y (w.z + b)))`.
///
/// The samples are first sorted into a canonical order, so the result does
/// not depend on the order they are passed in. Each epoch then visits them
/// in a fresh permutation drawn from `hyper.seed`. The bias is not
/// regularized.
pub fn train_svm(
    samples: &[(FeatureVector, Label)],
    hyper: &SvmHyper,
) -> Result<TrainedSvm, AnalysisError> {
    if !(hyper.lambda > 0.0 && hyper.lambda.is_finite()) {
        return Err(AnalysisError::InvalidHyper(format!(
            "lambda = {}",
            hyper.lambda
        )));
    }
    if !(hyper.eta0 > 0.0 && hyper.eta0.is_finite()) {
        return Err(AnalysisError::InvalidHyper(format!(
            "eta0 = {}",
            hyper.eta0
        )));
    }
    if hyper.epochs == 0 {
        return Err(AnalysisError::InvalidHyper("epochs = 0".into()));
    }
    if samples.len() < 10 {
        return Err(AnalysisError::TooFewSamples(samples.len()));
    }
    if !samples.iter().any(|(_, l)| *l == Label::Human) {
        return Err(AnalysisError::SingleClass("human"));
    }
    if !samples.iter().any(|(_, l)| *l == Label::Bot) {
        return Err(AnalysisError::SingleClass("bot"));
    }

    let mut data: Vec<([f64; FEATURE_COUNT], f64)> = samples
        .iter()
        .map(|(f, label)| (f.to_array(), label.sign()))
        .collect();
    data.sort_by(canonical_cmp);

    let n = data.len() as f64;
    let means: [f64; FEATURE_COUNT] =
        std::array::from_fn(|i| data.iter().map(|(x, _)| x[i]).sum::<f64>() / n);
    let stds: [f64; FEATURE_COUNT] = std::array::from_fn(|i| {
        let var = data
            .iter()
            .map(|(x, _)| (x[i] - means[i]).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        if std < MIN_STD {
            log::warn!(
                "feature {} has zero variance in the training set; clamping its std to {MIN_STD}",
                super::FEATURE_NAMES[i]
            );
            MIN_STD
        } else {
            std
        }
    });
    for (x, _) in data.iter_mut() {
        *x = std::array::from_fn(|i| (x[i] - means[i]) / stds[i]);
    }

    let mut rng = SplitMix64::new(hyper.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut w = [0.0; FEATURE_COUNT];
    let mut b = 0.0;
    let mut t = 0u64;
    let mut epoch_losses = Vec::with_capacity(hyper.epochs as usize);
    for _ in 0..hyper.epochs {
        rng.shuffle(&mut order);
        for &i in &order {
            let (z, y) = &data[i];
            let eta = hyper.eta0 / (1.0 + hyper.eta0 * hyper.lambda * t as f64);
            let margin = y * (dot(&w, z) + b);
            for wj in w.iter_mut() {
                *wj *= 1.0 - eta * hyper.lambda;
            }
            if margin < 1.0 {
                for (wj, zj) in w.iter_mut().zip(z) {
                    *wj += eta * y * zj;
                }
                b += eta * y;
            }
            t += 1;
        }
        epoch_losses.push(objective(&w, b, hyper.lambda, &data));
    }

    let mut model =
        SvmModel::new(w, b, means, stds).map_err(|e| AnalysisError::InvalidHyper(e.to_string()))?;
    model.trainer = Some(TrainerMeta {
        seed: hyper.seed,
        epochs: hyper.epochs,
        lambda: hyper.lambda,
        eta0: hyper.eta0,
        samples: samples.len(),
    });
    Ok(TrainedSvm {
        model,
        epoch_losses,
    })
}
