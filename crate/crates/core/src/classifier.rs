//! One-vs-rest linear SVM trained by stochastic subgradient descent on the
//! L2-regularized hinge loss, plus accuracy / confusion evaluation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{DdrlError, Result};
use crate::par;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    /// L2 regularization strength (lambda).
    pub reg: f64,
    pub epochs: usize,
    /// Step size at t = 0; the schedule is 1 / (reg * (t + t0)) with t0 = 1 / (reg * lr0).
    pub lr0: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            reg: 1e-4,
            epochs: 30,
            lr0: 0.01,
            seed: 0,
        }
    }
}

impl SvmConfig {
    fn validate(&self) -> Result<()> {
        if !(self.reg > 0.0) || !(self.lr0 > 0.0) {
            return Err(DdrlError::config(format!(
                "svm reg ({}) and lr0 ({}) must be positive",
                self.reg, self.lr0
            )));
        }
        if self.epochs == 0 {
            return Err(DdrlError::config("svm epochs must be >= 1"));
        }
        Ok(())
    }
}

/// Per-dimension standardization fitted on the training features.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &[Vec<f64>]) -> Self {
        let dim = features.first().map_or(0, Vec::len);
        let n = features.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for f in features {
            for ((s, v), m) in var.iter_mut().zip(f).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// C x F, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub classes: usize,
    pub features: usize,
    pub standardizer: Standardizer,
    pub config: SvmConfig,
}

impl LinearModel {
    pub fn zeros(classes: usize, features: usize) -> Self {
        LinearModel {
            weights: vec![0.0; classes * features],
            biases: vec![0.0; classes],
            classes,
            features,
            standardizer: Standardizer::identity(features),
            config: SvmConfig::default(),
        }
    }

    pub fn class_weights(&self, c: usize) -> &[f64] {
        &self.weights[c * self.features..(c + 1) * self.features]
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    fn scores_std(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| dot(self.class_weights(c), x) + self.biases[c])
            .collect()
    }

    /// argmax_c score; ties go to the lowest class index.
    fn predict_std(&self, x: &[f64]) -> usize {
        let scores = self.scores_std(x);
        let mut best = 0;
        for c in 1..scores.len() {
            if scores[c] > scores[best] {
                best = c;
            }
        }
        best
    }

    /// Regularized one-vs-rest hinge objective on already-standardized data.
    pub fn objective(&self, xs: &[Vec<f64>], labels: &[usize]) -> f64 {
        let n = xs.len().max(1) as f64;
        let hinge: f64 = xs
            .iter()
            .zip(labels)
            .map(|(x, &l)| {
                self.scores_std(x)
                    .iter()
                    .enumerate()
                    .map(|(c, s)| {
                        let y = if c == l { 1.0 } else { -1.0 };
                        (1.0 - y * s).max(0.0)
                    })
                    .sum::<f64>()
            })
            .sum();
        0.5 * self.config.reg * self.weight_norm().powi(2) + hinge / n
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-epoch training trace.
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    /// Mean regularized objective over the steps of each epoch.
    pub epoch_objective: Vec<f64>,
    /// Mean over every step taken so far, sampled at the end of each epoch.
    pub running_objective: Vec<f64>,
}

pub fn train_svm(features: &[Vec<f64>], labels: &[usize], cfg: &SvmConfig) -> Result<LinearModel> {
    train_svm_traced(features, labels, cfg).map(|(m, _)| m)
}

pub fn train_svm_traced(features: &[Vec<f64>], labels: &[usize], cfg: &SvmConfig) -> Result<(LinearModel, TrainTrace)> {
    cfg.validate()?;
    let n = features.len();
    if n != labels.len() {
        return Err(DdrlError::Data(format!("{n} feature rows but {} labels", labels.len())));
    }
    if n < 2 {
        return Err(DdrlError::InvalidLabel(format!("need at least 2 examples, got {n}")));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(DdrlError::shape("feature rows have unequal length"));
    }
    if let Some(i) = features.iter().position(|f| f.iter().any(|v| !v.is_finite())) {
        return Err(DdrlError::Data(format!("row {i} has a non-finite feature")));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        return Err(DdrlError::InvalidLabel(format!("all examples have label {first}")));
    }

    let standardizer = Standardizer::fit(features);
    let xs: Vec<Vec<f64>> = features.iter().map(|f| standardizer.apply(f)).collect();

    let mut model = LinearModel {
        weights: vec![0.0; classes * dim],
        biases: vec![0.0; classes],
        classes,
        features: dim,
        standardizer,
        config: *cfg,
    };
    let t0 = 1.0 / (cfg.reg * cfg.lr0);
    let mut rng = rng::stage_rng(cfg.seed, "svm-shuffle");
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = TrainTrace::default();
    // The shrink factor (1 - lr*reg) is folded into a running scale so each
    // step touches only the classes whose margin is violated.
    let mut scale = 1.0f64;
    let mut t = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_obj = 0.0;
        for &i in &order {
            let lr = 1.0 / (cfg.reg * (t as f64 + t0));
            let x = &xs[i];
            let mut hinge = 0.0;
            let margins: Vec<f64> = (0..classes)
                .map(|c| {
                    let y = if c == labels[i] { 1.0 } else { -1.0 };
                    let s = scale * dot(model.class_weights(c), x) + model.biases[c];
                    y * s
                })
                .collect();
            scale *= 1.0 - lr * cfg.reg;
            for (c, m) in margins.iter().enumerate() {
                if *m < 1.0 {
                    hinge += 1.0 - m;
                    let y = if c == labels[i] { 1.0 } else { -1.0 };
                    let step = lr * y / scale;
                    for (w, v) in model.weights[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                        *w += step * v;
                    }
                    model.biases[c] += lr * y;
                }
            }
            epoch_obj += hinge;
            t += 1;
            if scale < 1e-100 {
                model.weights.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
        }
        let norm2 = scale * scale * model.weights.iter().map(|w| w * w).sum::<f64>();
        let epoch_mean = epoch_obj / n as f64 + 0.5 * cfg.reg * norm2;
        let done = trace.epoch_objective.len() as f64;
        let running = trace.running_objective.last().map_or(epoch_mean, |r| (r * done + epoch_mean) / (done + 1.0));
        trace.epoch_objective.push(epoch_mean);
        trace.running_objective.push(running);
    }
    model.weights.iter_mut().for_each(|w| *w *= scale);
    Ok((model, trace))
}

pub fn predict(model: &LinearModel, features: &[Vec<f64>]) -> Result<Vec<usize>> {
    if let Some(f) = features.iter().find(|f| f.len() != model.features) {
        return Err(DdrlError::shape(format!(
            "model expects {} features, got {}",
            model.features,
            f.len()
        )));
    }
    Ok(par::map_slice(features, |f| model.predict_std(&model.standardizer.apply(f))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// confusion[truth][pred]
    pub confusion: Vec<Vec<u64>>,
}

pub fn evaluate(pred: &[usize], truth: &[usize]) -> Result<Evaluation> {
    if pred.len() != truth.len() {
        return Err(DdrlError::Data(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let classes = pred.iter().chain(truth).max().map_or(0, |m| m + 1);
    let mut confusion = vec![vec![0u64; classes]; classes];
    let mut correct = 0usize;
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[t][p] += 1;
        correct += usize::from(p == t);
    }
    let accuracy = if truth.is_empty() {
        0.0
    } else {
        correct as f64 / truth.len() as f64
    };
    Ok(Evaluation { accuracy, confusion })
}
