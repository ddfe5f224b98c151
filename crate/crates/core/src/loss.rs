//! Class-weighted cross-entropy over logits.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Per-class loss multipliers together with the counts they were derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    weights: Vec<f64>,
    source_counts: Vec<usize>,
}

/// Inverse-frequency weights `N / (K · n_c)`, normalized so the mean weight per
/// training sample is exactly one.
pub fn compute_class_weights(class_counts: &[usize]) -> Result<ClassWeights> {
    if class_counts.is_empty() {
        return Err(Error::EmptyInput("no class counts".into()));
    }
    if let Some(c) = class_counts.iter().position(|&n| n == 0) {
        return Err(Error::DegenerateClass {
            class: format!("index {c}"),
        });
    }
    let total: usize = class_counts.iter().sum();
    let k = class_counts.len() as f64;
    let weights = class_counts
        .iter()
        .map(|&n| total as f64 / (k * n as f64))
        .collect();
    Ok(ClassWeights {
        weights,
        source_counts: class_counts.to_vec(),
    })
}

impl ClassWeights {
    /// Weights computed from a (training) dataset's class counts.
    pub fn for_dataset(ds: &Dataset) -> Result<Self> {
        compute_class_weights(ds.class_counts()).map_err(|e| match e {
            Error::DegenerateClass { .. } => {
                let c = ds.class_counts().iter().position(|&n| n == 0).unwrap_or(0);
                Error::DegenerateClass {
                    class: ds.label_space().code(c).to_string(),
                }
            }
            other => other,
        })
    }

    /// User-supplied weights. They are not renormalized.
    pub fn explicit(weights: Vec<f64>, source_counts: Vec<usize>) -> Result<Self> {
        if weights.is_empty() || weights.len() != source_counts.len() {
            return Err(Error::Contract(format!(
                "{} explicit weights for {} classes",
                weights.len(),
                source_counts.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::NumericInput(format!("class weight {w} is not positive")));
        }
        Ok(Self {
            weights,
            source_counts,
        })
    }

    /// All-ones weights for `k` classes.
    pub fn uniform(k: usize) -> Self {
        Self {
            weights: vec![1.0; k],
            source_counts: vec![1; k],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn source_counts(&self) -> &[usize] {
        &self.source_counts
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `Σ n_c w_c / Σ n_c`.
    pub fn mean_sample_weight(&self) -> f64 {
        let total: usize = self.source_counts.iter().sum();
        let weighted: f64 = self
            .source_counts
            .iter()
            .zip(&self.weights)
            .map(|(&n, &w)| n as f64 * w)
            .sum();
        weighted / total as f64
    }
}

/// Loss value plus `∂loss/∂logits`, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Vec<Vec<f64>>,
}

/// Numerically stable `ln Σ exp(x)`.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&x| (x - lse).exp()).collect()
}

pub fn weighted_cross_entropy(logits: &[f64], true_class: usize, w: &ClassWeights) -> Result<LossValue> {
    let (value, gradient) = sample_loss(logits, true_class, w)?;
    Ok(LossValue {
        value,
        gradient: vec![gradient],
    })
}

fn sample_loss(logits: &[f64], true_class: usize, w: &ClassWeights) -> Result<(f64, Vec<f64>)> {
    if logits.len() != w.len() {
        return Err(Error::Contract(format!(
            "{} logits for {} class weights",
            logits.len(),
            w.len()
        )));
    }
    if true_class >= logits.len() {
        return Err(Error::Contract(format!(
            "true class {true_class} outside 0..{}",
            logits.len()
        )));
    }
    if let Some(x) = logits.iter().find(|x| !x.is_finite()) {
        return Err(Error::NumericInput(format!("non-finite logit {x}")));
    }
    let weight = w.weights[true_class];
    let lse = log_sum_exp(logits);
    let value = (weight * (lse - logits[true_class])).max(0.0);
    let gradient = logits
        .iter()
        .enumerate()
        .map(|(c, &x)| {
            let p = (x - lse).exp();
            weight * if c == true_class { p - 1.0 } else { p }
        })
        .collect();
    Ok((value, gradient))
}

/// Mean weighted loss over a batch; gradient rows are scaled by `1 / batch size`.
pub fn batch_loss<L: AsRef<[f64]>>(samples: &[(L, usize)], w: &ClassWeights) -> Result<LossValue> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("loss over an empty batch".into()));
    }
    let scale = 1.0 / samples.len() as f64;
    let mut total = 0.0;
    let mut gradient = Vec::with_capacity(samples.len());
    for (logits, class) in samples {
        let (value, mut grad) = sample_loss(logits.as_ref(), *class, w)?;
        total += value;
        grad.iter_mut().for_each(|g| *g *= scale);
        gradient.push(grad);
    }
    Ok(LossValue {
        value: total * scale,
        gradient,
    })
}
