//! Confusion matrices and balanced (per-class-recall-averaged) accuracy.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use serde::Serialize;

use crate::dataset::parse_label_rows;
use crate::ensemble::{decide_labels, read_predictions};
use crate::error::{Error, Result};
use crate::labels::LabelSpace;

/// `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    #[serde(skip)]
    label_space: LabelSpace,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>, label_space: LabelSpace) -> Result<Self> {
        let k = label_space.len();
        if counts.len() != k || counts.iter().any(|row| row.len() != k) {
            return Err(Error::Contract(format!("confusion matrix must be {k}×{k}")));
        }
        Ok(Self { counts, label_space })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self) -> Vec<u64> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }
}

pub fn build_confusion(
    truth: &BTreeMap<String, usize>,
    predicted: &BTreeMap<String, usize>,
    label_space: &LabelSpace,
) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() || !truth.keys().eq(predicted.keys()) {
        return Err(Error::Alignment {
            only_left: truth
                .keys()
                .filter(|k| !predicted.contains_key(*k))
                .cloned()
                .collect(),
            only_right: predicted
                .keys()
                .filter(|k| !truth.contains_key(*k))
                .cloned()
                .collect(),
        });
    }
    let k = label_space.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (id, &t) in truth {
        let p = predicted[id];
        if t >= k || p >= k {
            return Err(Error::Input(format!("class index out of range for image {id}")));
        }
        counts[t][p] += 1;
    }
    ConfusionMatrix::from_counts(counts, label_space.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub classes: Vec<String>,
    /// `None` for classes without support; those are left out of the mean.
    pub per_class_recall: Vec<Option<f64>>,
    pub support: Vec<u64>,
    pub balanced_accuracy: f64,
    pub plain_accuracy: f64,
    pub excluded_classes: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
}

/// Mean recall over the classes that have at least one true sample.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<MetricReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let support = cm.support();
    let per_class_recall: Vec<Option<f64>> = support
        .iter()
        .enumerate()
        .map(|(c, &n)| (n > 0).then(|| cm.counts[c][c] as f64 / n as f64))
        .collect();
    let present: Vec<f64> = per_class_recall.iter().flatten().copied().collect();
    let balanced = present.iter().sum::<f64>() / present.len() as f64;
    let correct: u64 = (0..support.len()).map(|c| cm.counts[c][c]).sum();
    let excluded_classes = per_class_recall
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_none())
        .map(|(c, _)| cm.label_space.code(c).to_string())
        .collect();
    Ok(MetricReport {
        classes: cm.label_space.codes().to_vec(),
        per_class_recall,
        support,
        balanced_accuracy: balanced,
        plain_accuracy: correct as f64 / total as f64,
        excluded_classes,
        confusion: cm.counts.clone(),
    })
}

/// Scores a prediction CSV against a one-hot ground-truth CSV.
pub fn score_files<T: Read, P: Read>(
    truth_csv: T,
    prediction_csv: P,
    label_space: &LabelSpace,
) -> Result<MetricReport> {
    let truth: BTreeMap<String, usize> = parse_label_rows(truth_csv, label_space)?.into_iter().collect();
    let predictions = read_predictions(prediction_csv, "predictions", Some(label_space))?;
    let cm = build_confusion(&truth, &decide_labels(&predictions), label_space)?;
    balanced_accuracy(&cm)
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>8} {:>8}", "class", "support", "recall")?;
        for ((code, support), recall) in self.classes.iter().zip(&self.support).zip(&self.per_class_recall) {
            match recall {
                Some(r) => writeln!(f, "{code:<8} {support:>8} {r:>8.4}")?,
                None => writeln!(f, "{code:<8} {support:>8} {:>8}", "n/a")?,
            }
        }
        writeln!(f, "balanced accuracy  {:.4}", self.balanced_accuracy)?;
        write!(f, "plain accuracy     {:.4}", self.plain_accuracy)?;
        if !self.excluded_classes.is_empty() {
            write!(f, "\nexcluded (no support): {}", self.excluded_classes.join(", "))?;
        }
        Ok(())
    }
}
