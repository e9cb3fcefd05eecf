//! Confusion matrix, one-vs-rest metrics and a k-nearest-neighbour baseline.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.n_classes()).map(|c| self.counts[c][c]).sum()
    }
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch(y_true.len(), y_pred.len()));
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        for label in [t, p] {
            if label >= n_classes {
                return Err(Error::LabelOutOfRange { label, n_classes });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub support: u64,
    /// One-vs-rest accuracy `(tp + tn) / total`.
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Names of the metrics whose denominator was zero; those are reported as 0.
    pub undefined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_samples: u64,
    pub overall_accuracy: f64,
    pub macro_accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: f64, den: f64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num / den
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let k = cm.n_classes();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.counts[c][c];
            let support: u64 = cm.counts[c].iter().sum();
            let predicted: u64 = (0..k).map(|r| cm.counts[r][c]).sum();
            let fn_ = support - tp;
            let fp = predicted - tp;
            let tn = total - tp - fp - fn_;
            let mut undefined = Vec::new();
            let precision = ratio(tp as f64, (tp + fp) as f64, "precision", &mut undefined);
            let recall = ratio(tp as f64, (tp + fn_) as f64, "recall", &mut undefined);
            let f1 = ratio(2.0 * precision * recall, precision + recall, "f1", &mut undefined);
            ClassMetrics {
                class: c,
                tp,
                fp,
                fn_,
                tn,
                support,
                accuracy: (tp + tn) as f64 / total as f64,
                precision,
                recall,
                f1,
                undefined,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    Ok(Metrics {
        n_samples: total,
        overall_accuracy: cm.correct() as f64 / total as f64,
        macro_accuracy: mean(|m| m.accuracy),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_class,
        confusion: cm.clone(),
    })
}

pub fn evaluate_predictions(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Metrics> {
    compute_metrics(&confusion_matrix(y_true, y_pred, n_classes)?)
}

/// Majority vote among the `k` nearest training rows by Euclidean distance.
/// Rows tied with the k-th distance all vote; vote ties go to the smallest
/// label.
pub fn knn_predict(train: &Dataset, rows: &[Vec<f64>], k: usize, n_classes: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if train.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if k > train.len() {
        return Err(Error::InvalidConfig(format!("k = {k} exceeds {} training rows", train.len())));
    }
    rows.par_iter()
        .map(|x| {
            if x.len() != train.n_features() {
                return Err(Error::FeatureCountMismatch {
                    expected: train.n_features(),
                    got: x.len(),
                });
            }
            let mut dist: Vec<(f64, usize)> = train
                .x
                .iter()
                .zip(&train.y)
                .map(|(r, &y)| (r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), y))
                .collect();
            dist.sort_by(|a, b| a.0.total_cmp(&b.0));
            let kth = dist[k - 1].0;
            let mut votes = vec![0usize; n_classes];
            for &(_, y) in dist.iter().take_while(|(d, _)| *d <= kth) {
                votes[y] += 1;
            }
            let best = votes.iter().copied().max().unwrap_or(0);
            Ok(votes.iter().position(|&v| v == best).unwrap_or(0))
        })
        .collect()
}

/// Aligned text table with one row per class and a column group per model,
/// followed by macro and overall rows. `ovr_acc` is one-vs-rest accuracy.
pub fn format_metrics_table(models: &[(&str, &Metrics)], class_names: &[&str]) -> String {
    const COLS: [&str; 5] = ["ovr_acc", "precision", "recall", "f1", "support"];
    let mut out = String::new();
    let _ = write!(out, "{:<8}", "class");
    for (name, _) in models {
        for c in COLS {
            let _ = write!(out, " {:>18}", format!("{name}:{c}"));
        }
    }
    out.push('\n');
    let n_classes = models.first().map_or(0, |(_, m)| m.per_class.len());
    for c in 0..n_classes {
        let _ = write!(out, "{:<8}", class_names.get(c).copied().unwrap_or("?"));
        for (_, m) in models {
            let r = &m.per_class[c];
            let _ = write!(
                out,
                " {:>18.4} {:>18.4} {:>18.4} {:>18.4} {:>18}",
                r.accuracy, r.precision, r.recall, r.f1, r.support
            );
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<8}", "macro");
    for (_, m) in models {
        let _ = write!(
            out,
            " {:>18.4} {:>18.4} {:>18.4} {:>18.4} {:>18}",
            m.macro_accuracy, m.macro_precision, m.macro_recall, m.macro_f1, m.n_samples
        );
    }
    out.push('\n');
    for (name, m) in models {
        let _ = writeln!(out, "{name} overall accuracy: {:.4}", m.overall_accuracy);
    }
    out
}
