//! Dense labeled matrices, min-max normalization, the stratified train/test
//! split and importance-based feature selection.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::forest::{train_forest, ForestParams};
use crate::rng::stream_rng;
use crate::signatures::SignatureTable;
use crate::{Error, Result, N_CLASSES};

/// Row-major feature matrix with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<usize>, feature_names: Vec<String>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::LengthMismatch(x.len(), y.len()));
        }
        if let Some(row) = x.iter().find(|r| r.len() != feature_names.len()) {
            return Err(Error::FeatureCountMismatch {
                expected: feature_names.len(),
                got: row.len(),
            });
        }
        if let Some(&label) = y.iter().find(|&&l| l >= N_CLASSES) {
            return Err(Error::LabelOutOfRange {
                label,
                n_classes: N_CLASSES,
            });
        }
        Ok(Dataset { x, y, feature_names })
    }

    pub fn from_table(table: &SignatureTable) -> Self {
        Dataset {
            x: table.rows().iter().map(|r| r.features.clone()).collect(),
            y: table.labels(),
            feature_names: table.feature_names().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: rows.iter().map(|&i| self.x[i].clone()).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Keeps only the given columns, in the given order.
    pub fn select_features(&self, columns: &[usize]) -> Dataset {
        Dataset {
            x: self
                .x
                .iter()
                .map(|r| columns.iter().map(|&j| r[j]).collect())
                .collect(),
            y: self.y.clone(),
            feature_names: columns.iter().map(|&j| self.feature_names[j].clone()).collect(),
        }
    }

    pub fn normalized(&self, params: &NormalizationParams) -> Dataset {
        Dataset {
            x: self.x.iter().map(|r| apply_normalization(params, r)).collect(),
            y: self.y.clone(),
            feature_names: self.feature_names.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Per class, shuffles the rows with a seeded generator and sends the first
/// `round(train_fraction * n_c)` to training (at least one row to each side).
/// Both index lists are returned sorted.
pub fn stratified_split(labels: &[usize], train_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); N_CLASSES];
    for (i, &label) in labels.iter().enumerate() {
        if label >= N_CLASSES {
            return Err(Error::LabelOutOfRange {
                label,
                n_classes: N_CLASSES,
            });
        }
        by_class[label].push(i);
    }
    let mut rng = stream_rng(seed, crate::rng::stream::SPLIT);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, rows) in by_class.iter_mut().enumerate() {
        if rows.is_empty() {
            continue;
        }
        if rows.len() < 2 {
            return Err(Error::ClassTooSmall(class));
        }
        rows.shuffle(&mut rng);
        let n_train = ((train_fraction * rows.len() as f64).round() as usize).clamp(1, rows.len() - 1);
        train.extend_from_slice(&rows[..n_train]);
        test.extend_from_slice(&rows[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test, seed })
}

/// Per-feature extrema of the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

pub fn fit_normalization(data: &Dataset, train: &[usize]) -> Result<NormalizationParams> {
    if train.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    let d = data.n_features();
    let mut min = vec![f64::INFINITY; d];
    let mut max = vec![f64::NEG_INFINITY; d];
    for &i in train {
        for (j, &v) in data.x[i].iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    Ok(NormalizationParams { min, max })
}

/// `(x - min) / (max - min)`, with degenerate features mapped to 0. Values
/// outside the training range are not clipped.
pub fn apply_normalization(params: &NormalizationParams, row: &[f64]) -> Vec<f64> {
    row.iter()
        .zip(params.min.iter().zip(&params.max))
        .map(|(&x, (&lo, &hi))| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMask {
    /// Selected column indices, most important first.
    pub selected: Vec<usize>,
    /// Importance of every input feature; sums to one.
    pub importance: Vec<f64>,
}

/// Ranks features by forest importance and keeps the `k` best; ties go to the
/// lower index. `train` should already be normalized.
pub fn select_top_features(train: &Dataset, k: usize, params: &ForestParams, seed: u64) -> Result<FeatureMask> {
    let d = train.n_features();
    if k == 0 || k > d {
        return Err(Error::InvalidConfig(format!("cannot select {k} of {d} features")));
    }
    let model = train_forest(train, params, seed)?;
    let importance = model.feature_importance();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(FeatureMask {
        selected: order,
        importance,
    })
}
