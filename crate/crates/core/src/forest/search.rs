//! Seeded randomized hyperparameter search scored by stratified k-fold
//! cross-validated accuracy.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_forest, ForestParams, MaxFeatures};
use crate::dataset::Dataset;
use crate::rng::{derive_seed, stream, stream_rng};
use crate::{Error, Result, N_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub min_trees: usize,
    pub max_trees: usize,
    pub rules: Vec<MaxFeatures>,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            min_trees: 2,
            max_trees: 40,
            rules: vec![MaxFeatures::Sqrt, MaxFeatures::Log2],
            min_samples_leaf: 1,
            max_depth: None,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.min_trees == 0 || self.min_trees > self.max_trees {
            return Err(Error::InvalidConfig(format!(
                "tree range {}..={} is empty or starts at zero",
                self.min_trees, self.max_trees
            )));
        }
        if self.rules.is_empty() {
            return Err(Error::InvalidConfig("search space has no max-features rules".into()));
        }
        let mut rules = self.rules.clone();
        rules.sort();
        rules.dedup();
        if rules.len() != self.rules.len() {
            return Err(Error::InvalidConfig("duplicate max-features rules".into()));
        }
        Ok(())
    }

    /// Every combination, rule-major in declaration order.
    pub fn enumerate(&self) -> Vec<ForestParams> {
        self.rules
            .iter()
            .flat_map(|&rule| {
                (self.min_trees..=self.max_trees).map(move |n| ForestParams {
                    n_trees: n,
                    max_features: rule,
                    min_samples_leaf: self.min_samples_leaf,
                    max_depth: self.max_depth,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub params: ForestParams,
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// In sampling order.
    pub candidates: Vec<CandidateScore>,
    pub best_index: usize,
    pub folds: usize,
    pub requested_candidates: usize,
    /// The space had fewer distinct combinations than requested, so all of
    /// them were evaluated.
    pub space_exhausted: bool,
    pub seed: u64,
}

impl CvResult {
    pub fn best(&self) -> &CandidateScore {
        &self.candidates[self.best_index]
    }
}

/// Assigns each row to one of `k` folds so every class is spread as evenly
/// as possible. Classes are shuffled independently; the fold counter carries
/// over from one class to the next.
pub fn stratified_folds<R: Rng>(y: &[usize], k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); N_CLASSES];
    for (i, &label) in y.iter().enumerate() {
        if label >= N_CLASSES {
            return Err(Error::LabelOutOfRange {
                label,
                n_classes: N_CLASSES,
            });
        }
        by_class[label].push(i);
    }
    if let Some((class, rows)) = by_class
        .iter()
        .enumerate()
        .find(|(_, rows)| !rows.is_empty() && rows.len() < k)
    {
        return Err(Error::InvalidConfig(format!(
            "class {class} has {} rows, fewer than {k} folds",
            rows.len()
        )));
    }
    let mut folds = vec![0; y.len()];
    let mut next = 0;
    for rows in &mut by_class {
        rows.shuffle(rng);
        for &r in rows.iter() {
            folds[r] = next % k;
            next += 1;
        }
    }
    Ok(folds)
}

fn fold_accuracy(data: &Dataset, folds: &[usize], fold: usize, params: &ForestParams, seed: u64) -> Result<f64> {
    let train: Vec<usize> = (0..data.len()).filter(|&i| folds[i] != fold).collect();
    let test: Vec<usize> = (0..data.len()).filter(|&i| folds[i] == fold).collect();
    let model = train_forest(&data.subset(&train), params, seed)?;
    let correct = test
        .iter()
        .map(|&i| model.predict(&data.x[i]).map(|p| usize::from(p == data.y[i])))
        .sum::<Result<usize>>()?;
    Ok(correct as f64 / test.len() as f64)
}

/// Higher mean accuracy first, then fewer trees, then rule order
/// (log2, sqrt, all).
fn rank(a: &CandidateScore, b: &CandidateScore) -> Ordering {
    b.mean_accuracy
        .total_cmp(&a.mean_accuracy)
        .then(a.params.n_trees.cmp(&b.params.n_trees))
        .then(a.params.max_features.cmp(&b.params.max_features))
}

/// Samples `n_candidates` distinct combinations from `space` and scores each
/// by stratified `folds`-fold mean accuracy. All candidates see the same fold
/// assignment and the same per-fold forest seeds.
pub fn randomized_search(
    data: &Dataset,
    space: &SearchSpace,
    n_candidates: usize,
    folds: usize,
    seed: u64,
) -> Result<(ForestParams, CvResult)> {
    space.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if n_candidates == 0 {
        return Err(Error::InvalidConfig("need at least one candidate".into()));
    }
    let mut rng = stream_rng(seed, stream::SEARCH);
    let fold_of = stratified_folds(&data.y, folds, &mut rng)?;

    let all = space.enumerate();
    let space_exhausted = all.len() < n_candidates;
    let chosen: Vec<ForestParams> = if space_exhausted {
        all
    } else {
        rand::seq::index::sample(&mut rng, all.len(), n_candidates)
            .into_iter()
            .map(|i| all[i])
            .collect()
    };

    let jobs: Vec<(usize, usize)> = (0..chosen.len())
        .flat_map(|c| (0..folds).map(move |f| (c, f)))
        .collect();
    let scores = jobs
        .par_iter()
        .map(|&(c, f)| fold_accuracy(data, &fold_of, f, &chosen[c], derive_seed(seed, f as u64)))
        .collect::<Result<Vec<f64>>>()?;

    let candidates: Vec<CandidateScore> = chosen
        .iter()
        .enumerate()
        .map(|(c, params)| {
            let fold_accuracy = scores[c * folds..(c + 1) * folds].to_vec();
            let mean_accuracy = fold_accuracy.iter().sum::<f64>() / folds as f64;
            CandidateScore {
                params: *params,
                fold_accuracy,
                mean_accuracy,
            }
        })
        .collect();
    let best_index = (0..candidates.len())
        .min_by(|&a, &b| rank(&candidates[a], &candidates[b]))
        .unwrap_or(0);
    let best = candidates[best_index].params;
    Ok((
        best,
        CvResult {
            candidates,
            best_index,
            folds,
            requested_candidates: n_candidates,
            space_exhausted,
            seed,
        },
    ))
}
