//! Random-forest classifier: bootstrap-resampled CART trees with soft voting,
//! mean-decrease-in-impurity importance, and randomized hyperparameter search.

mod search;
mod tree;

pub use search::{
    randomized_search, stratified_folds, CandidateScore, CvResult, SearchSpace,
};
pub use tree::{gini, train_tree, Node, NodeKind, Tree, TreeParams};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::rng::derive_seed;
use crate::{Error, Result, N_CLASSES};

/// Size of the random feature subset tried at each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    Log2,
    Sqrt,
    All,
}

impl MaxFeatures {
    /// Number of features to draw out of `d`, at least 1.
    pub fn count(self, d: usize) -> usize {
        let n = match self {
            MaxFeatures::Log2 => (d as f64).log2().floor() as usize,
            MaxFeatures::Sqrt => (d as f64).sqrt().floor() as usize,
            MaxFeatures::All => d,
        };
        n.clamp(1, d.max(1))
    }
}

impl std::str::FromStr for MaxFeatures {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "log2" => Ok(MaxFeatures::Log2),
            "sqrt" => Ok(MaxFeatures::Sqrt),
            "all" | "none" => Ok(MaxFeatures::All),
            other => Err(Error::InvalidConfig(format!("unknown max-features rule {other:?}"))),
        }
    }
}

impl std::fmt::Display for MaxFeatures {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaxFeatures::Log2 => "log2",
            MaxFeatures::Sqrt => "sqrt",
            MaxFeatures::All => "all",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
}

impl Default for ForestParams {
    /// General-purpose defaults (100 trees, sqrt rule), used for feature
    /// selection.
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_features: MaxFeatures::Sqrt,
            min_samples_leaf: 1,
            max_depth: None,
        }
    }
}

impl ForestParams {
    /// 18 trees with the log2 rule, the optimum reported for the GPVS signatures.
    pub fn tuned() -> Self {
        ForestParams {
            n_trees: 18,
            max_features: MaxFeatures::Log2,
            ..ForestParams::default()
        }
    }

    fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_features: self.max_features,
            min_samples_leaf: self.min_samples_leaf,
            max_depth: self.max_depth,
            n_classes: N_CLASSES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidConfig("a forest needs at least one tree".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidConfig("min_samples_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_classes: usize,
    pub feature_names: Vec<String>,
    pub params: ForestParams,
    pub seed: u64,
}

impl ForestModel {
    /// Wraps prebuilt trees, e.g. for tests or hand-made fixtures.
    pub fn from_trees(trees: Vec<Tree>, feature_names: Vec<String>, n_classes: usize) -> Result<Self> {
        let model = ForestModel {
            params: ForestParams {
                n_trees: trees.len(),
                ..ForestParams::default()
            },
            trees,
            n_classes,
            feature_names,
            seed: 0,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Re-checks every tree; use after deserializing.
    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::MalformedTree("forest has no trees".into()));
        }
        for t in &self.trees {
            Tree::from_nodes(t.nodes().to_vec(), self.n_features(), self.n_classes)?;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features() {
            return Err(Error::FeatureCountMismatch {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Mean of the leaf distributions reached in each tree.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut out = vec![0.0; self.n_classes];
        for t in &self.trees {
            for (o, p) in out.iter_mut().zip(t.predict_proba(x)) {
                *o += p;
            }
        }
        let n = self.trees.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        Ok(out)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }

    pub fn predict_all(&self, rows: &[Vec<f64>]) -> Result<Vec<usize>> {
        rows.par_iter().map(|r| self.predict(r)).collect()
    }

    /// Normalized mean decrease in impurity. Per tree the cover-weighted Gini
    /// decreases are summed per feature and divided by the root cover; the
    /// trees are averaged and the result scaled to sum to one. A forest with
    /// no splits yields the uniform vector.
    pub fn feature_importance(&self) -> Vec<f64> {
        let d = self.n_features();
        let mut total = vec![0.0; d];
        for t in &self.trees {
            let root = t.root().cover;
            for (acc, dec) in total.iter_mut().zip(t.impurity_decrease(d)) {
                *acc += dec / root;
            }
        }
        let n = self.trees.len() as f64;
        total.iter_mut().for_each(|v| *v /= n);
        let sum: f64 = total.iter().sum();
        if sum > 0.0 {
            total.iter_mut().for_each(|v| *v /= sum);
            total
        } else {
            vec![1.0 / d as f64; d]
        }
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate() {
        if p > v[best] {
            best = i;
        }
    }
    best
}

/// Bootstrap multiplicities: `n` draws with replacement from `0..n`.
pub fn bootstrap_weights<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut w = vec![0.0; n];
    for _ in 0..n {
        w[rng.random_range(0..n)] += 1.0;
    }
    w
}

/// The generator for tree `index` of a forest seeded with `seed`.
pub fn tree_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index as u64))
}

/// Trains `params.n_trees` trees in parallel. Tree `i` draws its bootstrap
/// and feature subsets from its own generator, so the result is independent
/// of scheduling.
pub fn train_forest(data: &Dataset, params: &ForestParams, seed: u64) -> Result<ForestModel> {
    params.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    let tp = params.tree_params();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = tree_rng(seed, i);
            let w = bootstrap_weights(data.len(), &mut rng);
            train_tree(&data.x, &data.y, Some(&w), tp, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel {
        trees,
        n_classes: N_CLASSES,
        feature_names: data.feature_names.clone(),
        params: *params,
        seed,
    })
}
