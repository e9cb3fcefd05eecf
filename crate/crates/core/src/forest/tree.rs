//! CART classification trees with Gini splits.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::MaxFeatures;
use crate::{Error, Result};

/// Gini impurity `1 - sum p_c^2` of (possibly weighted) class counts.
pub fn gini(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total) * (c / total)).sum::<f64>()
}

/// Weighted impurity `w * gini = w - sum c^2 / w`.
fn weighted_gini(counts: &[f64], w: f64) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    w - counts.iter().map(|c| c * c).sum::<f64>() / w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeKind {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { distribution: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Weighted count of training samples reaching this node.
    pub cover: f64,
    /// Gini impurity of the training samples at this node.
    pub impurity: f64,
    #[serde(flatten)]
    pub kind: NodeKind,
}

impl Node {
    pub fn leaf(cover: f64, distribution: Vec<f64>) -> Self {
        Node {
            cover,
            impurity: gini(&distribution),
            kind: NodeKind::Leaf { distribution },
        }
    }

    pub fn split(cover: f64, feature: usize, threshold: f64, left: usize, right: usize) -> Self {
        Node {
            cover,
            impurity: 0.0,
            kind: NodeKind::Split {
                feature,
                threshold,
                left,
                right,
            },
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }
}

/// A tree stored as a node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Builds a tree from raw nodes, checking structure, leaf distributions and
    /// cover consistency (`cover(parent) = cover(left) + cover(right)`).
    pub fn from_nodes(nodes: Vec<Node>, n_features: usize, n_classes: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::MalformedTree("no nodes".into()));
        }
        let mut parents = vec![0usize; nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            if node.cover.is_nan() || node.cover < 0.0 {
                return Err(Error::MalformedTree(format!("node {i} has negative cover")));
            }
            match &node.kind {
                NodeKind::Leaf { distribution } => {
                    if distribution.len() != n_classes {
                        return Err(Error::MalformedTree(format!(
                            "leaf {i} has {} classes, expected {n_classes}",
                            distribution.len()
                        )));
                    }
                    let sum: f64 = distribution.iter().sum();
                    if distribution.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                        return Err(Error::MalformedTree(format!("leaf {i} is not a distribution")));
                    }
                }
                NodeKind::Split {
                    feature,
                    left,
                    right,
                    threshold,
                } => {
                    if *feature >= n_features {
                        return Err(Error::MalformedTree(format!(
                            "node {i} splits on feature {feature} of {n_features}"
                        )));
                    }
                    if !threshold.is_finite() {
                        return Err(Error::MalformedTree(format!("node {i} has a non-finite threshold")));
                    }
                    for &child in [left, right] {
                        if child <= i || child >= nodes.len() {
                            return Err(Error::MalformedTree(format!(
                                "node {i} has invalid child {child}"
                            )));
                        }
                        parents[child] += 1;
                    }
                    let (l, r) = (nodes[*left].cover, nodes[*right].cover);
                    if (node.cover - (l + r)).abs() > 1e-9 * node.cover.max(1.0) {
                        return Err(Error::InconsistentCovers {
                            node: i,
                            parent: node.cover,
                            left: l,
                            right: r,
                        });
                    }
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err(Error::MalformedTree("nodes do not form a single tree".into()));
        }
        Ok(Tree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    /// Index of the leaf `x` falls into.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i].kind {
                NodeKind::Leaf { .. } => return i,
                NodeKind::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> &[f64] {
        match &self.nodes[self.leaf_index(x)].kind {
            NodeKind::Leaf { distribution } => distribution,
            NodeKind::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    /// Distinct features used by any split, ascending.
    pub fn used_features(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Split { feature, .. } => Some(feature),
                NodeKind::Leaf { .. } => None,
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i].kind {
                NodeKind::Leaf { .. } => 0,
                NodeKind::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Cover-weighted Gini decrease per feature, unnormalized.
    pub fn impurity_decrease(&self, n_features: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_features];
        for node in &self.nodes {
            if let NodeKind::Split {
                feature, left, right, ..
            } = node.kind
            {
                let (l, r) = (&self.nodes[left], &self.nodes[right]);
                let dec = node.cover * node.impurity - l.cover * l.impurity - r.cover * r.impurity;
                out[feature] += dec.max(0.0);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_features: MaxFeatures,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub n_classes: usize,
}

struct Builder<'a, R> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    weights: &'a [f64],
    params: TreeParams,
    n_features: usize,
    n_try: usize,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl<R: Rng> Builder<'_, R> {
    fn class_counts(&self, rows: &[usize]) -> Vec<f64> {
        let mut counts = vec![0.0; self.params.n_classes];
        for &r in rows {
            counts[self.y[r]] += self.weights[r];
        }
        counts
    }

    fn build(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let counts = self.class_counts(rows);
        let cover: f64 = counts.iter().sum();
        let impurity = gini(&counts);
        let id = self.nodes.len();
        let distribution: Vec<f64> = counts.iter().map(|c| c / cover).collect();
        self.nodes.push(Node {
            cover,
            impurity,
            kind: NodeKind::Leaf { distribution },
        });

        let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
        let too_small = rows.len() < 2 * self.params.min_samples_leaf;
        let too_deep = self.params.max_depth.is_some_and(|d| depth >= d);
        if pure || too_small || too_deep {
            return id;
        }
        let Some(best) = self.best_split(rows, &counts, cover) else {
            return id;
        };

        // Partition in place; row order inside each side stays ascending.
        rows.sort_by_key(|&r| (self.x[r][best.feature] > best.threshold, r));
        let n_left = rows.partition_point(|&r| self.x[r][best.feature] <= best.threshold);
        let (left_rows, right_rows) = rows.split_at_mut(n_left);
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        self.nodes[id].kind = NodeKind::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    /// Draws features in random order, skipping ones constant at this node,
    /// until `n_try` usable features are found; then scans them in ascending
    /// index order so ties resolve to the lowest feature and threshold.
    fn best_split(&mut self, rows: &[usize], counts: &[f64], cover: f64) -> Option<BestSplit> {
        let mut order: Vec<usize> = (0..self.n_features).collect();
        order.shuffle(&mut *self.rng);
        let mut candidates = Vec::with_capacity(self.n_try);
        for f in order {
            let first = self.x[rows[0]][f];
            if rows.iter().any(|&r| self.x[r][f] != first) {
                candidates.push(f);
                if candidates.len() == self.n_try {
                    break;
                }
            }
        }
        candidates.sort_unstable();

        let parent = weighted_gini(counts, cover);
        let min_leaf = self.params.min_samples_leaf;
        let mut best: Option<BestSplit> = None;
        let mut sorted: Vec<usize> = rows.to_vec();
        let mut left = vec![0.0; counts.len()];
        for f in candidates {
            sorted.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            left.iter_mut().for_each(|c| *c = 0.0);
            let mut w_left = 0.0;
            for i in 0..sorted.len() - 1 {
                let r = sorted[i];
                left[self.y[r]] += self.weights[r];
                w_left += self.weights[r];
                let (lo, hi) = (self.x[r][f], self.x[sorted[i + 1]][f]);
                if lo == hi || i + 1 < min_leaf || sorted.len() - i - 1 < min_leaf {
                    continue;
                }
                let w_right = cover - w_left;
                let right_sq: f64 = counts.iter().zip(&left).map(|(c, l)| (c - l) * (c - l)).sum();
                let score = weighted_gini(&left, w_left) + (w_right - right_sq / w_right);
                if best.as_ref().is_none_or(|b| score < b.score) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best.filter(|b| parent - b.score > 1e-12 * cover)
    }
}

/// Grows one tree on rows with positive weight. `weights` are the bootstrap
/// multiplicities (all ones without resampling).
pub fn train_tree<R: Rng>(
    x: &[Vec<f64>],
    y: &[usize],
    weights: Option<&[f64]>,
    params: TreeParams,
    rng: &mut R,
) -> Result<Tree> {
    if x.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let n_features = x[0].len();
    if let Some(row) = x.iter().find(|r| r.len() != n_features) {
        return Err(Error::FeatureCountMismatch {
            expected: n_features,
            got: row.len(),
        });
    }
    if let Some(&label) = y.iter().find(|&&l| l >= params.n_classes) {
        return Err(Error::LabelOutOfRange {
            label,
            n_classes: params.n_classes,
        });
    }
    let ones;
    let weights = match weights {
        Some(w) => {
            if w.len() != x.len() {
                return Err(Error::LengthMismatch(x.len(), w.len()));
            }
            w
        }
        None => {
            ones = vec![1.0; x.len()];
            &ones
        }
    };
    let mut rows: Vec<usize> = (0..x.len()).filter(|&i| weights[i] > 0.0).collect();
    if rows.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    let mut builder = Builder {
        x,
        y,
        weights,
        params,
        n_features,
        n_try: params.max_features.count(n_features),
        rng,
        nodes: Vec::new(),
    };
    builder.build(&mut rows, 0);
    let nodes = builder.nodes;
    Ok(Tree { nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(rule: MaxFeatures) -> TreeParams {
        TreeParams {
            max_features: rule,
            min_samples_leaf: 1,
            max_depth: None,
            n_classes: 8,
        }
    }

    #[test]
    fn gini_values() {
        assert_eq!(gini(&[2.0, 2.0]), 0.5);
        assert_eq!(gini(&[4.0, 0.0]), 0.0);
        assert!((gini(&[1.0, 1.0, 1.0]) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn pure_labels_give_single_leaf() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, -(i as f64)]).collect();
        let y = vec![3; 10];
        let t = train_tree(&x, &y, None, params(MaxFeatures::All), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(t.nodes().len(), 1);
        let mut want = vec![0.0; 8];
        want[3] = 1.0;
        assert_eq!(t.predict_proba(&[0.0, 0.0]), want.as_slice());
        assert_eq!(t.root().cover, 10.0);
    }

    /// Brute force over every midpoint of the single feature.
    fn brute_best_threshold(x: &[f64], y: &[usize]) -> f64 {
        let mut vals: Vec<f64> = x.to_vec();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        let mut best = (f64::INFINITY, f64::NAN);
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let mut l = [0.0; 8];
            let mut r = [0.0; 8];
            for (xi, &yi) in x.iter().zip(y) {
                if *xi <= t { l[yi] += 1.0 } else { r[yi] += 1.0 }
            }
            let nl: f64 = l.iter().sum();
            let nr: f64 = r.iter().sum();
            let score = nl * gini(&l) + nr * gini(&r);
            if score < best.0 {
                best = (score, t);
            }
        }
        best.1
    }

    #[test]
    fn root_threshold_is_midpoint() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let y = vec![0, 0, 1, 1];
        assert_eq!(brute_best_threshold(&xs, &y), 2.5);
        let x: Vec<Vec<f64>> = xs.iter().map(|v| vec![*v]).collect();
        let t = train_tree(&x, &y, None, params(MaxFeatures::All), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        match t.root().kind {
            NodeKind::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 2.5);
            }
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn root_threshold_matches_brute_force_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let n = rng.random_range(4..40);
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64).collect();
            let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            if y.iter().all(|&l| l == y[0]) || xs.iter().all(|&v| v == xs[0]) {
                continue;
            }
            let want = brute_best_threshold(&xs, &y);
            let x: Vec<Vec<f64>> = xs.iter().map(|v| vec![*v]).collect();
            let t = train_tree(&x, &y, None, params(MaxFeatures::All), &mut rng).unwrap();
            if let NodeKind::Split { threshold, .. } = t.root().kind {
                assert_eq!(threshold, want);
            }
        }
    }

    #[test]
    fn covers_are_consistent_and_leaves_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..5).map(|_| rng.random::<f64>()).collect())
            .collect();
        let y: Vec<usize> = x.iter().map(|r| ((r[0] * 3.0) as usize + (r[1] > 0.5) as usize) % 8).collect();
        let w: Vec<f64> = (0..200).map(|i| (i % 3) as f64).collect();
        let t = train_tree(&x, &y, Some(&w), params(MaxFeatures::Sqrt), &mut rng).unwrap();
        assert_eq!(t.root().cover, w.iter().sum::<f64>());
        let rebuilt = Tree::from_nodes(t.nodes().to_vec(), 5, 8).unwrap();
        assert_eq!(rebuilt, t);
        for n in t.nodes() {
            if let NodeKind::Leaf { distribution } = &n.kind {
                assert!((distribution.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn min_samples_leaf_respected() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
        let y: Vec<usize> = (0..30).map(|i| i % 2).collect();
        let p = TreeParams { min_samples_leaf: 5, ..params(MaxFeatures::All) };
        let t = train_tree(&x, &y, None, p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for n in t.nodes() {
            if n.is_leaf() {
                assert!(n.cover >= 5.0);
            }
        }
    }

    #[test]
    fn max_depth_respected() {
        let x: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64]).collect();
        let y: Vec<usize> = (0..64).map(|i| i % 2).collect();
        let p = TreeParams { max_depth: Some(3), ..params(MaxFeatures::All) };
        let t = train_tree(&x, &y, None, p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(t.depth() <= 3);
    }

    #[test]
    fn errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            train_tree(&[], &[], None, params(MaxFeatures::All), &mut rng),
            Err(Error::EmptyTrainSet)
        ));
        assert!(matches!(
            train_tree(&[vec![1.0]], &[9], None, params(MaxFeatures::All), &mut rng),
            Err(Error::LabelOutOfRange { label: 9, .. })
        ));
    }

    #[test]
    fn inconsistent_covers_rejected() {
        let nodes = vec![
            Node::split(10.0, 0, 0.5, 1, 2),
            Node::leaf(4.0, vec![1.0, 0.0]),
            Node::leaf(5.0, vec![0.0, 1.0]),
        ];
        assert!(matches!(
            Tree::from_nodes(nodes, 1, 2),
            Err(Error::InconsistentCovers { node: 0, .. })
        ));
    }
}
