//! Exact path-dependent TreeSHAP for the forest's class probabilities.
//!
//! For one tree the value of a coalition `S` is the expected leaf
//! distribution when features in `S` are fixed to the instance and every
//! other split is marginalized by the training covers of its children. The
//! recursion below tracks, along each root-to-leaf path, the unique split
//! features together with the fraction of cover that flows down the path when
//! the feature is absent (`zero_fraction`) and whether the instance itself
//! follows it (`one_fraction`). Extending and unwinding the permutation
//! weight polynomial at each node gives all Shapley values in
//! `O(leaves * depth^2)`.
//!
//! [`brute_force_shapley`] evaluates the same game by enumerating every
//! coalition and is used as a reference in tests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::forest::{argmax, ForestModel, NodeKind, Tree};
use crate::{Error, Result};

/// Largest feature count [`brute_force_shapley`] accepts.
pub const BRUTE_FORCE_MAX_FEATURES: usize = 12;

/// Attributions below this magnitude are folded into one waterfall entry.
pub const WATERFALL_EPSILON: f64 = 1e-12;

const NO_FEATURE: usize = usize::MAX;

#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: usize,
    zero_fraction: f64,
    one_fraction: f64,
    pweight: f64,
}

fn extend_path(path: &mut Vec<PathElement>, zero_fraction: f64, one_fraction: f64, feature: usize) {
    let depth = path.len();
    path.push(PathElement {
        feature,
        zero_fraction,
        one_fraction,
        pweight: if depth == 0 { 1.0 } else { 0.0 },
    });
    let denom = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].pweight += one_fraction * path[i].pweight * (i + 1) as f64 / denom;
        path[i].pweight = zero_fraction * path[i].pweight * (depth - i) as f64 / denom;
    }
}

fn unwind_path(path: &mut Vec<PathElement>, index: usize) {
    let depth = path.len() - 1;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let denom = (depth + 1) as f64;
    let mut next_one = path[depth].pweight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].pweight;
            path[i].pweight = next_one * denom / ((i + 1) as f64 * one);
            next_one = tmp - path[i].pweight * zero * (depth - i) as f64 / denom;
        } else {
            path[i].pweight = path[i].pweight * denom / (zero * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
    path.pop();
}

/// Total permutation weight of the path with element `index` removed.
fn unwound_path_sum(path: &[PathElement], index: usize) -> f64 {
    let depth = path.len() - 1;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let denom = (depth + 1) as f64;
    let mut next_one = path[depth].pweight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next_one * denom / ((i + 1) as f64 * one);
            total += tmp;
            next_one = path[i].pweight - tmp * zero * (depth - i) as f64 / denom;
        } else {
            total += path[i].pweight / zero * denom / (depth - i) as f64;
        }
    }
    total
}

struct ShapWalk<'a> {
    tree: &'a Tree,
    x: &'a [f64],
    phi: Vec<Vec<f64>>,
}

impl ShapWalk<'_> {
    fn recurse(
        &mut self,
        node: usize,
        parent_path: &[PathElement],
        zero_fraction: f64,
        one_fraction: f64,
        feature: usize,
    ) {
        let mut path = parent_path.to_vec();
        extend_path(&mut path, zero_fraction, one_fraction, feature);
        let nodes = self.tree.nodes();
        match &nodes[node].kind {
            NodeKind::Leaf { distribution } => {
                for i in 1..path.len() {
                    let w = unwound_path_sum(&path, i);
                    let el = path[i];
                    let scale = w * (el.one_fraction - el.zero_fraction);
                    for (p, v) in self.phi[el.feature].iter_mut().zip(distribution) {
                        *p += scale * v;
                    }
                }
            }
            &NodeKind::Split {
                feature: split,
                threshold,
                left,
                right,
            } => {
                let (hot, cold) = if self.x[split] <= threshold {
                    (left, right)
                } else {
                    (right, left)
                };
                let mut incoming_zero = 1.0;
                let mut incoming_one = 1.0;
                if let Some(k) = (1..path.len()).find(|&k| path[k].feature == split) {
                    incoming_zero = path[k].zero_fraction;
                    incoming_one = path[k].one_fraction;
                    unwind_path(&mut path, k);
                }
                let cover = nodes[node].cover;
                let frac = |child: usize| {
                    if cover > 0.0 {
                        nodes[child].cover / cover
                    } else {
                        0.0
                    }
                };
                self.recurse(hot, &path, frac(hot) * incoming_zero, incoming_one, split);
                self.recurse(cold, &path, frac(cold) * incoming_zero, 0.0, split);
            }
        }
    }
}

fn check_covers(tree: &Tree) -> Result<()> {
    let nodes = tree.nodes();
    for (i, n) in nodes.iter().enumerate() {
        if let NodeKind::Split { left, right, .. } = n.kind {
            let (l, r) = (nodes[left].cover, nodes[right].cover);
            if (n.cover - (l + r)).abs() > 1e-9 * n.cover.max(1.0) {
                return Err(Error::InconsistentCovers {
                    node: i,
                    parent: n.cover,
                    left: l,
                    right: r,
                });
            }
        }
    }
    Ok(())
}

fn n_outputs(tree: &Tree) -> usize {
    tree.nodes()
        .iter()
        .find_map(|n| match &n.kind {
            NodeKind::Leaf { distribution } => Some(distribution.len()),
            NodeKind::Split { .. } => None,
        })
        .unwrap_or(0)
}

/// Cover-weighted mixture of the leaf distributions (the empty-coalition value).
pub fn tree_expected_value(tree: &Tree) -> Vec<f64> {
    fn go(tree: &Tree, i: usize, out: &mut [f64], weight: f64) {
        let nodes = tree.nodes();
        match &nodes[i].kind {
            NodeKind::Leaf { distribution } => {
                for (o, v) in out.iter_mut().zip(distribution) {
                    *o += weight * v;
                }
            }
            NodeKind::Split { left, right, .. } => {
                let cover = nodes[i].cover;
                for &c in [left, right] {
                    let f = if cover > 0.0 { nodes[c].cover / cover } else { 0.0 };
                    go(tree, c, out, weight * f);
                }
            }
        }
    }
    let mut out = vec![0.0; n_outputs(tree)];
    go(tree, 0, &mut out, 1.0);
    out
}

/// Shapley values `phi[feature][class]` of one tree for instance `x`.
pub fn tree_shap(tree: &Tree, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_covers(tree)?;
    let mut walk = ShapWalk {
        tree,
        x,
        phi: vec![vec![0.0; n_outputs(tree)]; x.len()],
    };
    walk.recurse(0, &[], 1.0, 1.0, NO_FEATURE);
    Ok(walk.phi)
}

/// Reference Shapley values by full coalition enumeration.
pub fn brute_force_shapley(tree: &Tree, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    let used = tree.used_features();
    let m = used.len();
    if m > BRUTE_FORCE_MAX_FEATURES {
        return Err(Error::TooManyFeatures(m));
    }
    let k = n_outputs(tree);

    fn value(tree: &Tree, i: usize, x: &[f64], fixed: &dyn Fn(usize) -> bool) -> Vec<f64> {
        let nodes = tree.nodes();
        match &nodes[i].kind {
            NodeKind::Leaf { distribution } => distribution.clone(),
            &NodeKind::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if fixed(feature) {
                    let next = if x[feature] <= threshold { left } else { right };
                    value(tree, next, x, fixed)
                } else {
                    let cover = nodes[i].cover;
                    let (wl, wr) = (nodes[left].cover / cover, nodes[right].cover / cover);
                    let vl = value(tree, left, x, fixed);
                    let vr = value(tree, right, x, fixed);
                    vl.iter().zip(&vr).map(|(a, b)| wl * a + wr * b).collect()
                }
            }
        }
    }

    let values: Vec<Vec<f64>> = (0..1usize << m)
        .map(|mask| {
            let fixed = |f: usize| {
                used.iter()
                    .position(|&u| u == f)
                    .is_some_and(|p| mask & (1 << p) != 0)
            };
            value(tree, 0, x, &fixed)
        })
        .collect();

    let fact: Vec<f64> = (0..=m)
        .scan(1.0, |acc, i| {
            if i > 0 {
                *acc *= i as f64;
            }
            Some(*acc)
        })
        .collect();
    let mut phi = vec![vec![0.0; k]; x.len()];
    for (p, &feature) in used.iter().enumerate() {
        let bit = 1usize << p;
        for mask in 0..1usize << m {
            if mask & bit != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let w = fact[s] * fact[m - s - 1] / fact[m];
            for c in 0..k {
                phi[feature][c] += w * (values[mask | bit][c] - values[mask][c]);
            }
        }
    }
    Ok(phi)
}

/// Attribution of one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub instance_id: String,
    pub predicted_class: usize,
    pub probabilities: Vec<f64>,
    /// Expected output per class under path-dependent weighting.
    pub base_value: Vec<f64>,
    /// `phi[feature][class]`.
    pub phi: Vec<Vec<f64>>,
    pub feature_names: Vec<String>,
    pub feature_values: Vec<f64>,
}

impl Explanation {
    /// Classes ordered by predicted probability, highest first.
    pub fn ranked_classes(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.probabilities.len()).collect();
        order.sort_by(|&a, &b| self.probabilities[b].total_cmp(&self.probabilities[a]).then(a.cmp(&b)));
        order
    }

    /// Features of `class` ordered by `|phi|`, largest first; ties by index.
    pub fn ranked_features(&self, class: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.phi.len()).collect();
        order.sort_by(|&a, &b| self.phi[b][class].abs().total_cmp(&self.phi[a][class].abs()).then(a.cmp(&b)));
        order
    }
}

/// Averages per-tree attributions, matching the soft-vote composition of
/// [`ForestModel::predict_proba`].
pub fn forest_shap(model: &ForestModel, x: &[f64], instance_id: impl Into<String>) -> Result<Explanation> {
    let probabilities = model.predict_proba(x)?;
    let k = model.n_classes;
    let mut phi = vec![vec![0.0; k]; x.len()];
    let mut base_value = vec![0.0; k];
    for tree in &model.trees {
        let t_phi = tree_shap(tree, x)?;
        for (acc, row) in phi.iter_mut().zip(&t_phi) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        for (b, v) in base_value.iter_mut().zip(tree_expected_value(tree)) {
            *b += v;
        }
    }
    let n = model.trees.len() as f64;
    phi.iter_mut().flatten().for_each(|v| *v /= n);
    base_value.iter_mut().for_each(|v| *v /= n);
    Ok(Explanation {
        instance_id: instance_id.into(),
        predicted_class: argmax(&probabilities),
        probabilities,
        base_value,
        phi,
        feature_names: model.feature_names.clone(),
        feature_values: x.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature: usize,
    pub name: String,
    pub mean_abs_phi: f64,
}

/// Dataset-level importance per class: mean `|phi|`, ranked descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalSummary {
    pub n_instances: usize,
    /// `per_class[c]` lists every feature, most important first.
    pub per_class: Vec<Vec<RankedFeature>>,
}

impl GlobalSummary {
    pub fn top_features(&self, class: usize, k: usize) -> Vec<usize> {
        self.per_class[class].iter().take(k).map(|r| r.feature).collect()
    }
}

/// Explains every row and aggregates mean absolute attributions. The
/// per-instance explanations are returned too, in row order.
pub fn global_summary(model: &ForestModel, rows: &[Vec<f64>]) -> Result<(GlobalSummary, Vec<Explanation>)> {
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let explanations = rows
        .par_iter()
        .enumerate()
        .map(|(i, x)| forest_shap(model, x, i.to_string()))
        .collect::<Result<Vec<_>>>()?;
    let d = model.n_features();
    let k = model.n_classes;
    let mut sums = vec![vec![0.0; d]; k];
    for e in &explanations {
        for (j, row) in e.phi.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                sums[c][j] += v.abs();
            }
        }
    }
    let n = rows.len() as f64;
    let per_class = sums
        .into_iter()
        .map(|class_sums| {
            let mut ranked: Vec<RankedFeature> = class_sums
                .into_iter()
                .enumerate()
                .map(|(j, s)| RankedFeature {
                    feature: j,
                    name: model.feature_names[j].clone(),
                    mean_abs_phi: s / n,
                })
                .collect();
            ranked.sort_by(|a, b| b.mean_abs_phi.total_cmp(&a.mean_abs_phi).then(a.feature.cmp(&b.feature)));
            ranked
        })
        .collect();
    Ok((
        GlobalSummary {
            n_instances: rows.len(),
            per_class,
        },
        explanations,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfallEntry {
    /// `None` for the folded remainder of negligible attributions.
    pub feature: Option<usize>,
    pub name: String,
    pub value: Option<f64>,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waterfall {
    pub class: usize,
    pub base_value: f64,
    pub output: f64,
    pub entries: Vec<WaterfallEntry>,
}

impl Waterfall {
    /// `base_value` plus every entry.
    pub fn end_value(&self) -> f64 {
        self.base_value + self.entries.iter().map(|e| e.phi).sum::<f64>()
    }
}

/// Contributions towards `class`, largest `|phi|` first.
pub fn waterfall_for_class(expl: &Explanation, class: usize) -> Waterfall {
    let mut entries = Vec::new();
    let mut rest = 0.0;
    let mut folded = false;
    for j in expl.ranked_features(class) {
        let phi = expl.phi[j][class];
        if phi.abs() < WATERFALL_EPSILON {
            rest += phi;
            folded = true;
        } else {
            entries.push(WaterfallEntry {
                feature: Some(j),
                name: expl.feature_names[j].clone(),
                value: Some(expl.feature_values[j]),
                phi,
            });
        }
    }
    if folded {
        entries.push(WaterfallEntry {
            feature: None,
            name: "other features".into(),
            value: None,
            phi: rest,
        });
    }
    Waterfall {
        class,
        base_value: expl.base_value[class],
        output: expl.probabilities[class],
        entries,
    }
}

/// Waterfall of the predicted class for instance `x`.
pub fn local_waterfall(model: &ForestModel, x: &[f64]) -> Result<Waterfall> {
    let expl = forest_shap(model, x, "")?;
    Ok(waterfall_for_class(&expl, expl.predicted_class))
}

/// Fraction of the instance's `top_k` features (by `|phi|` for its predicted
/// class) that are also among the class's global `top_k`.
pub fn credibility_check(local: &Explanation, global: &GlobalSummary, top_k: usize) -> f64 {
    let class = local.predicted_class;
    let k = top_k.min(local.phi.len());
    if k == 0 {
        return 0.0;
    }
    let global_top = global.top_features(class, k);
    let shared = local
        .ranked_features(class)
        .into_iter()
        .take(k)
        .filter(|f| global_top.contains(f))
        .count();
    shared as f64 / k as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::Node;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_hot(c: usize, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; k];
        v[c] = 1.0;
        v
    }

    fn stump() -> Tree {
        Tree::from_nodes(
            vec![
                Node::split(100.0, 0, 0.5, 1, 2),
                Node::leaf(50.0, one_hot(0, 2)),
                Node::leaf(50.0, one_hot(1, 2)),
            ],
            1,
            2,
        )
        .unwrap()
    }

    #[test]
    fn single_leaf_has_zero_phi() {
        let t = Tree::from_nodes(vec![Node::leaf(7.0, vec![0.25, 0.75])], 3, 2).unwrap();
        let phi = tree_shap(&t, &[1.0, 2.0, 3.0]).unwrap();
        assert!(phi.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(tree_expected_value(&t), vec![0.25, 0.75]);
    }

    #[test]
    fn stump_values() {
        let t = stump();
        let phi = tree_shap(&t, &[0.0]).unwrap();
        assert_eq!(phi[0], vec![0.5, -0.5]);
        assert_eq!(tree_expected_value(&t), vec![0.5, 0.5]);
        assert_eq!(brute_force_shapley(&t, &[0.0]).unwrap()[0], vec![0.5, -0.5]);
    }

    #[test]
    fn repeated_feature_on_path() {
        // feature 0 split twice along the same path
        let nodes = vec![
            Node::split(10.0, 0, 0.5, 1, 2),
            Node::split(6.0, 0, 0.2, 3, 4),
            Node::leaf(4.0, vec![0.0, 1.0]),
            Node::leaf(2.0, vec![1.0, 0.0]),
            Node::split(4.0, 1, 0.0, 5, 6),
            Node::leaf(1.0, vec![0.5, 0.5]),
            Node::leaf(3.0, vec![0.9, 0.1]),
        ];
        let t = Tree::from_nodes(nodes, 2, 2).unwrap();
        for x in [[0.1, -1.0], [0.3, 1.0], [0.9, 0.0], [0.3, -1.0]] {
            let a = tree_shap(&t, &x).unwrap();
            let b = brute_force_shapley(&t, &x).unwrap();
            for (ra, rb) in a.iter().zip(&b) {
                for (va, vb) in ra.iter().zip(rb) {
                    assert!((va - vb).abs() < 1e-12, "{a:?} vs {b:?}");
                }
            }
        }
    }

    /// Random tree over `d` features with random covers and leaf distributions.
    pub(crate) fn random_tree(rng: &mut ChaCha8Rng, d: usize, max_depth: usize, k: usize) -> Tree {
        fn grow(rng: &mut ChaCha8Rng, nodes: &mut Vec<Node>, depth: usize, max_depth: usize, d: usize, k: usize) -> usize {
            let id = nodes.len();
            if depth == max_depth || (depth > 0 && rng.random_bool(0.3)) {
                let cover = rng.random_range(1..50) as f64;
                let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                nodes.push(Node::leaf(cover, raw.iter().map(|v| v / s).collect()));
                return id;
            }
            nodes.push(Node::split(0.0, rng.random_range(0..d), rng.random_range(-1.0..1.0), 0, 0));
            let l = grow(rng, nodes, depth + 1, max_depth, d, k);
            let r = grow(rng, nodes, depth + 1, max_depth, d, k);
            let cover = nodes[l].cover + nodes[r].cover;
            nodes[id].cover = cover;
            if let NodeKind::Split { left, right, .. } = &mut nodes[id].kind {
                *left = l;
                *right = r;
            }
            id
        }
        let mut nodes = Vec::new();
        grow(rng, &mut nodes, 0, max_depth, d, k);
        Tree::from_nodes(nodes, d, k).unwrap()
    }

    #[test]
    fn matches_brute_force_on_random_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..100 {
            let d = rng.random_range(1..=6);
            let t = random_tree(&mut rng, d, 4, 3);
            for _ in 0..3 {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.2..1.2)).collect();
                let a = tree_shap(&t, &x).unwrap();
                let b = brute_force_shapley(&t, &x).unwrap();
                for (ra, rb) in a.iter().zip(&b) {
                    for (va, vb) in ra.iter().zip(rb) {
                        assert!((va - vb).abs() <= 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn brute_force_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = random_tree(&mut rng, 20, 8, 1);
        while t.used_features().len() <= BRUTE_FORCE_MAX_FEATURES {
            t = random_tree(&mut rng, 20, 8, 1);
        }
        assert!(matches!(brute_force_shapley(&t, &[0.0; 20]), Err(Error::TooManyFeatures(_))));
    }

    #[test]
    fn credibility_scores() {
        let names: Vec<String> = (0..10).map(|i| format!("f{i}")).collect();
        let phi: Vec<Vec<f64>> = (0..10).map(|j| vec![10.0 - j as f64, 0.0]).collect();
        let local = Explanation {
            instance_id: "x".into(),
            predicted_class: 0,
            probabilities: vec![1.0, 0.0],
            base_value: vec![0.5, 0.5],
            phi,
            feature_names: names.clone(),
            feature_values: vec![0.0; 10],
        };
        let ranking = |order: &[usize]| GlobalSummary {
            n_instances: 1,
            per_class: vec![
                order
                    .iter()
                    .map(|&f| RankedFeature { feature: f, name: names[f].clone(), mean_abs_phi: 1.0 })
                    .collect(),
                vec![],
            ],
        };
        let same = ranking(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        assert_eq!(credibility_check(&local, &same, 3), 1.0);
        let rev = ranking(&[9, 8, 7, 6, 5, 4, 3, 2, 1, 0]);
        assert_eq!(credibility_check(&local, &rev, 3), 0.0);
        // local top 6 of 10 shared with global top 6 gives 1.0; with top 4
        // of local {0,1,2,3} vs global {2,3,9,8} gives 0.5
        let mixed = ranking(&[2, 3, 9, 8, 0, 1, 4, 5, 6, 7]);
        assert_eq!(credibility_check(&local, &mixed, 4), 0.5);
    }

    #[test]
    fn waterfall_folds_negligible_entries() {
        let t = stump();
        let f = ForestModel::from_trees(vec![t], vec!["a".into(), "b".into()], 2).unwrap();
        let w = local_waterfall(&f, &[0.0, 3.0]).unwrap();
        assert_eq!(w.class, 0);
        assert_eq!(w.entries.len(), 2);
        assert_eq!(w.entries[0].name, "a");
        assert_eq!(w.entries[1].feature, None);
        assert!((w.end_value() - w.output).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn forest_attributions_add_up(seed in 0u64..10_000, x in proptest::collection::vec(-1.5f64..1.5, 6)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // feature 5 is never split on
            let trees: Vec<Tree> = (0..4).map(|_| random_tree(&mut rng, 5, 5, 3)).collect();
            let names = (0..6).map(|i| format!("f{i}")).collect();
            let model = ForestModel::from_trees(trees, names, 3).unwrap();
            let e = forest_shap(&model, &x, "p").unwrap();
            for c in 0..3 {
                let total = e.base_value[c] + e.phi.iter().map(|r| r[c]).sum::<f64>();
                proptest::prop_assert!((total - e.probabilities[c]).abs() <= 1e-9);
            }
            for row in &e.phi {
                proptest::prop_assert!(row.iter().sum::<f64>().abs() <= 1e-9);
            }
            proptest::prop_assert!(e.phi[5].iter().all(|&v| v == 0.0));
        }
    }
}
