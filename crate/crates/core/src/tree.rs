//! Greedy regression trees fit to gradients, with a feature-extraction charge.
//!
//! A split on feature `f` at threshold `t` sends `x[f] <= t` left. Its raw
//! gain is the drop in half the squared error of the gradients,
//! `½·SSE(parent) − ½·SSE(left) − ½·SSE(right)`, and its net gain subtracts
//! `mu · cost(f)` the first time `f` appears in the tree. Split search is
//! exact: every midpoint between consecutive distinct values is scored.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costmodel::FeatureState;
use crate::data::Dataset;
use crate::error::{GbfsError, Result};

/// Default maximum tree depth.
pub const DEFAULT_DEPTH: usize = 4;
/// Default minimum number of samples per leaf.
pub const DEFAULT_MIN_LEAF: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitDecision {
    pub feature: usize,
    pub threshold: f64,
    /// Raw gain minus `charged`; always positive.
    pub gain: f64,
    /// `mu · cost` newly incurred by this split (0 for paid-for features).
    pub charged: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        gain: f64,
        charged: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        leaf: f64,
    },
}

impl Node {
    fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Node)) {
        f(self);
        if let Node::Split { left, right, .. } = self {
            left.visit(f);
            right.visit(f);
        }
    }

    fn scale_leaves(&mut self, factor: f64) {
        match self {
            Node::Leaf { leaf } => *leaf *= factor,
            Node::Split { left, right, .. } => {
                left.scale_leaves(factor);
                right.scale_leaves(factor);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    root: Node,
    depth_limit: usize,
}

impl RegressionTree {
    /// Wraps a node tree, checking depth, finiteness, and positive split gains.
    pub fn new(root: Node, depth_limit: usize) -> Result<Self> {
        let tree = RegressionTree { root, depth_limit };
        tree.validate(None)?;
        Ok(tree)
    }

    pub fn leaf(value: f64) -> Self {
        RegressionTree {
            root: Node::Leaf { leaf: value },
            depth_limit: 1,
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn depth_limit(&self) -> usize {
        self.depth_limit
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.root, Node::Leaf { .. })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { leaf } => return *leaf,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    /// Prediction for sample `i` of a column-major dataset.
    pub fn predict_sample(&self, ds: &Dataset, i: usize) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { leaf } => return *leaf,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if ds.value(i, *feature) <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    /// Features used by any internal node.
    pub fn features(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.root.visit(&mut |n| {
            if let Node::Split { feature, .. } = n {
                out.insert(*feature);
            }
        });
        out
    }

    /// Internal nodes in depth-first (left before right) order.
    pub fn splits(&self) -> Vec<SplitDecision> {
        let mut out = Vec::new();
        self.root.visit(&mut |n| {
            if let Node::Split {
                feature,
                threshold,
                gain,
                charged,
                ..
            } = n
            {
                out.push(SplitDecision {
                    feature: *feature,
                    threshold: *threshold,
                    gain: *gain,
                    charged: *charged,
                });
            }
        });
        out
    }

    pub fn leaf_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.root.visit(&mut |n| {
            if let Node::Leaf { leaf } = n {
                out.push(*leaf);
            }
        });
        out
    }

    /// Total extraction charge paid by this tree.
    pub fn total_charged(&self) -> f64 {
        self.splits().iter().map(|s| s.charged).sum()
    }

    /// Checks structural invariants; with `n_features`, also feature ranges.
    pub fn validate(&self, n_features: Option<usize>) -> Result<()> {
        let depth = self.depth();
        if depth > self.depth_limit {
            return Err(GbfsError::InvalidModel(format!(
                "tree depth {depth} exceeds depth limit {}",
                self.depth_limit
            )));
        }
        let mut problem = None;
        self.root.visit(&mut |n| {
            if problem.is_some() {
                return;
            }
            match n {
                Node::Leaf { leaf } if !leaf.is_finite() => {
                    problem = Some(format!("non-finite leaf value {leaf}"));
                }
                Node::Split {
                    feature,
                    threshold,
                    gain,
                    charged,
                    ..
                } => {
                    if !threshold.is_finite() {
                        problem = Some(format!("non-finite threshold on feature {feature}"));
                    } else if !(*gain > 0.0) || !gain.is_finite() {
                        problem = Some(format!("split gain {gain} is not positive"));
                    } else if !(*charged >= 0.0) || !charged.is_finite() {
                        problem = Some(format!("split charge {charged} is negative"));
                    } else if let Some(d) = n_features {
                        if *feature >= d {
                            problem = Some(format!(
                                "split feature {feature} out of range for {d} features"
                            ));
                        }
                    }
                }
                Node::Leaf { .. } => {}
            }
        });
        match problem {
            Some(msg) => Err(GbfsError::InvalidModel(msg)),
            None => Ok(()),
        }
    }

    /// Rescales leaves so the tree's predictions on `ds` have unit squared norm.
    /// Trees predicting zero everywhere are returned unchanged.
    pub fn normalized(&self, ds: &Dataset) -> RegressionTree {
        let norm_sq: f64 = (0..ds.n_samples())
            .map(|i| self.predict_sample(ds, i).powi(2))
            .sum();
        let mut out = self.clone();
        if norm_sq > 0.0 {
            out.root.scale_leaves(1.0 / norm_sq.sqrt());
        }
        out
    }
}

pub fn tree_predict(tree: &RegressionTree, x: &[f64]) -> f64 {
    tree.predict(x)
}

pub fn tree_features(tree: &RegressionTree) -> BTreeSet<usize> {
    tree.features()
}

/// Gains closer than this fraction of the node's `Σ g²` count as tied.
///
/// Two features that induce the same partition sum the same gradients in
/// different orders, so their gains can differ in the last bits.
pub const TIE_TOLERANCE: f64 = 1e-12;

fn beats(candidate: f64, incumbent: f64, tie: f64) -> bool {
    candidate > incumbent + tie
}

/// Best threshold over value-sorted `(value, gradient)` pairs by raw gain,
/// lowest threshold winning ties. Both children keep at least `min_leaf`
/// rows.
fn scan_sorted(pairs: &[(f64, f64)], total: f64, min_leaf: usize, tie: f64) -> Option<(f64, f64)> {
    let n = pairs.len();
    let nf = n as f64;
    let mut left_sum = 0.0;
    let mut best: Option<(f64, f64)> = None;
    for k in 1..n {
        left_sum += pairs[k - 1].1;
        if k < min_leaf || n - k < min_leaf {
            continue;
        }
        let (lo, hi) = (pairs[k - 1].0, pairs[k].0);
        if lo == hi {
            continue;
        }
        let (nl, nr) = (k as f64, (n - k) as f64);
        let diff = left_sum / nl - (total - left_sum) / nr;
        let gain = 0.5 * (nl * nr / nf) * diff * diff;
        if best.map_or(true, |(_, g)| beats(gain, g, tie)) {
            let mut threshold = lo + (hi - lo) / 2.0;
            if threshold >= hi {
                threshold = lo;
            }
            best = Some((threshold, gain));
        }
    }
    best
}

/// Per-feature best `(threshold, raw gain)`, in feature order, plus the
/// absolute tie tolerance for this node.
///
/// Rows are visited in (value, sample index) order. Large nodes filter the
/// dataset's presorted order; small ones sort directly. Both give the same
/// sequence, so results do not depend on the strategy.
fn scan_all_features(
    rows: &[usize],
    gradients: &[f64],
    ds: &Dataset,
    min_leaf: usize,
) -> (Vec<Option<(f64, f64)>>, f64) {
    let first = gradients[rows[0]];
    if rows.iter().all(|&i| gradients[i] == first) {
        return (vec![None; ds.n_features()], 0.0);
    }
    let total: f64 = rows.iter().map(|&i| gradients[i]).sum();
    let tie = TIE_TOLERANCE * rows.iter().map(|&i| gradients[i] * gradients[i]).sum::<f64>();
    let n = ds.n_samples();
    let presorted = rows.len() * 16 >= n;
    let mut in_node = Vec::new();
    if presorted {
        in_node = vec![false; n];
        for &i in rows {
            in_node[i] = true;
        }
    }
    let in_node = &in_node;
    let scans = (0..ds.n_features())
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(rows.len()),
            |pairs: &mut Vec<(f64, f64)>, f| {
                let column = ds.column(f);
                pairs.clear();
                if presorted {
                    pairs.extend(
                        ds.sorted_order(f)
                            .iter()
                            .map(|&i| i as usize)
                            .filter(|&i| in_node[i])
                            .map(|i| (column[i], gradients[i])),
                    );
                } else {
                    let mut order = rows.to_vec();
                    order.sort_by(|&a, &b| column[a].total_cmp(&column[b]).then(a.cmp(&b)));
                    pairs.extend(order.into_iter().map(|i| (column[i], gradients[i])));
                }
                scan_sorted(pairs, total, min_leaf, tie)
            },
        )
        .collect();
    (scans, tie)
}

fn check_inputs(rows: &[usize], gradients: &[f64], ds: &Dataset) -> Result<()> {
    let n = ds.n_samples();
    if gradients.len() != n {
        return Err(GbfsError::DimensionMismatch {
            expected: n,
            found: gradients.len(),
        });
    }
    if let Some(&i) = rows.iter().find(|&&i| i >= n) {
        return Err(GbfsError::InvalidArgument(format!(
            "row {i} out of range for {n} samples"
        )));
    }
    let mut seen = vec![false; n];
    for &i in rows {
        if std::mem::replace(&mut seen[i], true) {
            return Err(GbfsError::InvalidArgument(format!("row {i} listed twice")));
        }
    }
    if let Some(i) = gradients.iter().position(|g| !g.is_finite()) {
        return Err(GbfsError::InvalidArgument(format!(
            "non-finite gradient at sample {i}"
        )));
    }
    Ok(())
}

fn check_penalty(state: &FeatureState, ds: &Dataset, mu: f64) -> Result<()> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(GbfsError::InvalidArgument(format!(
            "mu must be non-negative, got {mu}"
        )));
    }
    if state.n_features() != ds.n_features() {
        return Err(GbfsError::DimensionMismatch {
            expected: ds.n_features(),
            found: state.n_features(),
        });
    }
    Ok(())
}

/// Best penalized split of `rows`, or `None` when no split has positive net
/// gain. Features in `tree_used` were already charged in the current tree.
pub fn best_split(
    rows: &[usize],
    gradients: &[f64],
    ds: &Dataset,
    state: &FeatureState,
    tree_used: &BTreeSet<usize>,
    mu: f64,
) -> Result<Option<SplitDecision>> {
    if rows.len() < 2 {
        return Err(GbfsError::InvalidArgument(format!(
            "split search needs at least 2 rows, got {}",
            rows.len()
        )));
    }
    check_inputs(rows, gradients, ds)?;
    check_penalty(state, ds, mu)?;
    Ok(penalized_split(rows, gradients, ds, state, tree_used, mu, 1))
}

fn penalized_split(
    rows: &[usize],
    gradients: &[f64],
    ds: &Dataset,
    state: &FeatureState,
    tree_used: &BTreeSet<usize>,
    mu: f64,
    min_leaf: usize,
) -> Option<SplitDecision> {
    let mut best: Option<SplitDecision> = None;
    let (scans, tie) = scan_all_features(rows, gradients, ds, min_leaf);
    for (feature, scan) in scans.into_iter().enumerate() {
        let Some((threshold, raw)) = scan else {
            continue;
        };
        let charged = if tree_used.contains(&feature) {
            0.0
        } else {
            mu * state.cost_unchecked(feature)
        };
        let gain = raw - charged;
        if best.map_or(true, |b| beats(gain, b.gain, tie)) {
            best = Some(SplitDecision {
                feature,
                threshold,
                gain,
                charged,
            });
        }
    }
    best.filter(|b| b.gain > 0.0)
}

fn mean_at(rows: &[usize], values: &[f64]) -> f64 {
    rows.iter().map(|&i| values[i]).sum::<f64>() / rows.len() as f64
}

fn partition(rows: &[usize], ds: &Dataset, feature: usize, threshold: f64) -> (Vec<usize>, Vec<usize>) {
    let column = ds.column(feature);
    rows.iter().partition(|&&i| column[i] <= threshold)
}

fn check_shape(depth_limit: usize, min_leaf: usize) -> Result<()> {
    if depth_limit == 0 {
        return Err(GbfsError::InvalidArgument("depth limit must be at least 1".into()));
    }
    if min_leaf == 0 {
        return Err(GbfsError::InvalidArgument("min leaf size must be at least 1".into()));
    }
    Ok(())
}

struct PenalizedGrower<'a> {
    gradients: &'a [f64],
    ds: &'a Dataset,
    state: &'a FeatureState,
    mu: f64,
    depth_limit: usize,
    min_leaf: usize,
}

impl PenalizedGrower<'_> {
    fn grow(&self, rows: &[usize], depth: usize, tree_used: &mut BTreeSet<usize>) -> Node {
        let leaf = || Node::Leaf {
            leaf: mean_at(rows, self.gradients),
        };
        if depth >= self.depth_limit || rows.len() < 2 * self.min_leaf || rows.len() < 2 {
            return leaf();
        }
        let Some(split) = penalized_split(
            rows,
            self.gradients,
            self.ds,
            self.state,
            tree_used,
            self.mu,
            self.min_leaf,
        ) else {
            return leaf();
        };
        tree_used.insert(split.feature);
        let (l, r) = partition(rows, self.ds, split.feature, split.threshold);
        let left = self.grow(&l, depth + 1, tree_used);
        let right = self.grow(&r, depth + 1, tree_used);
        Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            gain: split.gain,
            charged: split.charged,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

/// Grows a tree depth-first on the gradients, charging `mu · cost(f)` the
/// first time each feature appears in the tree. Leaves hold gradient means.
pub fn fit_tree(
    gradients: &[f64],
    ds: &Dataset,
    state: &FeatureState,
    mu: f64,
    depth_limit: usize,
    min_leaf: usize,
) -> Result<RegressionTree> {
    let rows: Vec<usize> = (0..ds.n_samples()).collect();
    check_inputs(&rows, gradients, ds)?;
    check_penalty(state, ds, mu)?;
    check_shape(depth_limit, min_leaf)?;
    let grower = PenalizedGrower {
        gradients,
        ds,
        state,
        mu,
        depth_limit,
        min_leaf,
    };
    let root = grower.grow(&rows, 0, &mut BTreeSet::new());
    Ok(RegressionTree { root, depth_limit })
}

fn grow_cart(
    rows: &[usize],
    gradients: &[f64],
    ds: &Dataset,
    depth: usize,
    depth_limit: usize,
    min_leaf: usize,
) -> Node {
    let leaf = Node::Leaf {
        leaf: mean_at(rows, gradients),
    };
    if depth >= depth_limit || rows.len() < 2 * min_leaf || rows.len() < 2 {
        return leaf;
    }
    let mut best: Option<(usize, f64, f64)> = None;
    let (scans, tie) = scan_all_features(rows, gradients, ds, min_leaf);
    for (feature, scan) in scans.into_iter().enumerate() {
        if let Some((threshold, gain)) = scan {
            if best.map_or(true, |(_, _, g)| beats(gain, g, tie)) {
                best = Some((feature, threshold, gain));
            }
        }
    }
    match best {
        Some((feature, threshold, gain)) if gain > 0.0 => {
            let (l, r) = partition(rows, ds, feature, threshold);
            Node::Split {
                feature,
                threshold,
                gain,
                charged: 0.0,
                left: Box::new(grow_cart(&l, gradients, ds, depth + 1, depth_limit, min_leaf)),
                right: Box::new(grow_cart(&r, gradients, ds, depth + 1, depth_limit, min_leaf)),
            }
        }
        _ => leaf,
    }
}

/// Plain least-squares CART on the gradients, with no feature charge.
pub fn fit_cart(
    gradients: &[f64],
    ds: &Dataset,
    depth_limit: usize,
    min_leaf: usize,
) -> Result<RegressionTree> {
    let rows: Vec<usize> = (0..ds.n_samples()).collect();
    check_inputs(&rows, gradients, ds)?;
    check_shape(depth_limit, min_leaf)?;
    let root = grow_cart(&rows, gradients, ds, 0, depth_limit, min_leaf);
    Ok(RegressionTree { root, depth_limit })
}
