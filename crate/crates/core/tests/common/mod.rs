//! Reference implementations used by the integration tests.
//!
//! Everything here is written from the definitions, without calling into the
//! library's split search, so agreement is evidence rather than tautology.

#![allow(dead_code)]

use std::collections::BTreeSet;

use gbfs::tree::Node;
use gbfs::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pending cost of a feature under a given selected set.
pub enum OracleCost {
    Uniform,
    /// `bag_of[f]` for each feature.
    Bags(Vec<usize>),
}

impl OracleCost {
    pub fn cost(&self, selected: &BTreeSet<usize>, f: usize) -> f64 {
        match self {
            OracleCost::Uniform => {
                if selected.contains(&f) {
                    0.0
                } else {
                    1.0
                }
            }
            OracleCost::Bags(bag_of) => {
                if selected.iter().any(|&s| bag_of[s] == bag_of[f]) {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }
}

fn sse(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum()
}

#[derive(Debug, Clone, Copy)]
pub struct OracleSplit {
    pub feature: usize,
    pub threshold: f64,
    pub raw: f64,
    pub net: f64,
}

/// Exhaustive split search: every feature, every midpoint between distinct
/// neighbouring values, gain from explicit sums of squares.
pub fn brute_split(
    rows: &[usize],
    g: &[f64],
    ds: &Dataset,
    cost: &dyn Fn(usize) -> f64,
    tree_used: &BTreeSet<usize>,
    mu: f64,
    min_leaf: usize,
) -> Option<OracleSplit> {
    let all: Vec<f64> = rows.iter().map(|&i| g[i]).collect();
    let base = sse(&all);
    // Gains this close count as tied, matching the library's rule.
    let tie = 1e-12 * all.iter().map(|v| v * v).sum::<f64>();
    let mut best: Option<OracleSplit> = None;
    for f in 0..ds.n_features() {
        let mut values: Vec<f64> = rows.iter().map(|&i| ds.value(i, f)).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let charge = if tree_used.contains(&f) { 0.0 } else { mu * cost(f) };
        for w in values.windows(2) {
            let threshold = w[0] + (w[1] - w[0]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&i| ds.value(i, f) <= threshold);
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let gl: Vec<f64> = l.iter().map(|&i| g[i]).collect();
            let gr: Vec<f64> = r.iter().map(|&i| g[i]).collect();
            let raw = 0.5 * (base - sse(&gl) - sse(&gr));
            let net = raw - charge;
            if best.map_or(true, |b| net > b.net + tie) {
                best = Some(OracleSplit { feature: f, threshold, raw, net });
            }
        }
    }
    best.filter(|b| b.net > 0.0)
}

#[derive(Debug, Clone)]
pub enum OracleTree {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        net: f64,
        left: Box<OracleTree>,
        right: Box<OracleTree>,
    },
}

/// Greedy depth-first tree on `g`, charging each feature once per tree.
pub fn oracle_tree(
    g: &[f64],
    ds: &Dataset,
    cost: &dyn Fn(usize) -> f64,
    mu: f64,
    depth_limit: usize,
    min_leaf: usize,
) -> OracleTree {
    fn grow(
        rows: &[usize],
        depth: usize,
        used: &mut BTreeSet<usize>,
        ctx: (&[f64], &Dataset, &dyn Fn(usize) -> f64, f64, usize, usize),
    ) -> OracleTree {
        let (g, ds, cost, mu, depth_limit, min_leaf) = ctx;
        let mean = rows.iter().map(|&i| g[i]).sum::<f64>() / rows.len() as f64;
        if depth >= depth_limit || rows.len() < 2 * min_leaf || rows.len() < 2 {
            return OracleTree::Leaf(mean);
        }
        match brute_split(rows, g, ds, cost, used, mu, min_leaf) {
            None => OracleTree::Leaf(mean),
            Some(s) => {
                used.insert(s.feature);
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| ds.value(i, s.feature) <= s.threshold);
                let left = grow(&l, depth + 1, used, ctx);
                let right = grow(&r, depth + 1, used, ctx);
                OracleTree::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    net: s.net,
                    left: Box::new(left),
                    right: Box::new(right),
                }
            }
        }
    }
    let rows: Vec<usize> = (0..ds.n_samples()).collect();
    grow(
        &rows,
        0,
        &mut BTreeSet::new(),
        (g, ds, cost, mu, depth_limit, min_leaf),
    )
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Structural match: same features and thresholds everywhere, gains and
/// leaves within `tol`.
pub fn same_tree(node: &Node, oracle: &OracleTree, tol: f64) -> Result<(), String> {
    match (node, oracle) {
        (Node::Leaf { leaf }, OracleTree::Leaf(v)) => {
            if close(*leaf, *v, tol) {
                Ok(())
            } else {
                Err(format!("leaf {leaf} vs oracle {v}"))
            }
        }
        (
            Node::Split { feature, threshold, gain, left, right, .. },
            OracleTree::Split { feature: of, threshold: ot, net, left: ol, right: or },
        ) => {
            if feature != of || threshold != ot {
                return Err(format!("split ({feature}, {threshold}) vs oracle ({of}, {ot})"));
            }
            if !close(*gain, *net, tol) {
                return Err(format!("gain {gain} vs oracle {net}"));
            }
            same_tree(left, ol, tol)?;
            same_tree(right, or, tol)
        }
        (a, b) => Err(format!("shape differs: {a:?} vs {b:?}")),
    }
}

/// Random dataset whose values sit on a 1/1024 grid, so midpoints are exact
/// and repeated values occur.
pub fn grid_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Dataset {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-64i32..=64) as f64 / 1024.0).collect())
        .collect();
    let labels: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    Dataset::from_rows(&rows, labels, None).unwrap()
}

/// Dataset with continuous `U[-1, 1]` features and labels from `sign(x0 + x1)`
/// with some flips.
pub fn continuous_dataset(seed: u64, n: usize, d: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let labels: Vec<f64> = rows
        .iter()
        .map(|r| {
            let y = if r[0] + r[1.min(d - 1)] > 0.0 { 1.0 } else { -1.0 };
            if rng.gen_bool(0.1) {
                -y
            } else {
                y
            }
        })
        .collect();
    Dataset::from_rows(&rows, labels, None).unwrap()
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; the tests only need a continuous, symmetric draw.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Central difference of `f` at `x` with step `h`.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
