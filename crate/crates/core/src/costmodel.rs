//! Feature extraction costs as a function of the already-selected set.
//!
//! A [`FeatureState`] pairs the selected set with a [`CostPolicy`]. Costs
//! only ever fall as features are selected:
//!
//! * `Uniform`: every unused feature costs 1, a used one 0.
//! * `Bags`: a feature costs 1 until any feature of its bag is used.
//! * `CustomTable`: per-feature costs, zeroed when the feature itself or a
//!   feature listing it as a group neighbour is used.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{GbfsError, Result};

/// Total assignment of features to bags.
#[derive(Debug, Clone, PartialEq)]
pub struct BagAssignment {
    bag_of: Vec<usize>,
    names: Vec<String>,
    members: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct BagFile {
    bags: BTreeMap<String, Vec<usize>>,
}

fn bag_name_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

impl BagAssignment {
    /// Bags given as `bag id -> member features`; every feature in `0..d`
    /// must appear exactly once.
    pub fn from_groups(groups: BTreeMap<String, Vec<usize>>, d: usize) -> Result<Self> {
        let mut names: Vec<String> = groups.keys().cloned().collect();
        names.sort_by(|a, b| bag_name_order(a, b));
        let mut bag_of = vec![usize::MAX; d];
        let mut members = vec![Vec::new(); names.len()];
        for (b, name) in names.iter().enumerate() {
            for &f in &groups[name] {
                if f >= d {
                    return Err(GbfsError::Bags(format!(
                        "feature {f} in bag {name:?} is out of range for {d} features"
                    )));
                }
                if bag_of[f] != usize::MAX {
                    return Err(GbfsError::Bags(format!(
                        "feature {f} assigned to both bag {:?} and bag {name:?}",
                        names[bag_of[f]]
                    )));
                }
                bag_of[f] = b;
                members[b].push(f);
            }
        }
        if let Some(f) = bag_of.iter().position(|&b| b == usize::MAX) {
            return Err(GbfsError::Bags(format!("feature {f} is not assigned to any bag")));
        }
        for m in &mut members {
            m.sort_unstable();
        }
        Ok(BagAssignment {
            bag_of,
            names,
            members,
        })
    }

    /// `bag_of[f]` is the bag of feature `f`; bag ids need not be contiguous.
    pub fn from_indices(bag_of: &[usize]) -> Result<Self> {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (f, &b) in bag_of.iter().enumerate() {
            groups.entry(b.to_string()).or_default().push(f);
        }
        BagAssignment::from_groups(groups, bag_of.len())
    }

    pub fn n_features(&self) -> usize {
        self.bag_of.len()
    }

    pub fn n_bags(&self) -> usize {
        self.names.len()
    }

    /// Dense index (`0..n_bags`) of the bag holding `feature`.
    pub fn bag_of(&self, feature: usize) -> usize {
        self.bag_of[feature]
    }

    pub fn bag_name(&self, bag: usize) -> &str {
        &self.names[bag]
    }

    pub fn members(&self, bag: usize) -> &[usize] {
        &self.members[bag]
    }

    /// Distinct bags (dense indices, ascending) that contain any of `features`.
    pub fn bags_touched<'a>(&self, features: impl IntoIterator<Item = &'a usize>) -> Vec<usize> {
        let set: BTreeSet<usize> = features.into_iter().map(|&f| self.bag_of[f]).collect();
        set.into_iter().collect()
    }

    pub fn to_json(&self) -> String {
        let bags = self
            .names
            .iter()
            .cloned()
            .zip(self.members.iter().cloned())
            .collect();
        serde_json::to_string_pretty(&BagFile { bags }).expect("bag map serializes")
    }
}

/// Reads `{"bags": {"<bag id>": [feature indices...]}}` for `d` features.
pub fn load_bags(path: impl AsRef<Path>, d: usize) -> Result<BagAssignment> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| GbfsError::io(path, e))?;
    let file: BagFile = serde_json::from_str(&text)
        .map_err(|e| GbfsError::Bags(format!("{}: {e}", path.display())))?;
    BagAssignment::from_groups(file.bags, d)
}

/// Explicit per-feature costs with optional neighbour zeroing.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    costs: Vec<f64>,
    neighbours: Vec<Vec<usize>>,
}

#[derive(Deserialize)]
struct CostTableFile {
    #[serde(default = "one")]
    default: f64,
    #[serde(default)]
    costs: BTreeMap<usize, f64>,
    #[serde(default)]
    groups: BTreeMap<usize, Vec<usize>>,
}

fn one() -> f64 {
    1.0
}

impl CostTable {
    /// `neighbours[f]` lists features that become free once `f` is selected.
    pub fn new(costs: Vec<f64>, neighbours: Vec<Vec<usize>>) -> Result<Self> {
        let d = costs.len();
        if let Some(f) = costs.iter().position(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(GbfsError::CostTable(format!(
                "cost of feature {f} is {}, expected a finite non-negative value",
                costs[f]
            )));
        }
        if neighbours.len() != d {
            return Err(GbfsError::CostTable(format!(
                "{} neighbour lists for {d} features",
                neighbours.len()
            )));
        }
        for (f, list) in neighbours.iter().enumerate() {
            if let Some(&g) = list.iter().find(|&&g| g >= d) {
                return Err(GbfsError::CostTable(format!(
                    "neighbour {g} of feature {f} is out of range for {d} features"
                )));
            }
        }
        Ok(CostTable { costs, neighbours })
    }

    pub fn n_features(&self) -> usize {
        self.costs.len()
    }

    pub fn base_cost(&self, feature: usize) -> f64 {
        self.costs[feature]
    }
}

/// Reads `{"default": c, "costs": {"<f>": c_f, ...}, "groups": {"<f>": [g, ...]}}`.
/// Features absent from `costs` take `default` (1 when omitted).
pub fn load_cost_table(path: impl AsRef<Path>, d: usize) -> Result<CostTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| GbfsError::io(path, e))?;
    let file: CostTableFile = serde_json::from_str(&text)
        .map_err(|e| GbfsError::CostTable(format!("{}: {e}", path.display())))?;
    let mut costs = vec![file.default; d];
    for (f, c) in file.costs {
        if f >= d {
            return Err(GbfsError::CostTable(format!(
                "feature {f} out of range for {d} features"
            )));
        }
        costs[f] = c;
    }
    let mut neighbours = vec![Vec::new(); d];
    for (f, list) in file.groups {
        if f >= d {
            return Err(GbfsError::CostTable(format!(
                "feature {f} out of range for {d} features"
            )));
        }
        neighbours[f] = list;
    }
    CostTable::new(costs, neighbours)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum CostPolicy {
    #[default]
    Uniform,
    Bags(BagAssignment),
    CustomTable(CostTable),
}

impl CostPolicy {
    fn base_cost(&self, feature: usize) -> f64 {
        match self {
            CostPolicy::Uniform | CostPolicy::Bags(_) => 1.0,
            CostPolicy::CustomTable(table) => table.base_cost(feature),
        }
    }

    fn dimension(&self) -> Option<usize> {
        match self {
            CostPolicy::Uniform => None,
            CostPolicy::Bags(bags) => Some(bags.n_features()),
            CostPolicy::CustomTable(table) => Some(table.n_features()),
        }
    }
}

/// Selected feature set plus the policy pricing the remaining features.
///
/// A value type: [`FeatureState::mark_used`] returns a new state.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureState {
    policy: Arc<CostPolicy>,
    selected: BTreeSet<usize>,
    free: Vec<bool>,
}

impl FeatureState {
    pub fn new(n_features: usize, policy: CostPolicy) -> Result<Self> {
        if let Some(d) = policy.dimension() {
            if d != n_features {
                return Err(GbfsError::DimensionMismatch {
                    expected: n_features,
                    found: d,
                });
            }
        }
        Ok(FeatureState {
            policy: Arc::new(policy),
            selected: BTreeSet::new(),
            free: vec![false; n_features],
        })
    }

    pub fn uniform(n_features: usize) -> Self {
        FeatureState::new(n_features, CostPolicy::Uniform).expect("uniform policy fits any d")
    }

    pub fn n_features(&self) -> usize {
        self.free.len()
    }

    pub fn policy(&self) -> &CostPolicy {
        &self.policy
    }

    /// The selected set, ascending.
    pub fn selected(&self) -> &BTreeSet<usize> {
        &self.selected
    }

    fn check(&self, feature: usize) -> Result<()> {
        if feature >= self.n_features() {
            return Err(GbfsError::FeatureOutOfRange {
                feature,
                n_features: self.n_features(),
            });
        }
        Ok(())
    }

    /// Pending cost of extracting `feature` given the selected set.
    pub fn cost_of(&self, feature: usize) -> Result<f64> {
        self.check(feature)?;
        Ok(self.cost_unchecked(feature))
    }

    pub(crate) fn cost_unchecked(&self, feature: usize) -> f64 {
        if self.free[feature] {
            0.0
        } else {
            self.policy.base_cost(feature)
        }
    }

    /// State with `features` added to the selected set.
    pub fn mark_used<I>(&self, features: I) -> Result<FeatureState>
    where
        I: IntoIterator<Item = usize>,
    {
        let mut next = self.clone();
        for f in features {
            next.check(f)?;
            if !next.selected.insert(f) {
                continue;
            }
            next.free[f] = true;
            match &*next.policy {
                CostPolicy::Uniform => {}
                CostPolicy::Bags(bags) => {
                    for &g in bags.members(bags.bag_of(f)) {
                        next.free[g] = true;
                    }
                }
                CostPolicy::CustomTable(table) => {
                    for &g in &table.neighbours[f] {
                        next.free[g] = true;
                    }
                }
            }
        }
        Ok(next)
    }
}
