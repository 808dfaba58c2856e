//! The boosting loop with embedded feature selection.
//!
//! Each iteration fits a tree to the log-loss negative gradient, charging
//! `mu · cost(f)` for features the model has not paid for yet, adds the tree
//! with a constant step `learning_rate`, and marks the tree's features as
//! selected so later trees reuse them for free.

use std::collections::BTreeSet;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::costmodel::FeatureState;
use crate::data::Dataset;
use crate::error::{GbfsError, Result};
use crate::tree::{fit_cart, fit_tree, RegressionTree, DEFAULT_DEPTH, DEFAULT_MIN_LEAF};

/// Consecutive single-leaf trees after which training stops.
pub const MAX_CONSTANT_STREAK: usize = 25;

/// `|y·H|` beyond which the gradient is returned as exactly `0` or `y`.
const SATURATION: f64 = 35.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbfsConfig {
    /// Charge per newly extracted feature.
    pub mu: f64,
    pub iterations: usize,
    /// Constant step size applied to every tree.
    pub learning_rate: f64,
    pub depth: usize,
    pub min_leaf: usize,
    /// Recorded for reproducibility; training itself draws no random numbers.
    pub seed: u64,
    /// Rescale each tree to unit norm on the training set before adding it.
    pub normalize_trees: bool,
}

impl Default for GbfsConfig {
    fn default() -> Self {
        GbfsConfig {
            mu: 1.0,
            iterations: 2000,
            learning_rate: 0.1,
            depth: DEFAULT_DEPTH,
            min_leaf: DEFAULT_MIN_LEAF,
            seed: 13,
            normalize_trees: false,
        }
    }
}

impl GbfsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GbfsError::InvalidArgument(msg));
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad(format!("mu must be non-negative, got {}", self.mu));
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!(
                "learning rate must lie in (0, 1], got {}",
                self.learning_rate
            ));
        }
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.min_leaf == 0 {
            return bad("min leaf size must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    /// Total training log-loss after adding this tree; unknown for
    /// hand-assembled ensembles.
    pub train_logloss: Option<f64>,
    /// Features first used by this tree, ascending.
    pub newly_selected: Vec<usize>,
    /// `½·Σ(g_i − h(x_i))² + Σ charged` of the tree as fit.
    pub penalized_impurity: Option<f64>,
}

/// Trees combined with a common step size: `H(x) = Σ_t α·h_t(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    trees: Vec<RegressionTree>,
    learning_rate: f64,
    n_features: usize,
    feature_names: Option<Vec<String>>,
    selected: Vec<usize>,
    history: Vec<IterationRecord>,
}

/// Features in order of first use across `trees`, ties by index, along with
/// each tree's first-use set.
fn first_use_order(trees: &[RegressionTree]) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut seen = BTreeSet::new();
    let mut order = Vec::new();
    let mut per_tree = Vec::with_capacity(trees.len());
    for tree in trees {
        let fresh: Vec<usize> = tree
            .features()
            .into_iter()
            .filter(|f| !seen.contains(f))
            .collect();
        seen.extend(fresh.iter().copied());
        order.extend(fresh.iter().copied());
        per_tree.push(fresh);
    }
    (order, per_tree)
}

impl Ensemble {
    /// Assembles and validates an ensemble. `history` must have one record
    /// per tree whose `newly_selected` matches the trees.
    pub fn new(
        trees: Vec<RegressionTree>,
        learning_rate: f64,
        n_features: usize,
        feature_names: Option<Vec<String>>,
        history: Vec<IterationRecord>,
    ) -> Result<Self> {
        let invalid = |msg: String| Err(GbfsError::InvalidModel(msg));
        if !(learning_rate > 0.0 && learning_rate <= 1.0) {
            return invalid(format!("learning rate {learning_rate} outside (0, 1]"));
        }
        if n_features == 0 {
            return invalid("model has no features".into());
        }
        if let Some(names) = &feature_names {
            if names.len() != n_features {
                return invalid(format!(
                    "{} feature names for {n_features} features",
                    names.len()
                ));
            }
        }
        for (t, tree) in trees.iter().enumerate() {
            tree.validate(Some(n_features))
                .map_err(|e| GbfsError::InvalidModel(format!("tree {t}: {e}")))?;
        }
        if history.len() != trees.len() {
            return invalid(format!(
                "history has {} records for {} trees",
                history.len(),
                trees.len()
            ));
        }
        let (selected, per_tree) = first_use_order(&trees);
        for (t, (rec, fresh)) in history.iter().zip(&per_tree).enumerate() {
            if rec.iteration != t + 1 {
                return invalid(format!("history record {t} has iteration {}", rec.iteration));
            }
            if &rec.newly_selected != fresh {
                return invalid(format!(
                    "history at iteration {} lists new features {:?}, trees give {:?}",
                    t + 1,
                    rec.newly_selected,
                    fresh
                ));
            }
        }
        Ok(Ensemble {
            trees,
            learning_rate,
            n_features,
            feature_names,
            selected,
            history,
        })
    }

    /// Ensemble from bare trees; history records carry no loss values.
    pub fn from_trees(
        trees: Vec<RegressionTree>,
        learning_rate: f64,
        n_features: usize,
    ) -> Result<Self> {
        let (_, per_tree) = first_use_order(&trees);
        let history = per_tree
            .into_iter()
            .enumerate()
            .map(|(t, fresh)| IterationRecord {
                iteration: t + 1,
                train_logloss: None,
                newly_selected: fresh,
                penalized_impurity: None,
            })
            .collect();
        Ensemble::new(trees, learning_rate, n_features, None, history)
    }

    fn empty(learning_rate: f64, n_features: usize, feature_names: Option<Vec<String>>) -> Self {
        Ensemble {
            trees: Vec::new(),
            learning_rate,
            n_features,
            feature_names,
            selected: Vec::new(),
            history: Vec::new(),
        }
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn history(&self) -> &[IterationRecord] {
        &self.history
    }

    /// Selected features ordered by the iteration that first used them.
    pub fn selected_features(&self) -> &[usize] {
        &self.selected
    }

    /// The first `t` trees (all of them if `t` exceeds the length).
    pub fn truncated(&self, t: usize) -> Ensemble {
        let t = t.min(self.trees.len());
        let history = self.history[..t].to_vec();
        let selected = history
            .iter()
            .flat_map(|r| r.newly_selected.iter().copied())
            .collect();
        Ensemble {
            trees: self.trees[..t].to_vec(),
            learning_rate: self.learning_rate,
            n_features: self.n_features,
            feature_names: self.feature_names.clone(),
            selected,
            history,
        }
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.n_features {
            return Err(GbfsError::DimensionMismatch {
                expected: self.n_features,
                found,
            });
        }
        Ok(())
    }

    /// `Σ_t α·h_t(x)`, accumulated tree by tree in training order.
    pub fn predict_margin(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        let mut margin = 0.0;
        for tree in &self.trees {
            margin += self.learning_rate * tree.predict(x);
        }
        Ok(margin)
    }

    /// `+1` when the margin is non-negative, else `-1`.
    pub fn classify(&self, x: &[f64]) -> Result<f64> {
        Ok(sign_label(self.predict_margin(x)?))
    }

    /// Margins for every sample of `ds`.
    pub fn margins(&self, ds: &Dataset) -> Result<Vec<f64>> {
        self.check_dim(ds.n_features())?;
        let mut margins = vec![0.0; ds.n_samples()];
        for tree in &self.trees {
            for (i, m) in margins.iter_mut().enumerate() {
                *m += self.learning_rate * tree.predict_sample(ds, i);
            }
        }
        Ok(margins)
    }

    /// Fraction of `ds` misclassified.
    pub fn error_rate(&self, ds: &Dataset) -> Result<f64> {
        let margins = self.margins(ds)?;
        Ok(error_rate_from_margins(ds.labels(), &margins))
    }
}

pub fn predict_margin(model: &Ensemble, x: &[f64]) -> Result<f64> {
    model.predict_margin(x)
}

pub fn classify(model: &Ensemble, x: &[f64]) -> Result<f64> {
    model.classify(x)
}

pub fn selected_features(model: &Ensemble) -> Vec<usize> {
    model.selected_features().to_vec()
}

/// Sign with zero mapped to `+1`.
pub fn sign_label(margin: f64) -> f64 {
    if margin >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn error_rate_from_margins(labels: &[f64], margins: &[f64]) -> f64 {
    let wrong = labels
        .iter()
        .zip(margins)
        .filter(|(&y, &m)| sign_label(m) != y)
        .count();
    wrong as f64 / labels.len() as f64
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `Σ_i log(1 + exp(−y_i·H_i))`.
pub fn log_loss(labels: &[f64], margins: &[f64]) -> f64 {
    labels.iter().zip(margins).map(|(&y, &h)| softplus(-y * h)).sum()
}

fn gradient_one(y: f64, h: f64) -> f64 {
    let m = y * h;
    if m > SATURATION {
        0.0
    } else if m < -SATURATION {
        y
    } else {
        y / (1.0 + m.exp())
    }
}

/// `g_i = y_i / (1 + exp(y_i·H_i))`, the negative derivative of the
/// log-loss with respect to the margin.
pub fn negative_gradient(labels: &[f64], margins: &[f64]) -> Result<Vec<f64>> {
    if labels.len() != margins.len() {
        return Err(GbfsError::DimensionMismatch {
            expected: labels.len(),
            found: margins.len(),
        });
    }
    if let Some(i) = margins.iter().position(|m| m.is_nan()) {
        return Err(GbfsError::InvalidArgument(format!("NaN margin at sample {i}")));
    }
    Ok(labels
        .iter()
        .zip(margins)
        .map(|(&y, &h)| gradient_one(y, h))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TreeFitter {
    Penalized,
    Plain,
}

/// A training run that can be advanced in steps and resumed from a model.
pub struct BoostingRun<'a> {
    ds: &'a Dataset,
    config: GbfsConfig,
    fitter: TreeFitter,
    state: FeatureState,
    margins: Vec<f64>,
    ensemble: Ensemble,
    constant_streak: usize,
}

impl<'a> BoostingRun<'a> {
    /// Starts from `H = 0` with the selected set of `state`.
    pub fn new(ds: &'a Dataset, config: GbfsConfig, state: FeatureState) -> Result<Self> {
        config.validate()?;
        if state.n_features() != ds.n_features() {
            return Err(GbfsError::DimensionMismatch {
                expected: ds.n_features(),
                found: state.n_features(),
            });
        }
        let ensemble = Ensemble::empty(
            config.learning_rate,
            ds.n_features(),
            ds.feature_names().map(<[String]>::to_vec),
        );
        Ok(BoostingRun {
            ds,
            config,
            fitter: TreeFitter::Penalized,
            state,
            margins: vec![0.0; ds.n_samples()],
            ensemble,
            constant_streak: 0,
        })
    }

    /// Plain gradient boosting: unpenalized CART trees, `mu` ignored.
    pub fn unpenalized(ds: &'a Dataset, config: GbfsConfig) -> Result<Self> {
        let mut run = BoostingRun::new(ds, config, FeatureState::uniform(ds.n_features()))?;
        run.fitter = TreeFitter::Plain;
        Ok(run)
    }

    /// Continues training `model`. `initial_state` is the state the model's
    /// run started from; margins and the selected set are rebuilt from the
    /// trees so the continuation matches an uninterrupted run bit for bit.
    pub fn resume(
        ds: &'a Dataset,
        config: GbfsConfig,
        initial_state: FeatureState,
        model: Ensemble,
    ) -> Result<Self> {
        if model.learning_rate != config.learning_rate {
            return Err(GbfsError::InvalidArgument(format!(
                "model learning rate {} differs from config {}",
                model.learning_rate, config.learning_rate
            )));
        }
        let mut run = BoostingRun::new(ds, config, initial_state)?;
        run.margins = model.margins(ds)?;
        run.state = run.state.mark_used(model.selected.iter().copied())?;
        run.constant_streak = model.trees.iter().rev().take_while(|t| t.is_leaf()).count();
        run.ensemble = model;
        Ok(run)
    }

    pub fn state(&self) -> &FeatureState {
        &self.state
    }

    pub fn margins(&self) -> &[f64] {
        &self.margins
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.ensemble
    }

    pub fn into_ensemble(self) -> Ensemble {
        self.ensemble
    }

    /// True once the constant-tree guard has fired.
    pub fn is_stalled(&self) -> bool {
        self.constant_streak >= MAX_CONSTANT_STREAK
    }

    /// Adds one tree. Returns `false` without training if the run stalled.
    pub fn step(&mut self) -> Result<bool> {
        if self.is_stalled() {
            return Ok(false);
        }
        let ds = self.ds;
        let labels = ds.labels();
        let iteration = self.ensemble.len() + 1;
        let alpha = self.config.learning_rate;
        let gradients = negative_gradient(labels, &self.margins)?;

        let mut tree = match self.fitter {
            TreeFitter::Penalized => fit_tree(
                &gradients,
                ds,
                &self.state,
                self.config.mu,
                self.config.depth,
                self.config.min_leaf,
            )?,
            TreeFitter::Plain => fit_cart(&gradients, ds, self.config.depth, self.config.min_leaf)?,
        };
        if self.config.normalize_trees {
            tree = tree.normalized(ds);
        }

        let loss_before = log_loss(labels, &self.margins);
        let mut residual = 0.0;
        for (i, m) in self.margins.iter_mut().enumerate() {
            let h = tree.predict_sample(ds, i);
            residual += (gradients[i] - h).powi(2);
            *m += alpha * h;
            if !m.is_finite() {
                return Err(GbfsError::NonFiniteMargin { iteration, sample: i });
            }
        }
        let loss = log_loss(labels, &self.margins);
        if !tree.is_leaf() && alpha <= 0.5 && loss > loss_before {
            warn!("iteration {iteration}: training log-loss rose from {loss_before} to {loss}");
        }

        let features = tree.features();
        let already: BTreeSet<usize> = self.ensemble.selected.iter().copied().collect();
        let newly: Vec<usize> = features.difference(&already).copied().collect();
        self.state = self.state.mark_used(features.iter().copied())?;

        self.constant_streak = if tree.is_leaf() {
            self.constant_streak + 1
        } else {
            0
        };
        self.ensemble.history.push(IterationRecord {
            iteration,
            train_logloss: Some(loss),
            newly_selected: newly.clone(),
            penalized_impurity: Some(0.5 * residual + tree.total_charged()),
        });
        self.ensemble.selected.extend(newly);
        self.ensemble.trees.push(tree);
        if self.is_stalled() {
            info!("stopping after {MAX_CONSTANT_STREAK} consecutive single-leaf trees at iteration {iteration}");
        }
        Ok(true)
    }

    /// Runs up to `iterations` more steps; returns how many were taken.
    pub fn advance(&mut self, iterations: usize) -> Result<usize> {
        for done in 0..iterations {
            if !self.step()? {
                return Ok(done);
            }
        }
        Ok(iterations)
    }
}

/// Trains `config.iterations` trees (fewer if the constant-tree guard fires).
pub fn train(ds: &Dataset, config: &GbfsConfig, state: FeatureState) -> Result<Ensemble> {
    let mut run = BoostingRun::new(ds, config.clone(), state)?;
    run.advance(config.iterations)?;
    Ok(run.into_ensemble())
}

/// Plain gradient-boosted trees with the same loop and no feature charge.
pub fn train_unpenalized(ds: &Dataset, config: &GbfsConfig) -> Result<Ensemble> {
    let mut run = BoostingRun::unpenalized(ds, config.clone())?;
    run.advance(config.iterations)?;
    Ok(run.into_ensemble())
}
