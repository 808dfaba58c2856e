//! Evaluation of the capped-L1 boosting objective for a trained ensemble.

use serde::{Deserialize, Serialize};

use crate::boosting::{log_loss, Ensemble};
use crate::data::Dataset;
use crate::error::{GbfsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub logloss: f64,
    /// `α·T`, the L1 norm of the tree weights.
    pub l1_beta: f64,
    /// `μ·Σ_f q_ε(w_f)`.
    pub capped_penalty: f64,
    pub feature_weights: Vec<f64>,
    /// `Σ_f q_ε(w_f) / ε`; equals the selected count once every used
    /// feature carries weight at least ε.
    pub implied_feature_count: f64,
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(GbfsError::InvalidArgument(format!(
            "eps must be positive, got {eps}"
        )));
    }
    Ok(())
}

/// `Σ_i min(|w_i|, eps)`.
pub fn capped_l1(w: &[f64], eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(w.iter().map(|x| x.abs().min(eps)).sum())
}

/// `w_f = α · #{trees splitting on f}`.
pub fn feature_weights(model: &Ensemble) -> Vec<f64> {
    let mut counts = vec![0usize; model.n_features()];
    for tree in model.trees() {
        for f in tree.features() {
            counts[f] += 1;
        }
    }
    counts
        .into_iter()
        .map(|c| model.learning_rate() * c as f64)
        .collect()
}

pub fn gbfs_objective(model: &Ensemble, ds: &Dataset, mu: f64, eps: f64) -> Result<ObjectiveReport> {
    check_eps(eps)?;
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(GbfsError::InvalidArgument(format!(
            "mu must be non-negative, got {mu}"
        )));
    }
    let margins = model.margins(ds)?;
    let weights = feature_weights(model);
    let capped = capped_l1(&weights, eps)?;
    Ok(ObjectiveReport {
        logloss: log_loss(ds.labels(), &margins),
        l1_beta: model.learning_rate() * model.len() as f64,
        capped_penalty: mu * capped,
        feature_weights: weights,
        implied_feature_count: capped / eps,
    })
}
