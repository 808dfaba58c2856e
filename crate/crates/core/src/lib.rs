//! Gradient boosted feature selection.
//!
//! Boosted regression trees whose split search charges a cost the first time
//! a feature is used, so the ensemble learns a nonlinear classifier and a
//! small feature set in one pass. An L1-regularized logistic regression
//! baseline is included for comparison.

pub mod baseline;
pub mod boosting;
pub mod cli;
pub mod costmodel;
pub mod data;
pub mod error;
pub mod objective;
pub mod persist;
pub mod tree;

pub use baseline::{l1lr_predict, l1lr_train, lambda_max, soft_threshold, LinearModel};
pub use boosting::{
    classify, negative_gradient, predict_margin, selected_features, train, train_unpenalized,
    BoostingRun, Ensemble, GbfsConfig, IterationRecord,
};
pub use costmodel::{load_bags, BagAssignment, CostPolicy, CostTable, FeatureState};
pub use data::{load_csv, load_libsvm, split, Dataset, LabelColumn};
pub use error::{GbfsError, Result};
pub use objective::{capped_l1, feature_weights, gbfs_objective, ObjectiveReport};
pub use persist::{load_model, save_model, SavedModel};
pub use tree::{best_split, fit_tree, RegressionTree, SplitDecision};
