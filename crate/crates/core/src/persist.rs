//! JSON model files.
//!
//! Both model kinds share one envelope: `{"format_version": 1, "kind": ...}`.
//! Loading rebuilds the model through its validating constructor, so a
//! corrupt file fails with the invariant it breaks.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::LinearModel;
use crate::boosting::{Ensemble, IterationRecord};
use crate::error::{GbfsError, Result};
use crate::tree::{Node, RegressionTree};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    Gbfs(Ensemble),
    Linear(LinearModel),
}

impl SavedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            SavedModel::Gbfs(_) => "gbfs",
            SavedModel::Linear(_) => "linear",
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            SavedModel::Gbfs(m) => m.n_features(),
            SavedModel::Linear(m) => m.n_features(),
        }
    }

    pub fn margin(&self, x: &[f64]) -> Result<f64> {
        match self {
            SavedModel::Gbfs(m) => m.predict_margin(x),
            SavedModel::Linear(m) => m.margin(x),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TreeDoc {
    max_depth: usize,
    root: Node,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GbfsDoc {
    format_version: u32,
    learning_rate: f64,
    n_features: usize,
    #[serde(default)]
    feature_names: Option<Vec<String>>,
    selected: Vec<usize>,
    trees: Vec<TreeDoc>,
    history: Vec<IterationRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearDoc {
    format_version: u32,
    weights: Vec<f64>,
    bias: f64,
    lambda: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Envelope {
    Gbfs(GbfsDoc),
    Linear(LinearDoc),
}

fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(GbfsError::InvalidModel(format!(
            "unsupported format_version {found}, expected {FORMAT_VERSION}"
        )));
    }
    Ok(())
}

pub fn to_json(model: &SavedModel) -> String {
    let envelope = match model {
        SavedModel::Gbfs(m) => Envelope::Gbfs(GbfsDoc {
            format_version: FORMAT_VERSION,
            learning_rate: m.learning_rate(),
            n_features: m.n_features(),
            feature_names: m.feature_names().map(<[String]>::to_vec),
            selected: m.selected_features().to_vec(),
            trees: m
                .trees()
                .iter()
                .map(|t| TreeDoc {
                    max_depth: t.depth_limit(),
                    root: t.root().clone(),
                })
                .collect(),
            history: m.history().to_vec(),
        }),
        SavedModel::Linear(m) => Envelope::Linear(LinearDoc {
            format_version: FORMAT_VERSION,
            weights: m.weights.clone(),
            bias: m.bias,
            lambda: m.lambda,
        }),
    };
    serde_json::to_string_pretty(&envelope).expect("model serializes")
}

pub fn from_json(text: &str) -> Result<SavedModel> {
    let envelope: Envelope = serde_json::from_str(text)
        .map_err(|e| GbfsError::InvalidModel(format!("malformed model file: {e}")))?;
    match envelope {
        Envelope::Gbfs(doc) => {
            check_version(doc.format_version)?;
            let trees = doc
                .trees
                .into_iter()
                .enumerate()
                .map(|(t, td)| {
                    RegressionTree::new(td.root, td.max_depth)
                        .map_err(|e| GbfsError::InvalidModel(format!("tree {t}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let model = Ensemble::new(
                trees,
                doc.learning_rate,
                doc.n_features,
                doc.feature_names,
                doc.history,
            )?;
            if model.selected_features() != doc.selected.as_slice() {
                return Err(GbfsError::InvalidModel(format!(
                    "selected features {:?} disagree with the trees, which use {:?}",
                    doc.selected,
                    model.selected_features()
                )));
            }
            Ok(SavedModel::Gbfs(model))
        }
        Envelope::Linear(doc) => {
            check_version(doc.format_version)?;
            Ok(SavedModel::Linear(LinearModel::new(
                doc.weights,
                doc.bias,
                doc.lambda,
            )?))
        }
    }
}

pub fn save_model(path: impl AsRef<Path>, model: &SavedModel) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_json(model) + "\n").map_err(|e| GbfsError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| GbfsError::io(path, e))?;
    from_json(&text)
}
