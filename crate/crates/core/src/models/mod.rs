//! Regressors behind one prediction interface: the extreme learning machine
//! and the baseline models it is compared against.

pub mod elm;
pub mod ensemble;
pub mod knn;
pub mod tree;

use serde::{Deserialize, Serialize};

pub use elm::{elm_fit, elm_hidden, elm_init, elm_solve_beta, Activation, ElmModel, ElmTrainingSet, Normalization};
pub use ensemble::{ForestParams, Gbrt, GbrtParams, RandomForest};
pub use knn::KnnModel;
pub use tree::{RegressionTree, TreeParams};

use crate::attribution::Predictor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Elm,
    WoaElm,
    Knn,
    Tree,
    Rf,
    Gbrt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Elm,
        ModelKind::WoaElm,
        ModelKind::Knn,
        ModelKind::Tree,
        ModelKind::Rf,
        ModelKind::Gbrt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Elm => "elm",
            ModelKind::WoaElm => "woa-elm",
            ModelKind::Knn => "knn",
            ModelKind::Tree => "tree",
            ModelKind::Rf => "rf",
            ModelKind::Gbrt => "gbrt",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::param(format!("unknown model kind `{s}`")))
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A fitted regressor of any supported kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Regressor {
    Elm(ElmModel),
    Knn(KnnModel),
    Tree(RegressionTree),
    Forest(RandomForest),
    Gbrt(Gbrt),
}

impl Regressor {
    pub fn predict_one(&self, x: &[f64]) -> f64 {
        match self {
            Regressor::Elm(m) => m.predict_one(x),
            Regressor::Knn(m) => m.predict_one(x),
            Regressor::Tree(m) => m.predict_one(x),
            Regressor::Forest(m) => m.predict_one(x),
            Regressor::Gbrt(m) => m.predict_one(x),
        }
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter().map(|r| self.predict_one(r)).collect()
    }
}

impl Predictor for Regressor {
    fn predict(&self, x: &[f64]) -> f64 {
        self.predict_one(x)
    }
}

impl Predictor for ElmModel {
    fn predict(&self, x: &[f64]) -> f64 {
        self.predict_one(x)
    }
}

/// Baseline hyperparameters, with the documented defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineParams {
    pub knn_k: usize,
    pub tree: TreeParams,
    pub forest: ForestParams,
    pub gbrt: GbrtParams,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            knn_k: 5,
            tree: TreeParams::default(),
            forest: ForestParams::default(),
            gbrt: GbrtParams::default(),
        }
    }
}

/// Fit one of the baseline kinds (`knn`, `tree`, `rf`, `gbrt`).
pub fn baseline_fit(kind: ModelKind, params: &BaselineParams, x: &[Vec<f64>], y: &[f64], seed: u64) -> Result<Regressor> {
    if x.is_empty() {
        return Err(Error::param("empty training set"));
    }
    Ok(match kind {
        ModelKind::Knn => Regressor::Knn(KnnModel::fit(x, y, params.knn_k)?),
        ModelKind::Tree => Regressor::Tree(RegressionTree::fit(x, y, params.tree)?),
        ModelKind::Rf => Regressor::Forest(RandomForest::fit(x, y, params.forest, seed)?),
        ModelKind::Gbrt => Regressor::Gbrt(Gbrt::fit(x, y, params.gbrt)?),
        ModelKind::Elm | ModelKind::WoaElm => {
            return Err(Error::param(format!("`{kind}` is not a baseline model")))
        }
    })
}
