//! Bagged random forests and gradient-boosted regression trees.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{RegressionTree, TreeParams};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means `ceil(M / 3)`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: None,
            bootstrap: true,
            max_depth: 8,
            min_leaf: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<RegressionTree>,
}

impl RandomForest {
    /// Each tree draws from its own stream derived from `(seed, tree index)`,
    /// so trees can be grown in parallel without changing the result.
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: ForestParams, seed: u64) -> Result<Self> {
        if params.n_trees == 0 {
            return Err(Error::param("forest needs at least one tree"));
        }
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::param("forest: empty or misaligned training set"));
        }
        let m = x[0].len();
        let tree_params = TreeParams {
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
            max_features: Some(params.max_features.unwrap_or(m.div_ceil(3)).clamp(1, m)),
        };
        let n = x.len();
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut r = rng::rng(rng::derive_seed(seed, &[t as u64]));
                let idx = if params.bootstrap {
                    (0..n).map(|_| r.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                RegressionTree::fit_rows(x, y, idx, tree_params, Some(&mut r))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { trees })
    }

    pub fn predict_one(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_one(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbrtParams {
    pub n_trees: usize,
    pub shrinkage: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for GbrtParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            shrinkage: 0.1,
            max_depth: 3,
            min_leaf: 2,
        }
    }
}

/// Least-squares gradient boosting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gbrt {
    pub init: f64,
    pub shrinkage: f64,
    pub trees: Vec<RegressionTree>,
    /// Training mean squared error after each round (index 0 = constant model).
    pub train_loss: Vec<f64>,
}

impl Gbrt {
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: GbrtParams) -> Result<Self> {
        if !(params.shrinkage > 0.0 && params.shrinkage <= 1.0) {
            return Err(Error::param("gbrt shrinkage must lie in (0, 1]"));
        }
        if params.n_trees == 0 || params.max_depth == 0 {
            return Err(Error::param("gbrt needs at least one tree of depth >= 1"));
        }
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::param("gbrt: empty or misaligned training set"));
        }
        let n = y.len() as f64;
        let init = y.iter().sum::<f64>() / n;
        let mut pred = vec![init; y.len()];
        let mse = |p: &[f64]| p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let mut train_loss = vec![mse(&pred)];
        let tree_params = TreeParams {
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
            max_features: None,
        };
        let mut trees = Vec::with_capacity(params.n_trees);
        for _ in 0..params.n_trees {
            let resid: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
            let tree = RegressionTree::fit(x, &resid, tree_params)?;
            for (p, row) in pred.iter_mut().zip(x) {
                *p += params.shrinkage * tree.predict_one(row);
            }
            train_loss.push(mse(&pred));
            trees.push(tree);
        }
        Ok(Self {
            init,
            shrinkage: params.shrinkage,
            trees,
            train_loss,
        })
    }

    pub fn predict_one(&self, x: &[f64]) -> f64 {
        self.init + self.shrinkage * self.trees.iter().map(|t| t.predict_one(x)).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noisy(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut r = rng::rng(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| r.random_range(-2.0..2.0)).collect())
            .collect();
        let y = x
            .iter()
            .map(|v: &Vec<f64>| v[0].sin() * 3.0 + v[1] + r.random_range(-0.5..0.5))
            .collect();
        (x, y)
    }

    #[test]
    fn single_unbagged_tree_matches_plain_tree() {
        let (x, y) = noisy(60, 1);
        let p = ForestParams {
            n_trees: 1,
            bootstrap: false,
            max_features: Some(3),
            ..Default::default()
        };
        let f = RandomForest::fit(&x, &y, p, 9).unwrap();
        let t = RegressionTree::fit(&x, &y, TreeParams::default()).unwrap();
        for row in &x {
            assert_eq!(f.predict_one(row), t.predict_one(row));
        }
    }

    #[test]
    fn forest_is_seed_deterministic() {
        let (x, y) = noisy(50, 2);
        let a = RandomForest::fit(&x, &y, ForestParams { n_trees: 10, ..Default::default() }, 5).unwrap();
        let b = RandomForest::fit(&x, &y, ForestParams { n_trees: 10, ..Default::default() }, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn boosting_loss_never_increases() {
        let (x, y) = noisy(80, 3);
        let g = Gbrt::fit(&x, &y, GbrtParams::default()).unwrap();
        assert_eq!(g.train_loss.len(), 201);
        for w in g.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(Gbrt::fit(&x, &y, GbrtParams { shrinkage: 0.0, ..Default::default() }).is_err());
    }
}
