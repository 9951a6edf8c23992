use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{column_stats, standardize};

/// k-nearest-neighbor regression on z-scored features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<f64>,
}

impl KnnModel {
    pub fn fit(x: &[Vec<f64>], y: &[f64], k: usize) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::param("knn: training set empty or misaligned"));
        }
        if k == 0 || k > x.len() {
            return Err(Error::param(format!("knn: k = {k} must lie in 1..={}", x.len())));
        }
        let (means, sds) = column_stats(x);
        Ok(Self {
            k,
            train_x: standardize(x, &means, &sds),
            means,
            sds,
            train_y: y.to_vec(),
        })
    }

    /// Mean target of the `k` nearest training rows; equal distances go to the
    /// lower row index.
    pub fn predict_one(&self, x: &[f64]) -> f64 {
        let z: Vec<f64> = x
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        let mut d: Vec<(f64, usize)> = self
            .train_x
            .iter()
            .enumerate()
            .map(|(i, t)| (t.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d[..self.k].iter().map(|&(_, i)| self.train_y[i]).sum::<f64>() / self.k as f64
    }
}
