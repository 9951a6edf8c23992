//! Extreme learning machine: a single hidden layer with random input weights
//! and biases, and output weights solved by minimum-norm least squares.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Singular values below this fraction of the largest are treated as zero.
pub const SVD_RELATIVE_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-u).exp()),
            Activation::Tanh => u.tanh(),
        }
    }
}

/// Input weights (`l × n`) and hidden biases (`l`), drawn i.i.d. uniform on
/// [-1, 1]. The weight matrix is filled row by row, then the biases.
pub fn elm_init(n_inputs: usize, hidden: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut r = rng::rng(seed);
    let omega = DMatrix::from_row_iterator(
        hidden,
        n_inputs,
        (0..hidden * n_inputs).map(|_| r.random_range(-1.0..=1.0)).collect::<Vec<f64>>(),
    );
    let bias = DVector::from_iterator(hidden, (0..hidden).map(|_| r.random_range(-1.0..=1.0)));
    (omega, bias)
}

/// Hidden-layer output `H[i][j] = g(ω_j · x_i + b_j)` for the rows of `x`.
pub fn elm_hidden(x: &DMatrix<f64>, omega: &DMatrix<f64>, bias: &DVector<f64>, act: Activation) -> Result<DMatrix<f64>> {
    if x.ncols() != omega.ncols() || omega.nrows() != bias.len() {
        return Err(Error::param(format!(
            "shape mismatch: inputs {}x{}, weights {}x{}, bias {}",
            x.nrows(),
            x.ncols(),
            omega.nrows(),
            omega.ncols(),
            bias.len()
        )));
    }
    let mut h = x * omega.transpose();
    for (j, mut col) in h.column_iter_mut().enumerate() {
        let b = bias[j];
        col.apply(|v| *v = act.apply(*v + b));
    }
    Ok(h)
}

/// Minimum-norm least-squares solution of `H β ≈ T` through the singular
/// value decomposition of `H`.
pub fn elm_solve_beta(h: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if h.nrows() != t.nrows() {
        return Err(Error::param("hidden output and targets differ in row count"));
    }
    if h.nrows() == 0 {
        return Err(Error::param("no training rows"));
    }
    if h.iter().chain(t.iter()).any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite value in hidden output or targets"));
    }
    let svd = h.clone().svd(true, true);
    let (u, v_t) = match (&svd.u, &svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::numeric("SVD failed")),
    };
    let s_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = SVD_RELATIVE_CUTOFF * s_max;
    let mut ut_t = u.transpose() * t;
    for (i, mut row) in ut_t.row_iter_mut().enumerate() {
        let s = svd.singular_values[i];
        let inv = if s > cutoff { 1.0 / s } else { 0.0 };
        row *= inv;
    }
    Ok(v_t.transpose() * ut_t)
}

/// Per-feature z-scoring and target min-max scaling learned at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub tmin: f64,
    pub tmax: f64,
}

impl Normalization {
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let (means, sds) = crate::fusion::column_stats(x);
        let tmin = y.iter().copied().fold(f64::INFINITY, f64::min);
        let tmax = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(tmax > tmin) {
            return Err(Error::data("target is constant; cannot scale it"));
        }
        Ok(Self { means, sds, tmin, tmax })
    }

    pub fn features(&self, x: &[Vec<f64>]) -> DMatrix<f64> {
        let n = self.means.len();
        DMatrix::from_fn(x.len(), n, |i, j| (x[i][j] - self.means[j]) / self.sds[j])
    }

    pub fn scale_target(&self, y: f64) -> f64 {
        (y - self.tmin) / (self.tmax - self.tmin)
    }

    pub fn unscale_target(&self, s: f64) -> f64 {
        self.tmin + s * (self.tmax - self.tmin)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElmModel {
    /// `l × n` input weights.
    pub omega: DMatrix<f64>,
    /// `l` hidden biases.
    pub bias: DVector<f64>,
    /// `l × 1` output weights.
    pub beta: DMatrix<f64>,
    pub activation: Activation,
    pub norm: Normalization,
}

impl ElmModel {
    pub fn hidden_nodes(&self) -> usize {
        self.bias.len()
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        if x.iter().any(|r| r.len() != self.norm.means.len()) {
            return Err(Error::param(format!(
                "model expects {} features per row",
                self.norm.means.len()
            )));
        }
        let h = elm_hidden(&self.norm.features(x), &self.omega, &self.bias, self.activation)?;
        Ok((h * &self.beta).column(0).iter().map(|&s| self.norm.unscale_target(s)).collect())
    }

    pub fn predict_one(&self, x: &[f64]) -> f64 {
        let mut out = 0.0;
        for j in 0..self.bias.len() {
            let mut u = self.bias[j];
            for (k, v) in x.iter().enumerate() {
                u += self.omega[(j, k)] * (v - self.norm.means[k]) / self.norm.sds[k];
            }
            out += self.beta[(j, 0)] * self.activation.apply(u);
        }
        self.norm.unscale_target(out)
    }
}

/// Normalized training data for repeated output-weight solves with different
/// hidden layers, as needed by the weight search.
#[derive(Debug, Clone)]
pub struct ElmTrainingSet {
    pub norm: Normalization,
    pub x: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub activation: Activation,
}

impl ElmTrainingSet {
    pub fn new(x: &[Vec<f64>], y: &[f64], activation: Activation) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::param("training rows and targets must be non-empty and aligned"));
        }
        let norm = Normalization::fit(x, y)?;
        let xm = norm.features(x);
        let t = DMatrix::from_iterator(y.len(), 1, y.iter().map(|&v| norm.scale_target(v)));
        Ok(Self {
            norm,
            x: xm,
            t,
            activation,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.x.ncols()
    }

    /// Solve the output weights for a hidden layer and return them with the
    /// training RMSE on the scaled target.
    pub fn solve(&self, omega: &DMatrix<f64>, bias: &DVector<f64>) -> Result<(DMatrix<f64>, f64)> {
        let h = elm_hidden(&self.x, omega, bias, self.activation)?;
        let beta = elm_solve_beta(&h, &self.t)?;
        let resid = &h * &beta - &self.t;
        let rmse = (resid.norm_squared() / self.t.nrows() as f64).sqrt();
        Ok((beta, rmse))
    }

    pub fn model(&self, omega: DMatrix<f64>, bias: DVector<f64>) -> Result<ElmModel> {
        let (beta, _) = self.solve(&omega, &bias)?;
        Ok(ElmModel {
            omega,
            bias,
            beta,
            activation: self.activation,
            norm: self.norm.clone(),
        })
    }
}

/// Plain ELM fit with randomly drawn hidden weights.
pub fn elm_fit(x: &[Vec<f64>], y: &[f64], hidden: usize, activation: Activation, seed: u64) -> Result<ElmModel> {
    if hidden == 0 {
        return Err(Error::param("ELM needs at least one hidden node"));
    }
    let set = ElmTrainingSet::new(x, y, activation)?;
    if x.len() < hidden {
        log::warn!("ELM with {hidden} hidden nodes fitted on only {} rows", x.len());
    }
    let (omega, bias) = elm_init(set.n_inputs(), hidden, seed);
    set.model(omega, bias)
}
