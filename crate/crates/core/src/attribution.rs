//! Exact Shapley attributions by coalition enumeration.
//!
//! The value of a coalition `S` is the model output on a hybrid input that
//! takes the coordinates in `S` from the explained instance and the rest from
//! a background vector. All `2^M` coalition values are computed once and
//! shared by the main-effect and pairwise-interaction sums.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Largest feature count accepted for main effects.
pub const MAX_SHAPLEY_FEATURES: usize = 20;
/// Largest feature count accepted for pairwise interactions.
pub const MAX_INTERACTION_FEATURES: usize = 12;

/// A deterministic, side-effect-free scalar model.
pub trait Predictor: Sync {
    fn predict(&self, x: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for F {
    fn predict(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub base_value: f64,
    pub phi: Vec<f64>,
    pub prediction: f64,
}

/// Coalition values `v(S)` for every bitmask `S` over `M` features.
fn coalition_values(p: &dyn Predictor, x: &[f64], background: &[f64]) -> Result<Vec<f64>> {
    let m = x.len();
    let mut z = vec![0.0; m];
    (0..1usize << m)
        .map(|mask| {
            for (j, zj) in z.iter_mut().enumerate() {
                *zj = if mask >> j & 1 == 1 { x[j] } else { background[j] };
            }
            let v = p.predict(&z);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::numeric(format!("predictor returned {v} for coalition {mask:#b}")))
            }
        })
        .collect()
}

fn factorials(n: usize) -> Vec<f64> {
    let mut f = vec![1.0; n + 1];
    for i in 1..=n {
        f[i] = f[i - 1] * i as f64;
    }
    f
}

fn check_dims(x: &[f64], background: &[f64], max: usize) -> Result<()> {
    if x.len() != background.len() {
        return Err(Error::param("instance and background differ in length"));
    }
    if x.is_empty() {
        return Err(Error::param("no features to attribute"));
    }
    if x.len() > max {
        return Err(Error::param(format!(
            "{} features exceed the exact-enumeration limit of {max}; fuse features first",
            x.len()
        )));
    }
    Ok(())
}

fn shapley_from_values(values: &[f64], m: usize) -> Vec<f64> {
    let fact = factorials(m);
    // weight(|S|) = |S|! (M - |S| - 1)! / M!
    let weight: Vec<f64> = (0..m).map(|s| fact[s] * fact[m - s - 1] / fact[m]).collect();
    (0..m)
        .map(|j| {
            let bit = 1usize << j;
            (0..values.len())
                .filter(|mask| mask & bit == 0)
                .map(|mask| weight[mask.count_ones() as usize] * (values[mask | bit] - values[mask]))
                .sum()
        })
        .collect()
}

/// Exact Shapley values of `x` relative to `background`.
pub fn shapley_exact(p: &dyn Predictor, x: &[f64], background: &[f64]) -> Result<AttributionReport> {
    check_dims(x, background, MAX_SHAPLEY_FEATURES)?;
    let values = coalition_values(p, x, background)?;
    let m = x.len();
    Ok(AttributionReport {
        base_value: values[0],
        phi: shapley_from_values(&values, m),
        prediction: values[values.len() - 1],
    })
}

fn interactions_from_values(values: &[f64], phi: &[f64]) -> Vec<Vec<f64>> {
    let m = phi.len();
    let mut out = vec![vec![0.0; m]; m];
    if m >= 2 {
        let fact = factorials(m);
        // |S|! (M - |S| - 2)! / (2 (M - 1)!)
        let weight: Vec<f64> = (0..m - 1)
            .map(|s| fact[s] * fact[m - s - 2] / (2.0 * fact[m - 1]))
            .collect();
        for i in 0..m {
            for j in i + 1..m {
                let (bi, bj) = (1usize << i, 1usize << j);
                let v: f64 = (0..values.len())
                    .filter(|mask| mask & (bi | bj) == 0)
                    .map(|s| {
                        weight[s.count_ones() as usize]
                            * (values[s | bi | bj] - values[s | bi] - values[s | bj] + values[s])
                    })
                    .sum();
                out[i][j] = v;
                out[j][i] = v;
            }
        }
    }
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| out[i][j]).sum();
        out[i][i] = phi[i] - off;
    }
    out
}

/// Pairwise Shapley interaction values; each row sums to the feature's
/// Shapley value, so the diagonal holds the main effects.
pub fn interaction_matrix(p: &dyn Predictor, x: &[f64], background: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_dims(x, background, MAX_INTERACTION_FEATURES)?;
    let values = coalition_values(p, x, background)?;
    let phi = shapley_from_values(&values, x.len());
    Ok(interactions_from_values(&values, &phi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundMode {
    #[default]
    Mean,
    Median,
}

/// Column-wise mean or median of a set of rows.
pub fn background(rows: &[Vec<f64>], mode: BackgroundMode) -> Vec<f64> {
    let m = rows.first().map_or(0, Vec::len);
    (0..m)
        .map(|j| {
            let mut col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            match mode {
                BackgroundMode::Mean => col.iter().sum::<f64>() / col.len() as f64,
                BackgroundMode::Median => {
                    col.sort_by(f64::total_cmp);
                    let k = col.len() / 2;
                    if col.len() % 2 == 1 {
                        col[k]
                    } else {
                        0.5 * (col[k - 1] + col[k])
                    }
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleAttribution {
    pub phi: Vec<f64>,
    pub prediction: f64,
}

/// Contents of `shap.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapSummary {
    pub base_value: f64,
    pub feature_names: Vec<String>,
    pub mean_abs_phi: Vec<f64>,
    /// Feature names by descending mean |phi|.
    pub ranking: Vec<String>,
    pub per_sample: Vec<SampleAttribution>,
    /// Mean interaction matrix over all rows; empty when M exceeds the
    /// interaction limit.
    pub interactions: Vec<Vec<f64>>,
}

/// Attributions for every row of `m` against the given background.
pub fn shapley_summary_with(p: &dyn Predictor, m: &FeatureMatrix, background: &[f64]) -> Result<ShapSummary> {
    let k = m.n_features();
    check_dims(background, background, MAX_SHAPLEY_FEATURES)?;
    if background.len() != k {
        return Err(Error::param("background length differs from feature count"));
    }
    let with_interactions = k <= MAX_INTERACTION_FEATURES;
    let per_row = m
        .rows
        .par_iter()
        .map(|x| {
            let values = coalition_values(p, x, background)?;
            let phi = shapley_from_values(&values, k);
            let inter = with_interactions.then(|| interactions_from_values(&values, &phi));
            Ok((values[0], values[values.len() - 1], phi, inter))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = per_row.len() as f64;
    let mut mean_abs = vec![0.0; k];
    let mut inter_mean = if with_interactions { vec![vec![0.0; k]; k] } else { Vec::new() };
    for (_, _, phi, inter) in &per_row {
        for (acc, v) in mean_abs.iter_mut().zip(phi) {
            *acc += v.abs() / n;
        }
        if let Some(inter) = inter {
            for (row_acc, row) in inter_mean.iter_mut().zip(inter) {
                for (acc, v) in row_acc.iter_mut().zip(row) {
                    *acc += v / n;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]));
    Ok(ShapSummary {
        base_value: per_row.first().map_or(0.0, |r| r.0),
        feature_names: m.feature_names.clone(),
        ranking: order.iter().map(|&j| m.feature_names[j].clone()).collect(),
        mean_abs_phi: mean_abs,
        per_sample: per_row
            .into_iter()
            .map(|(_, prediction, phi, _)| SampleAttribution { phi, prediction })
            .collect(),
        interactions: inter_mean,
    })
}

/// Attributions for every row of `m`, using the matrix's own column means or
/// medians as the background.
pub fn shapley_summary(p: &dyn Predictor, m: &FeatureMatrix, mode: BackgroundMode) -> Result<ShapSummary> {
    shapley_summary_with(p, m, &background(&m.rows, mode))
}
