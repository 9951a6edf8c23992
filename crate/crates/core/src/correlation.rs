//! Pearson correlation and grey relational analysis of features against the
//! target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Default distinguishing coefficient for grey relational analysis.
pub const DEFAULT_RHO: f64 = 0.5;

/// Pearson product-moment correlation of two equally long series.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::param(format!(
            "pearson needs two series of equal length >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::numeric("pearson: constant series has zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strength {
    Low,
    Significant,
    High,
    /// Correlation undefined (constant column).
    Degenerate,
}

/// Linear-correlation tier: `|r| < 0.4` low, `< 0.7` significant, else high.
pub fn classify_strength(r: f64) -> Result<Strength> {
    let a = r.abs();
    if !(a <= 1.0) {
        return Err(Error::param(format!("correlation {r} outside [-1, 1]")));
    }
    Ok(if a < 0.4 {
        Strength::Low
    } else if a < 0.7 {
        Strength::Significant
    } else {
        Strength::High
    })
}

fn mean_normalized(x: &[f64]) -> Result<Vec<f64>> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    if mean == 0.0 || !mean.is_finite() {
        return Err(Error::numeric("grey relational analysis: series has zero mean"));
    }
    Ok(x.iter().map(|v| v / mean).collect())
}

/// Grey relational coefficients of each comparison series against the
/// reference.
///
/// Every series is first divided by its own mean. The two-level minimum and
/// maximum absolute deviations are taken over the whole batch, so the
/// coefficients of one series depend on the others supplied with it.
pub fn grey_coefficients(reference: &[f64], comparisons: &[&[f64]], rho: f64) -> Result<Vec<Vec<f64>>> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::param(format!("rho must lie in (0, 1], got {rho}")));
    }
    if reference.is_empty() {
        return Err(Error::param("grey relational analysis needs non-empty series"));
    }
    let x0 = mean_normalized(reference)?;
    let deltas = comparisons
        .iter()
        .map(|xi| {
            if xi.len() != x0.len() {
                return Err(Error::param("grey relational analysis: series lengths differ"));
            }
            let xi = mean_normalized(xi)?;
            Ok(x0.iter().zip(&xi).map(|(a, b)| (a - b).abs()).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let all = deltas.iter().flatten();
    let d_min = all.clone().copied().fold(f64::INFINITY, f64::min);
    let d_max = all.copied().fold(0.0, f64::max);
    if d_max == 0.0 {
        return Ok(deltas.iter().map(|d| vec![1.0; d.len()]).collect());
    }
    Ok(deltas
        .iter()
        .map(|d| d.iter().map(|&dk| (d_min + rho * d_max) / (dk + rho * d_max)).collect())
        .collect())
}

/// Relational degree: the mean of the coefficients.
pub fn grey_degree(xi: &[f64]) -> Result<f64> {
    if xi.is_empty() {
        return Err(Error::param("grey degree of an empty series"));
    }
    Ok(xi.iter().sum::<f64>() / xi.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCorrelation {
    pub name: String,
    /// `None` when the column is constant.
    pub pcc: Option<f64>,
    pub tier: Strength,
    /// `None` when the column has zero mean or is otherwise unusable.
    pub gra: Option<f64>,
}

/// Contents of `correlation.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub features: Vec<FeatureCorrelation>,
    pub ranking_pcc: Vec<String>,
    pub ranking_gra: Vec<String>,
    pub rho: f64,
}

/// Descending ranking of names by score; `None` sorts last and ties keep
/// column order.
fn rank(names: &[String], scores: &[Option<f64>]) -> Vec<String> {
    let mut idx: Vec<usize> = (0..names.len()).collect();
    idx.sort_by(|&a, &b| {
        let key = |i: usize| scores[i].unwrap_or(f64::NEG_INFINITY);
        key(b).total_cmp(&key(a))
    });
    idx.into_iter().map(|i| names[i].clone()).collect()
}

/// Both analyses, feature by feature against the target.
pub fn correlation_report(m: &FeatureMatrix, rho: f64) -> Result<CorrelationReport> {
    let target = &m.targets;
    let columns: Vec<Vec<f64>> = (0..m.n_features()).map(|j| m.column(j)).collect();

    let pcc: Vec<Option<f64>> = columns.iter().map(|c| pearson(c, target).ok()).collect();

    // Columns whose mean is zero cannot be mean-normalized; leave them out of
    // the batch so they do not distort the others' min/max.
    let usable: Vec<usize> = (0..columns.len())
        .filter(|&j| {
            let mean = columns[j].iter().sum::<f64>();
            mean != 0.0 && mean.is_finite()
        })
        .collect();
    let batch: Vec<&[f64]> = usable.iter().map(|&j| columns[j].as_slice()).collect();
    let coeffs = grey_coefficients(target, &batch, rho)?;
    let mut gra = vec![None; columns.len()];
    for (k, &j) in usable.iter().enumerate() {
        gra[j] = Some(grey_degree(&coeffs[k])?);
    }

    let features = m
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            Ok(FeatureCorrelation {
                name: name.clone(),
                pcc: pcc[j],
                tier: match pcc[j] {
                    Some(r) => classify_strength(r)?,
                    None => Strength::Degenerate,
                },
                gra: gra[j],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let abs_pcc: Vec<Option<f64>> = pcc.iter().map(|r| r.map(f64::abs)).collect();
    Ok(CorrelationReport {
        ranking_pcc: rank(&m.feature_names, &abs_pcc),
        ranking_gra: rank(&m.feature_names, &gra),
        features,
        rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn pearson_identities() {
        let x = [1.0, 4.0, 2.0, 8.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&x, &[2.0; 4]).is_err());
        assert!(pearson(&x, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pearson_small_fixture() {
        // 9 / sqrt(84), evaluated at 50 digits: 0.98198050606196571...
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.981_980_506_061_965_7).abs() < 1e-15);
    }

    #[test]
    fn tiers() {
        assert_eq!(classify_strength(0.39).unwrap(), Strength::Low);
        assert_eq!(classify_strength(0.4).unwrap(), Strength::Significant);
        assert_eq!(classify_strength(-0.69).unwrap(), Strength::Significant);
        assert_eq!(classify_strength(0.7).unwrap(), Strength::High);
        assert_eq!(classify_strength(-0.9).unwrap(), Strength::High);
        assert_eq!(classify_strength(1.0).unwrap(), Strength::High);
        assert!(classify_strength(1.01).is_err());
        assert!(classify_strength(f64::NAN).is_err());
    }

    #[test]
    fn grey_identical_series() {
        let x = [1.0, 2.0, 3.0];
        let c = grey_coefficients(&x, &[&x], 0.5).unwrap();
        assert_eq!(c, vec![vec![1.0; 3]]);
        assert_eq!(grey_degree(&c[0]).unwrap(), 1.0);
    }

    #[test]
    fn grey_toy_system() {
        // Reference [2,4,6] -> [0.5,1,1.5]; x1 = [1,1,1] -> [1,1,1];
        // x2 = [3,3,6] -> [0.75,0.75,1.5].
        // deltas: x1 [0.5,0,0.5], x2 [0.25,0.25,0]; min 0, max 0.5.
        // xi = 0.25 / (d + 0.25); checked with exact fractions.
        let c = grey_coefficients(&[2.0, 4.0, 6.0], &[&[1.0, 1.0, 1.0], &[3.0, 3.0, 6.0]], 0.5).unwrap();
        let expect = [[1.0 / 3.0, 1.0, 1.0 / 3.0], [0.5, 0.5, 1.0]];
        for (row, want) in c.iter().zip(expect) {
            for (a, b) in row.iter().zip(want) {
                assert!((a - b).abs() < 1e-15, "{c:?}");
            }
        }
        assert!((grey_degree(&c[0]).unwrap() - 5.0 / 9.0).abs() < 1e-15);
        assert!((grey_degree(&c[1]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn grey_degree_basics() {
        assert_eq!(grey_degree(&[0.5, 1.0]).unwrap(), 0.75);
        assert!(grey_degree(&[]).is_err());
        assert!(grey_coefficients(&[1.0, -1.0], &[&[1.0, 2.0]], 0.5).is_err());
        assert!(grey_coefficients(&[1.0, 2.0], &[&[1.0, 2.0]], 0.0).is_err());
    }

    fn matrix(cols: Vec<Vec<f64>>, target: Vec<f64>) -> FeatureMatrix {
        let n = target.len();
        let names = (1..=cols.len()).map(|i| format!("F{i}")).collect();
        let rows = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
        FeatureMatrix::new(names, "target", (1..=n as u32).collect(), rows, target).unwrap()
    }

    #[test]
    fn perfect_predictor_ranks_first() {
        let mut rng = crate::rng::rng(5);
        let n = 50;
        let target: Vec<f64> = (0..n).map(|i| 100.0 + i as f64 + rng.random::<f64>()).collect();
        let noise: Vec<f64> = (0..n).map(|_| 50.0 + rng.random::<f64>() * 100.0).collect();
        let other: Vec<f64> = target.iter().map(|t| t * 0.5 + rng.random::<f64>() * 30.0).collect();
        let m = matrix(vec![noise, other, target.clone(), vec![3.0; n]], target);
        let rep = correlation_report(&m, DEFAULT_RHO).unwrap();
        assert_eq!(rep.ranking_pcc[0], "F3");
        assert_eq!(rep.ranking_gra[0], "F3");
        assert_eq!(rep.features[3].tier, Strength::Degenerate);
        assert_eq!(rep.ranking_pcc.last().unwrap(), "F4");
        assert!(rep.features.iter().filter_map(|f| f.gra).all(|g| g > 0.0 && g <= 1.0));
    }

    #[test]
    fn independent_noise_is_weak() {
        // Fixed-seed fixture, N = 200.
        let mut rng = crate::rng::rng(2024);
        let x: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let r = pearson(&x, &y).unwrap();
        assert!(r.abs() < 0.3, "{r}");
    }
}
