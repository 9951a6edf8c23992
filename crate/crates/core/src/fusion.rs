//! t-SNE feature fusion and KL-based screening of the embedding dimension.
//!
//! Exact O(N²) implementation: Gaussian conditional affinities calibrated to
//! a target perplexity, symmetrized into a joint distribution, matched by a
//! Student-t (one degree of freedom) distribution over the embedding.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Tolerance on the achieved perplexity during bandwidth calibration.
pub const PERPLEXITY_TOL: f64 = 1e-5;
const MAX_SEARCH_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneParams {
    pub perplexity: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            learning_rate: 200.0,
            iterations: 1000,
            exaggeration: 4.0,
            exaggeration_iters: 100,
            momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            seed: 42,
        }
    }
}

impl TsneParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.perplexity >= 2.0) {
            return Err(Error::param("t-SNE perplexity must be >= 2"));
        }
        if self.iterations < 250 {
            return Err(Error::param("t-SNE needs at least 250 iterations"));
        }
        if !(self.learning_rate > 0.0 && self.exaggeration >= 1.0) {
            return Err(Error::param("t-SNE learning rate must be positive and exaggeration >= 1"));
        }
        Ok(())
    }

    /// Perplexity actually used for `n` points: at most `(n - 1) / 3`.
    pub fn effective_perplexity(&self, n: usize) -> f64 {
        let floor = 2.0f64.min(n as f64 - 1.5);
        let cap = ((n - 1) as f64 / 3.0).max(floor);
        self.perplexity.min(cap)
    }
}

/// Pairwise squared Euclidean distances, row-major `n × n`.
pub fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Conditional neighbor distribution of one point at bandwidth `sigma`,
/// together with its perplexity `2^H` (H in bits).
fn conditional(sq_dist: &[f64], sigma: f64) -> (Vec<f64>, f64) {
    let d_min = sq_dist.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = 1.0 / (2.0 * sigma * sigma);
    let mut p: Vec<f64> = sq_dist.iter().map(|&d| (-(d - d_min) * scale).exp()).collect();
    let z: f64 = p.iter().sum();
    let mut h = 0.0;
    for v in &mut p {
        *v /= z;
        if *v > 0.0 {
            h -= *v * v.log2();
        }
    }
    (p, h.exp2())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedRow {
    pub sigma: f64,
    pub probs: Vec<f64>,
    pub perplexity: f64,
}

/// Gaussian bandwidth whose conditional distribution over the given squared
/// distances (self excluded) reaches the target perplexity.
///
/// The bracket is grown geometrically from the root-mean distance and then
/// bisected in log-space.
pub fn calibrate_sigma(sq_distances_row: &[f64], target_perplexity: f64) -> Result<CalibratedRow> {
    if sq_distances_row.is_empty() {
        return Err(Error::param("calibrate_sigma needs at least one neighbor"));
    }
    if sq_distances_row.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::param("squared distances must be finite and non-negative"));
    }
    if sq_distances_row.iter().all(|&d| d == 0.0) {
        return Err(Error::data("all distances are zero (duplicate points)"));
    }
    let k = sq_distances_row.len() as f64;
    if !(target_perplexity >= 1.0 && target_perplexity <= k) {
        return Err(Error::param(format!(
            "perplexity {target_perplexity} unreachable with {k} neighbors"
        )));
    }
    let perp = |s: f64| conditional(sq_distances_row, s).1;
    let s0 = (sq_distances_row.iter().sum::<f64>() / k).sqrt();
    let (mut lo, mut hi) = (s0, s0);
    for _ in 0..MAX_SEARCH_STEPS {
        if perp(hi) >= target_perplexity {
            break;
        }
        hi *= 2.0;
    }
    for _ in 0..MAX_SEARCH_STEPS {
        if perp(lo) <= target_perplexity {
            break;
        }
        lo *= 0.5;
    }
    let mut best = (s0, f64::INFINITY);
    for _ in 0..MAX_SEARCH_STEPS {
        let mid = (lo * hi).sqrt();
        let p = perp(mid);
        if (p - target_perplexity).abs() < best.1 {
            best = (mid, (p - target_perplexity).abs());
        }
        if best.1 < PERPLEXITY_TOL {
            break;
        }
        if p > target_perplexity {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (probs, perplexity) = conditional(sq_distances_row, best.0);
    Ok(CalibratedRow {
        sigma: best.0,
        probs,
        perplexity,
    })
}

/// Symmetric joint affinities `p_ij = (p_{j|i} + p_{i|j}) / 2N`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub n: usize,
    /// Row-major `n × n`, zero diagonal, sums to one.
    pub p: Vec<f64>,
    pub perplexity: f64,
    pub sigmas: Vec<f64>,
}

impl AffinityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }
}

/// Error naming the first pair of identical rows, if any.
fn check_duplicates(sq: &[f64], n: usize) -> Result<()> {
    for i in 0..n {
        for j in i + 1..n {
            if sq[i * n + j] == 0.0 {
                return Err(Error::data(format!("rows {i} and {j} are identical; remove duplicates first")));
            }
        }
    }
    Ok(())
}

pub fn joint_affinities(x: &[Vec<f64>], perplexity: f64) -> Result<AffinityMatrix> {
    let n = x.len();
    if n < 4 {
        return Err(Error::param(format!("t-SNE needs at least 4 points, got {n}")));
    }
    let sq = squared_distances(x);
    check_duplicates(&sq, n)?;
    let mut cond = vec![0.0; n * n];
    let mut sigmas = Vec::with_capacity(n);
    let mut row = Vec::with_capacity(n - 1);
    for i in 0..n {
        row.clear();
        row.extend((0..n).filter(|&j| j != i).map(|j| sq[i * n + j]));
        let cal = calibrate_sigma(&row, perplexity)?;
        for (k, j) in (0..n).filter(|&j| j != i).enumerate() {
            cond[i * n + j] = cal.probs[k];
        }
        sigmas.push(cal.sigma);
    }
    let denom = 2.0 * n as f64;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / denom;
            }
        }
    }
    Ok(AffinityMatrix {
        n,
        p,
        perplexity,
        sigmas,
    })
}

/// Student-t kernel `(1 + |y_i - y_j|²)^-1`, row-major with zero diagonal.
fn student_kernel(y: &[Vec<f64>]) -> Vec<f64> {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = y[i].iter().zip(&y[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            let k = 1.0 / (1.0 + d);
            num[i * n + j] = k;
            num[j * n + i] = k;
        }
    }
    num
}

/// Low-dimensional joint affinities under a Student-t kernel.
pub fn student_t_affinities(y: &[Vec<f64>]) -> Vec<f64> {
    let num = student_kernel(y);
    let z: f64 = num.iter().sum();
    num.iter().map(|k| k / z).collect()
}

/// `Σ p ln(p / q)`; entries with `p = 0` contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::param("KL divergence of differently sized distributions"));
    }
    let mut kl = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if !(b > 0.0) {
                return Err(Error::numeric("KL divergence undefined: q = 0 where p > 0"));
            }
            kl += a * (a / b).ln();
        }
    }
    Ok(kl)
}

/// Gradient of `KL(P || Q(Y))` with respect to the embedding coordinates:
/// `4 Σ_j (p_ij - q_ij)(y_i - y_j)(1 + |y_i - y_j|²)^-1`.
pub fn tsne_gradient(p: &[f64], q: &[f64], y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    gradient_scaled(p, 1.0, q, &student_kernel(y), y)
}

fn gradient_scaled(p: &[f64], p_scale: f64, q: &[f64], num: &[f64], y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = y.len();
    let d = y.first().map_or(0, Vec::len);
    let mut grad = vec![vec![0.0; d]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let w = 4.0 * (p_scale * p[i * n + j] - q[i * n + j]) * num[i * n + j];
            for k in 0..d {
                grad[i][k] += w * (y[i][k] - y[j][k]);
            }
        }
    }
    grad
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResult {
    pub y: Vec<Vec<f64>>,
    pub final_kl: f64,
    /// KL divergence (against the unexaggerated P) at the start of each
    /// iteration.
    pub kl_history: Vec<f64>,
    pub params: TsneParams,
}

/// Gradient descent with momentum, per-coordinate gains and early
/// exaggeration over precomputed affinities. `affinities` is only read.
pub fn tsne_embed_affinities(affinities: &AffinityMatrix, dim: usize, params: &TsneParams) -> Result<EmbeddingResult> {
    params.validate()?;
    if !(1..=3).contains(&dim) {
        return Err(Error::param(format!("embedding dimension must be 1, 2 or 3, got {dim}")));
    }
    let n = affinities.n;
    let p = &affinities.p;
    let mut rng = rng::rng(params.seed);
    let mut y: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| 1e-4 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect()
        })
        .collect();
    let mut update = vec![vec![0.0; dim]; n];
    let mut gains = vec![vec![1.0f64; dim]; n];
    let mut history = Vec::with_capacity(params.iterations);

    for it in 0..params.iterations {
        let num = student_kernel(&y);
        let z: f64 = num.iter().sum();
        let q: Vec<f64> = num.iter().map(|k| (k / z).max(f64::MIN_POSITIVE)).collect();
        history.push(kl_divergence(p, &q)?);

        let exaggeration = if it < params.exaggeration_iters { params.exaggeration } else { 1.0 };
        let momentum = if it < params.momentum_switch { params.momentum } else { params.final_momentum };
        let grad = gradient_scaled(p, exaggeration, &q, &num, &y);
        for i in 0..n {
            for k in 0..dim {
                let g = grad[i][k];
                gains[i][k] = if (g > 0.0) != (update[i][k] > 0.0) {
                    gains[i][k] + 0.2
                } else {
                    (gains[i][k] * 0.8).max(0.01)
                };
                update[i][k] = momentum * update[i][k] - params.learning_rate * gains[i][k] * g;
                y[i][k] += update[i][k];
            }
        }
        for k in 0..dim {
            let mean = y.iter().map(|r| r[k]).sum::<f64>() / n as f64;
            y.iter_mut().for_each(|r| r[k] -= mean);
        }
        if y.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("t-SNE diverged at iteration {it}")));
        }
    }
    let q: Vec<f64> = student_t_affinities(&y).into_iter().map(|v| v.max(f64::MIN_POSITIVE)).collect();
    let final_kl = kl_divergence(p, &q)?;
    Ok(EmbeddingResult {
        y,
        final_kl,
        kl_history: history,
        params: params.clone(),
    })
}

/// Embed `x` into `dim` dimensions.
pub fn tsne_embed(x: &[Vec<f64>], dim: usize, params: &TsneParams) -> Result<EmbeddingResult> {
    params.validate()?;
    let perplexity = params.effective_perplexity(x.len().max(4));
    let aff = joint_affinities(x, perplexity)?;
    tsne_embed_affinities(&aff, dim, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionResult {
    pub d: usize,
    pub final_kl: f64,
    pub y: Vec<Vec<f64>>,
}

/// Contents of `fusion.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionScreen {
    pub dims: Vec<DimensionResult>,
    pub recommended_d: usize,
    pub params: TsneParams,
}

/// Embed once per requested dimension (same seed each time) and recommend
/// the dimension with the smallest final KL divergence.
pub fn screen_dimensions(x: &[Vec<f64>], dims: &[usize], params: &TsneParams) -> Result<DimensionScreen> {
    if dims.is_empty() {
        return Err(Error::param("no embedding dimensions requested"));
    }
    params.validate()?;
    let aff = joint_affinities(x, params.effective_perplexity(x.len().max(4)))?;
    let mut out = Vec::with_capacity(dims.len());
    for &d in dims {
        let r = tsne_embed_affinities(&aff, d, params)?;
        out.push(DimensionResult {
            d,
            final_kl: r.final_kl,
            y: r.y,
        });
    }
    let recommended_d = out
        .iter()
        .min_by(|a, b| a.final_kl.total_cmp(&b.final_kl))
        .map(|r| r.d)
        .unwrap_or(dims[0]);
    Ok(DimensionScreen {
        dims: out,
        recommended_d,
        params: params.clone(),
    })
}

/// Column means and standard deviations (zero spread replaced by one).
pub fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let m = rows.first().map_or(0, Vec::len);
    let means: Vec<f64> = (0..m).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let sds = (0..m)
        .map(|j| {
            let var = rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (means, sds)
}

pub fn standardize(rows: &[Vec<f64>], means: &[f64], sds: &[f64]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().zip(means.iter().zip(sds)).map(|(v, (m, s))| (v - m) / s).collect())
        .collect()
}

/// Number of neighbors used to place unseen points in an embedding.
pub const OUT_OF_SAMPLE_K: usize = 5;

/// Feature scaling applied before fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionScaling {
    /// Use the features as measured.
    #[default]
    Raw,
    /// Z-score every column first.
    Standardize,
}

/// Maps unseen feature vectors into a fitted embedding by inverse-distance
/// weighting of the `k` nearest training points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionMap {
    pub k: usize,
    /// Column shift and scale applied before distances (0 and 1 when raw).
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Scaled training features.
    pub train_x: Vec<Vec<f64>>,
    /// Embedding of the training features.
    pub train_y: Vec<Vec<f64>>,
}

impl FusionMap {
    /// Scale `rows`, embed them with t-SNE and keep what is needed to place
    /// new points.
    pub fn fit(rows: &[Vec<f64>], dim: usize, params: &TsneParams, scaling: FusionScaling) -> Result<(Self, EmbeddingResult)> {
        let (means, sds) = match scaling {
            FusionScaling::Standardize => column_stats(rows),
            FusionScaling::Raw => {
                let m = rows.first().map_or(0, Vec::len);
                (vec![0.0; m], vec![1.0; m])
            }
        };
        let z = standardize(rows, &means, &sds);
        let emb = tsne_embed(&z, dim, params)?;
        Ok((
            FusionMap {
                k: OUT_OF_SAMPLE_K.min(rows.len()),
                means,
                sds,
                train_x: z,
                train_y: emb.y.clone(),
            },
            emb,
        ))
    }

    pub fn dim(&self) -> usize {
        self.train_y.first().map_or(0, Vec::len)
    }

    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = x
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        let mut dist: Vec<(f64, usize)> = self
            .train_x
            .iter()
            .enumerate()
            .map(|(i, t)| (t.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let near = &dist[..self.k];
        if near[0].0 == 0.0 {
            return self.train_y[near[0].1].clone();
        }
        let mut out = vec![0.0; self.dim()];
        let mut wsum = 0.0;
        for &(d, i) in near {
            let w = 1.0 / d;
            wsum += w;
            for (o, v) in out.iter_mut().zip(&self.train_y[i]) {
                *o += w * v;
            }
        }
        out.iter_mut().for_each(|o| *o /= wsum);
        out
    }
}

/// Random well-separated Gaussian clusters, for tests and demos.
pub fn gaussian_clusters(n_per: usize, dim: usize, centers: &[f64], seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = rng::rng(seed);
    let mut x = Vec::new();
    let mut labels = Vec::new();
    for (c, &offset) in centers.iter().enumerate() {
        for _ in 0..n_per {
            x.push((0..dim).map(|_| offset + rng.random::<f64>() - 0.5).collect());
            labels.push(c);
        }
    }
    (x, labels)
}
