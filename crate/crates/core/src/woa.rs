//! Whale optimization over a box-bounded continuous search space.

use std::f64::consts::PI;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Cost function to minimize. Must be deterministic and callable from
/// several threads at once.
pub trait Objective: Sync {
    fn evaluate(&self, x: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64 + Sync> Objective for F {
    fn evaluate(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// How the exploration gate measures `|A|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateNorm {
    /// Euclidean norm of the whole `A` vector.
    #[default]
    Euclidean,
    /// Each coordinate decides on its own `|A_j|`.
    ComponentWise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WoaConfig {
    pub dim: usize,
    pub bounds: Vec<(f64, f64)>,
    pub pop_size: usize,
    pub t_max: usize,
    pub spiral_b: f64,
    pub seed: u64,
    #[serde(default)]
    pub gate: GateNorm,
    /// Positions that replace the first random whales of the initial
    /// population.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initial: Vec<Vec<f64>>,
}

impl WoaConfig {
    pub fn new(bounds: Vec<(f64, f64)>, seed: u64) -> Self {
        Self {
            dim: bounds.len(),
            bounds,
            pop_size: 30,
            t_max: 500,
            spiral_b: 1.0,
            seed,
            gate: GateNorm::Euclidean,
            initial: Vec::new(),
        }
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64, seed: u64) -> Self {
        Self::new(vec![(lo, hi); dim], seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.bounds.len() != self.dim {
            return Err(Error::param(format!(
                "woa: {} bounds given for dimension {}",
                self.bounds.len(),
                self.dim
            )));
        }
        if let Some((j, _)) = self
            .bounds
            .iter()
            .enumerate()
            .find(|(_, (lo, hi))| !(lo.is_finite() && hi.is_finite() && lo < hi))
        {
            return Err(Error::param(format!("woa: bounds of coordinate {j} are not an interval")));
        }
        if self.pop_size < 2 {
            return Err(Error::param("woa: population must hold at least 2 whales"));
        }
        if self.t_max == 0 {
            return Err(Error::param("woa: t_max must be >= 1"));
        }
        if !self.spiral_b.is_finite() {
            return Err(Error::param("woa: spiral constant must be finite"));
        }
        if self.initial.len() > self.pop_size || self.initial.iter().any(|p| p.len() != self.dim) {
            return Err(Error::param("woa: initial positions do not fit the population"));
        }
        Ok(())
    }

    fn clamp(&self, x: &mut [f64]) {
        for (v, &(lo, hi)) in x.iter_mut().zip(&self.bounds) {
            *v = v.clamp(lo, hi);
        }
    }
}

/// Iteration factor `a` and the coefficient vectors `A`, `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub a: f64,
    pub big_a: Vec<f64>,
    pub c: Vec<f64>,
}

pub fn update_coefficients(t: usize, t_max: usize, r1: &[f64], r2: &[f64]) -> Result<Coefficients> {
    if t > t_max || t_max == 0 {
        return Err(Error::param(format!("iteration {t} outside 0..={t_max}")));
    }
    let a = 2.0 - 2.0 * t as f64 / t_max as f64;
    Ok(Coefficients {
        a,
        big_a: r1.iter().map(|r| 2.0 * a * r - a).collect(),
        c: r2.iter().map(|r| 2.0 * r).collect(),
    })
}

fn clamp_to(x: &mut [f64], bounds: Option<&[(f64, f64)]>) {
    if let Some(b) = bounds {
        for (v, &(lo, hi)) in x.iter_mut().zip(b) {
            *v = v.clamp(lo, hi);
        }
    }
}

/// Move toward `target`: `D = |C∘target − X|`, `X' = target − A∘D`.
fn shrink_toward(x: &[f64], target: &[f64], a: &[f64], c: &[f64], bounds: Option<&[(f64, f64)]>) -> Vec<f64> {
    let mut out: Vec<f64> = x
        .iter()
        .zip(target)
        .zip(a.iter().zip(c))
        .map(|((&xi, &ti), (&ai, &ci))| ti - ai * (ci * ti - xi).abs())
        .collect();
    clamp_to(&mut out, bounds);
    out
}

pub fn encircle_step(x: &[f64], best: &[f64], a: &[f64], c: &[f64], bounds: Option<&[(f64, f64)]>) -> Vec<f64> {
    shrink_toward(x, best, a, c, bounds)
}

pub fn random_search_step(x: &[f64], x_rand: &[f64], a: &[f64], c: &[f64], bounds: Option<&[(f64, f64)]>) -> Vec<f64> {
    shrink_toward(x, x_rand, a, c, bounds)
}

/// Logarithmic spiral around `best` with shape `b` and position `spiral_l`
/// on [-1, 1].
pub fn spiral_step(x: &[f64], best: &[f64], b: f64, spiral_l: f64, bounds: Option<&[(f64, f64)]>) -> Vec<f64> {
    let k = (b * spiral_l).exp() * (2.0 * PI * spiral_l).cos();
    let mut out: Vec<f64> = x
        .iter()
        .zip(best)
        .map(|(&xi, &bi)| (bi - xi).abs() * k + bi)
        .collect();
    clamp_to(&mut out, bounds);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub positions: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
    pub best_position: Vec<f64>,
    pub best_cost: f64,
    /// Iterations completed.
    pub t: usize,
    /// Iteration factor used in the last completed iteration.
    pub a: f64,
    /// Best cost after each iteration.
    pub history: Vec<f64>,
}

fn evaluate_all(f: &dyn Objective, positions: &[Vec<f64>]) -> Result<Vec<f64>> {
    let costs: Vec<f64> = positions.par_iter().map(|p| f.evaluate(p)).collect();
    if let Some(i) = costs.iter().position(|c| !c.is_finite()) {
        let shown: Vec<String> = positions[i].iter().take(8).map(|v| format!("{v:.6}")).collect();
        let more = if positions[i].len() > 8 { ", ..." } else { "" };
        return Err(Error::numeric(format!(
            "objective returned {} at position [{}{more}]",
            costs[i],
            shown.join(", ")
        )));
    }
    Ok(costs)
}

const INIT_STREAM: u64 = u64::MAX;

/// Minimize `f` over the box in `cfg`.
///
/// Every whale draws from its own stream keyed by `(seed, whale, t)`. Costs
/// are evaluated in parallel and the best agent is then updated in whale
/// order, so the result does not depend on thread scheduling.
pub fn woa_optimize(f: &dyn Objective, cfg: &WoaConfig) -> Result<OptimizerState> {
    cfg.validate()?;
    let d = cfg.dim;
    let mut positions: Vec<Vec<f64>> = (0..cfg.pop_size)
        .map(|i| match cfg.initial.get(i) {
            Some(p) => {
                let mut p = p.clone();
                cfg.clamp(&mut p);
                p
            }
            None => {
                let mut r = rng::rng(rng::derive_seed(cfg.seed, &[INIT_STREAM, i as u64]));
                cfg.bounds.iter().map(|&(lo, hi)| r.random_range(lo..=hi)).collect()
            }
        })
        .collect();
    let mut costs = evaluate_all(f, &positions)?;
    let mut best = 0;
    for (i, &c) in costs.iter().enumerate() {
        if c < costs[best] {
            best = i;
        }
    }
    let mut best_position = positions[best].clone();
    let mut best_cost = costs[best];
    let mut history = Vec::with_capacity(cfg.t_max);
    let mut a = 2.0;

    for t in 0..cfg.t_max {
        let snapshot = &positions;
        let next: Vec<Vec<f64>> = (0..cfg.pop_size)
            .into_par_iter()
            .map(|i| {
                let mut r = rng::rng(rng::derive_seed(cfg.seed, &[i as u64, t as u64]));
                let r1: Vec<f64> = (0..d).map(|_| r.random()).collect();
                let r2: Vec<f64> = (0..d).map(|_| r.random()).collect();
                let coef = update_coefficients(t, cfg.t_max, &r1, &r2).expect("t < t_max");
                let p: f64 = r.random();
                let spiral_l: f64 = r.random_range(-1.0..=1.0);
                let rand_whale = r.random_range(0..cfg.pop_size);
                let x = &snapshot[i];
                let bounds = Some(cfg.bounds.as_slice());
                if p >= 0.5 {
                    return spiral_step(x, &best_position, cfg.spiral_b, spiral_l, bounds);
                }
                let x_rand = &snapshot[rand_whale];
                match cfg.gate {
                    GateNorm::Euclidean => {
                        let norm = coef.big_a.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm < 1.0 {
                            encircle_step(x, &best_position, &coef.big_a, &coef.c, bounds)
                        } else {
                            random_search_step(x, x_rand, &coef.big_a, &coef.c, bounds)
                        }
                    }
                    GateNorm::ComponentWise => {
                        let mut out: Vec<f64> = (0..d)
                            .map(|j| {
                                let target = if coef.big_a[j].abs() < 1.0 { best_position[j] } else { x_rand[j] };
                                target - coef.big_a[j] * (coef.c[j] * target - x[j]).abs()
                            })
                            .collect();
                        cfg.clamp(&mut out);
                        out
                    }
                }
            })
            .collect();
        positions = next;
        costs = evaluate_all(f, &positions)?;
        for (i, &c) in costs.iter().enumerate() {
            if c < best_cost {
                best_cost = c;
                best_position.clone_from(&positions[i]);
            }
        }
        a = 2.0 - 2.0 * t as f64 / cfg.t_max as f64;
        history.push(best_cost);
    }

    Ok(OptimizerState {
        positions,
        costs,
        best_position,
        best_cost,
        t: cfg.t_max,
        a,
        history,
    })
}

/// Contents of an optional optimizer trace file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WoaTrace {
    pub config: WoaConfig,
    pub history: Vec<f64>,
    pub best_position: Vec<f64>,
}
