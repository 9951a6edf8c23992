//! Whale-optimized ELM training, evaluation metrics, Taylor diagrams and the
//! before/after fusion comparison.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::attribution::Predictor;
use crate::correlation::pearson;
use crate::data::split_rows;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::fusion::{FusionMap, FusionScaling, TsneParams};
use crate::models::{
    baseline_fit, elm_fit, elm_init, Activation, BaselineParams, ElmModel, ElmTrainingSet, Gbrt, KnnModel,
    ModelKind, Normalization, RandomForest, RegressionTree, Regressor,
};
use crate::rng;
use crate::woa::{woa_optimize, GateNorm, WoaConfig};

// ---------------------------------------------------------------------------
// Position encoding

/// Flatten `(ω, b)` into a search position: `ω` row by row, then `b`.
pub fn encode_position(omega: &DMatrix<f64>, bias: &DVector<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(omega.len() + bias.len());
    for row in omega.row_iter() {
        v.extend(row.iter());
    }
    v.extend(bias.iter());
    v
}

pub fn decode_position(v: &[f64], n_inputs: usize, hidden_l: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let want = hidden_l * n_inputs + hidden_l;
    if v.len() != want {
        return Err(Error::param(format!(
            "position has {} coordinates, expected {want} for {hidden_l} hidden nodes and {n_inputs} inputs",
            v.len()
        )));
    }
    let split = hidden_l * n_inputs;
    Ok((
        DMatrix::from_row_slice(hidden_l, n_inputs, &v[..split]),
        DVector::from_column_slice(&v[split..]),
    ))
}

// ---------------------------------------------------------------------------
// Training configuration

/// What the weight search minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Fitness {
    /// RMSE on the whole training set.
    #[default]
    TrainRmse,
    /// RMSE on a held-out fraction of the training set, with output weights
    /// solved on the rest.
    Holdout(f64),
}

impl FromStr for Fitness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "train_rmse" {
            return Ok(Fitness::TrainRmse);
        }
        let frac = s
            .strip_prefix("holdout:")
            .and_then(|f| f.parse::<f64>().ok())
            .ok_or_else(|| Error::param(format!("unknown fitness `{s}`; use train_rmse or holdout:<frac>")))?;
        if !(frac > 0.0 && frac < 1.0) {
            return Err(Error::param(format!("holdout fraction must lie in (0, 1), got {frac}")));
        }
        Ok(Fitness::Holdout(frac))
    }
}

impl fmt::Display for Fitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fitness::TrainRmse => f.write_str("train_rmse"),
            Fitness::Holdout(frac) => write!(f, "holdout:{frac}"),
        }
    }
}

impl Serialize for Fitness {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fitness {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Optimizer knobs; dimension and bounds follow from the network shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WoaSettings {
    pub pop_size: usize,
    pub t_max: usize,
    pub spiral_b: f64,
    pub gate: GateNorm,
    /// Search box `[-bound, bound]` for every weight and bias.
    pub bound: f64,
}

impl Default for WoaSettings {
    fn default() -> Self {
        Self {
            pop_size: 30,
            t_max: 500,
            spiral_b: 1.0,
            gate: GateNorm::Euclidean,
            bound: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_l: usize,
    pub activation: Activation,
    pub split_ratio: f64,
    pub seed: u64,
    pub fitness: Fitness,
    pub woa: WoaSettings,
    pub baselines: BaselineParams,
    pub tsne: TsneParams,
    pub fusion_scaling: FusionScaling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_l: 40,
            activation: Activation::Sigmoid,
            split_ratio: 0.7,
            seed: 42,
            fitness: Fitness::TrainRmse,
            woa: WoaSettings::default(),
            baselines: BaselineParams::default(),
            tsne: TsneParams::default(),
            fusion_scaling: FusionScaling::Raw,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_l == 0 {
            return Err(Error::param("hidden_l must be >= 1"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::param("split_ratio must lie in (0, 1)"));
        }
        if !(self.woa.bound > 0.0 && self.woa.bound.is_finite()) {
            return Err(Error::param("woa.bound must be positive"));
        }
        self.tsne.validate()
    }

    /// Search problem for a network with `n_inputs` inputs.
    pub fn woa_config(&self, n_inputs: usize) -> WoaConfig {
        let dim = self.hidden_l * n_inputs + self.hidden_l;
        WoaConfig {
            pop_size: self.woa.pop_size,
            t_max: self.woa.t_max,
            spiral_b: self.woa.spiral_b,
            gate: self.woa.gate,
            ..WoaConfig::uniform(dim, -self.woa.bound, self.woa.bound, self.seed)
        }
    }
}

/// A trained whale-optimized ELM and the optimizer's best-fitness history.
#[derive(Debug, Clone)]
pub struct WoaElmFit {
    pub model: ElmModel,
    pub history: Vec<f64>,
    pub best_fitness: f64,
}

/// Search `(ω, b)` with the whale optimizer, then solve the output weights
/// once more on the full training set at the best position.
///
/// Whale 0 starts from the weights a plain ELM with the same seed would use.
pub fn woa_elm_train(x: &[Vec<f64>], y: &[f64], cfg: &TrainConfig) -> Result<WoaElmFit> {
    cfg.validate()?;
    let full = ElmTrainingSet::new(x, y, cfg.activation)?;
    let n = full.n_inputs();
    if x.len() <= cfg.hidden_l {
        log::warn!("WOA-ELM with {} hidden nodes trained on only {} rows", cfg.hidden_l, x.len());
    }
    let mut woa = cfg.woa_config(n);
    let (omega0, bias0) = elm_init(n, cfg.hidden_l, cfg.seed);
    woa.initial = vec![encode_position(&omega0, &bias0)];

    let state = match cfg.fitness {
        Fitness::TrainRmse => {
            let objective = |p: &[f64]| match decode_position(p, n, cfg.hidden_l).and_then(|(o, b)| full.solve(&o, &b)) {
                Ok((_, rmse)) => rmse,
                Err(_) => f64::NAN,
            };
            woa_optimize(&objective, &woa)?
        }
        Fitness::Holdout(frac) => {
            let inner = split_rows(x.len(), 1.0 - frac, rng::derive_seed_str(cfg.seed, "holdout"))?;
            let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
                (idx.iter().map(|&i| x[i].clone()).collect(), idx.iter().map(|&i| y[i]).collect())
            };
            let (xt, _) = pick(&inner.train);
            let (xv, _) = pick(&inner.test);
            // Share the full-set scaling so both parts see the same units.
            let xt = full.norm.features(&xt);
            let xv = full.norm.features(&xv);
            let tt = DMatrix::from_fn(inner.train.len(), 1, |i, _| full.t[(inner.train[i], 0)]);
            let tv = DMatrix::from_fn(inner.test.len(), 1, |i, _| full.t[(inner.test[i], 0)]);
            let objective = |p: &[f64]| -> f64 {
                let Ok((o, b)) = decode_position(p, n, cfg.hidden_l) else {
                    return f64::NAN;
                };
                let solved = crate::models::elm_hidden(&xt, &o, &b, cfg.activation)
                    .and_then(|h| crate::models::elm_solve_beta(&h, &tt))
                    .and_then(|beta| Ok((crate::models::elm_hidden(&xv, &o, &b, cfg.activation)?, beta)));
                match solved {
                    Ok((hv, beta)) => ((&hv * &beta - &tv).norm_squared() / tv.nrows() as f64).sqrt(),
                    Err(_) => f64::NAN,
                }
            };
            woa_optimize(&objective, &woa)?
        }
    };
    let (omega, bias) = decode_position(&state.best_position, n, cfg.hidden_l)?;
    Ok(WoaElmFit {
        model: full.model(omega, bias)?,
        history: state.history,
        best_fitness: state.best_cost,
    })
}

// ---------------------------------------------------------------------------
// Metrics

/// Population standard deviation.
pub fn standard_deviation(series: &[f64]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::param("standard deviation of an empty series"));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    Ok((series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt())
}

fn check_aligned(pred: &[f64], actual: &[f64]) -> Result<()> {
    if pred.len() != actual.len() {
        return Err(Error::param(format!(
            "{} predictions for {} actual values",
            pred.len(),
            actual.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::param("no values to compare"));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_aligned(pred, actual)?;
    let ss: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// Coefficient of determination `1 − SS_res / SS_tot`.
pub fn r_squared(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_aligned(pred, actual)?;
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::data("R² is undefined for a constant actual series"));
    }
    let ss_res: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub r2: f64,
    pub sd_pred: f64,
    pub sd_actual: f64,
    /// `None` when the predictions are constant.
    pub pearson_r: Option<f64>,
}

impl Metrics {
    pub fn compute(pred: &[f64], actual: &[f64]) -> Result<Self> {
        Ok(Self {
            rmse: rmse(pred, actual)?,
            r2: r_squared(pred, actual)?,
            sd_pred: standard_deviation(pred)?,
            sd_actual: standard_deviation(actual)?,
            pearson_r: pearson(pred, actual).ok(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainScore {
    pub rmse: f64,
    pub r2: f64,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub n_train: usize,
    pub n_test: usize,
    pub train: TrainScore,
    pub test: Metrics,
}

// ---------------------------------------------------------------------------
// Taylor diagram

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorRef {
    pub sd_actual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorPoint {
    pub name: String,
    pub sd_pred: f64,
    /// Correlation with the actual series; `None` for constant predictions.
    pub pearson_r: Option<f64>,
    pub centered_rmse: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorData {
    #[serde(rename = "ref")]
    pub reference: TaylorRef,
    pub points: Vec<TaylorPoint>,
}

pub fn taylor_points(models: &[(String, Vec<f64>)], actual: &[f64]) -> Result<TaylorData> {
    let sd_actual = standard_deviation(actual)?;
    let n = actual.len() as f64;
    let mean_a = actual.iter().sum::<f64>() / n;
    let mut points = Vec::with_capacity(models.len());
    for (name, pred) in models {
        check_aligned(pred, actual)?;
        let sd_pred = standard_deviation(pred)?;
        let mean_p = pred.iter().sum::<f64>() / n;
        let crmse = (pred
            .iter()
            .zip(actual)
            .map(|(p, a)| {
                let d = (p - mean_p) - (a - mean_a);
                d * d
            })
            .sum::<f64>()
            / n)
            .sqrt();
        let r = pearson(pred, actual).ok();
        points.push(TaylorPoint {
            name: name.clone(),
            sd_pred,
            pearson_r: r,
            centered_rmse: crmse,
            degenerate: r.is_none(),
        });
    }
    Ok(TaylorData {
        reference: TaylorRef { sd_actual },
        points,
    })
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Quarter-polar Taylor diagram: radius is the standard deviation and the
/// angle is `arccos(r)`. Dashed arcs mark centered RMSE around the reference.
pub fn render_taylor_svg(data: &TaylorData) -> String {
    use std::fmt::Write as _;

    const SIZE: f64 = 480.0;
    const PAD: f64 = 60.0;
    const PLOT: f64 = SIZE - 2.0 * PAD;
    let sd_ref = data.reference.sd_actual;
    let max_sd = data
        .points
        .iter()
        .map(|p| p.sd_pred)
        .fold(sd_ref, f64::max)
        .max(f64::MIN_POSITIVE)
        * 1.25;
    let scale = PLOT / max_sd;
    let ox = PAD;
    let oy = SIZE - PAD;
    let at = |r: f64, theta: f64| (ox + r * scale * theta.cos(), oy - r * scale * theta.sin());
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    // axes and outer arc
    let _ = writeln!(
        s,
        r##"<path d="M {ox} {oy} L {:.2} {oy} A {PLOT} {PLOT} 0 0 0 {ox} {:.2} Z" fill="none" stroke="#333"/>"##,
        ox + PLOT,
        oy - PLOT
    );
    // correlation rays
    for r in [0.2, 0.4, 0.6, 0.8, 0.9, 0.95, 0.99] {
        let th = f64::acos(r);
        let (x, y) = at(max_sd, th);
        let _ = writeln!(
            s,
            r##"<line x1="{ox}" y1="{oy}" x2="{x:.2}" y2="{y:.2}" stroke="#bbb" stroke-width="0.5"/><text x="{:.2}" y="{:.2}" fill="#555">{r}</text>"##,
            x + 3.0 * th.cos(),
            y - 3.0 * th.sin()
        );
    }
    // standard deviation arcs
    for k in 1..=4 {
        let r = max_sd * f64::from(k) / 4.0;
        let (x0, y0) = at(r, 0.0);
        let (x1, y1) = at(r, std::f64::consts::FRAC_PI_2);
        let _ = writeln!(
            s,
            r##"<path d="M {x0:.2} {y0:.2} A {rad:.2} {rad:.2} 0 0 0 {x1:.2} {y1:.2}" fill="none" stroke="#ddd"/><text x="{x0:.2}" y="{ty:.2}" text-anchor="middle" fill="#555">{r:.3}</text>"##,
            rad = r * scale,
            ty = oy + 14.0
        );
    }
    // centered RMSE arcs around the reference, clipped to the quadrant
    let _ = writeln!(
        s,
        r#"<clipPath id="quadrant"><path d="M {ox} {oy} L {:.2} {oy} A {PLOT} {PLOT} 0 0 0 {ox} {:.2} Z"/></clipPath>"#,
        ox + PLOT,
        oy - PLOT
    );
    let (rx, ry) = at(sd_ref, 0.0);
    for k in 1..=3 {
        let rad = sd_ref * 0.5 * f64::from(k) * scale;
        let _ = writeln!(
            s,
            r##"<circle class="crmse" cx="{rx:.2}" cy="{ry:.2}" r="{rad:.2}" fill="none" stroke="#7a7" stroke-dasharray="4 3" clip-path="url(#quadrant)"/>"##
        );
    }
    let _ = writeln!(
        s,
        r##"<circle class="marker ref" cx="{rx:.2}" cy="{ry:.2}" r="5" fill="black"/><text x="{rx:.2}" y="{:.2}" text-anchor="middle">REF</text>"##,
        ry - 8.0
    );
    for (i, p) in data.points.iter().enumerate() {
        let theta = p.pearson_r.map_or(0.0, |r| r.clamp(-1.0, 1.0).max(0.0).acos());
        let (x, y) = at(p.sd_pred, theta);
        let color = palette[i % palette.len()];
        let name = xml_escape(&p.name);
        let flag = if p.degenerate { " degenerate" } else { "" };
        let _ = writeln!(
            s,
            r#"<circle class="marker model{flag}" cx="{x:.2}" cy="{y:.2}" r="4" fill="{color}"><title>{name}</title></circle>"#
        );
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="{color}"/><text x="{:.2}" y="{:.2}">{name}</text>"#,
            SIZE - 110.0,
            20.0 + 16.0 * i as f64,
            SIZE - 95.0,
            29.0 + 16.0 * i as f64
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">standard deviation</text>"#,
        ox + PLOT / 2.0,
        SIZE - 18.0
    );
    s.push_str("</svg>\n");
    s
}

// ---------------------------------------------------------------------------
// Model training, persistence and evaluation

/// Split a matrix into train and test parts by seeded row shuffle.
pub fn split_matrix(m: &FeatureMatrix, ratio: f64, seed: u64) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let s = split_rows(m.n_rows(), ratio, seed)?;
    Ok((m.select(&s.train), m.select(&s.test)))
}

/// A fitted model of any kind plus the optional fusion front end that maps
/// raw features into the space it was trained in.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub seed: u64,
    pub split_seed: u64,
    pub split_ratio: f64,
    pub feature_names: Vec<String>,
    pub fusion: Option<FusionMap>,
    pub regressor: Regressor,
    /// Optimizer best-fitness history for WOA-ELM.
    pub history: Vec<f64>,
}

impl TrainedModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match &self.fusion {
            Some(f) => self.regressor.predict_one(&f.embed(x)),
            None => self.regressor.predict_one(x),
        }
    }

    pub fn predict_rows(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        if let Some(r) = x.iter().find(|r| r.len() != self.n_features()) {
            return Err(Error::param(format!(
                "model expects {} features, row has {}",
                self.n_features(),
                r.len()
            )));
        }
        Ok(x.iter().map(|r| self.predict_row(r)).collect())
    }
}

impl Predictor for TrainedModel {
    fn predict(&self, x: &[f64]) -> f64 {
        self.predict_row(x)
    }
}

/// Fit `kind` on `(x, y)` directly.
pub fn fit_regressor(kind: ModelKind, x: &[Vec<f64>], y: &[f64], cfg: &TrainConfig) -> Result<(Regressor, Vec<f64>)> {
    match kind {
        ModelKind::Elm => Ok((Regressor::Elm(elm_fit(x, y, cfg.hidden_l, cfg.activation, cfg.seed)?), Vec::new())),
        ModelKind::WoaElm => {
            let fit = woa_elm_train(x, y, cfg)?;
            Ok((Regressor::Elm(fit.model), fit.history))
        }
        _ => Ok((baseline_fit(kind, &cfg.baselines, x, y, cfg.seed)?, Vec::new())),
    }
}

/// Fit on the training part of `m`, optionally through a fused embedding of
/// dimension `fused_dim` learned on the training rows only.
pub fn train_model(
    m: &FeatureMatrix,
    kind: ModelKind,
    cfg: &TrainConfig,
    split_seed: u64,
    fused_dim: Option<usize>,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let (train, _) = split_matrix(m, cfg.split_ratio, split_seed)?;
    let (fusion, x) = match fused_dim {
        Some(d) => {
            let (map, emb) = FusionMap::fit(&train.rows, d, &cfg.tsne, cfg.fusion_scaling)?;
            (Some(map), emb.y)
        }
        None => (None, train.rows.clone()),
    };
    let (regressor, history) = fit_regressor(kind, &x, &train.targets, cfg)?;
    Ok(TrainedModel {
        kind,
        seed: cfg.seed,
        split_seed,
        split_ratio: cfg.split_ratio,
        feature_names: m.feature_names.clone(),
        fusion,
        regressor,
        history,
    })
}

/// Score a model on the split it was trained with.
pub fn evaluate_model(model: &TrainedModel, m: &FeatureMatrix) -> Result<MetricsReport> {
    if m.feature_names != model.feature_names {
        return Err(Error::data("feature columns differ from those the model was trained on"));
    }
    let (train, test) = split_matrix(m, model.split_ratio, model.split_seed)?;
    let ptrain = model.predict_rows(&train.rows)?;
    let ptest = model.predict_rows(&test.rows)?;
    Ok(MetricsReport {
        model: model.kind.name().to_string(),
        n_train: train.n_rows(),
        n_test: test.n_rows(),
        train: TrainScore {
            rmse: rmse(&ptrain, &train.targets)?,
            r2: r_squared(&ptrain, &train.targets)?,
        },
        test: Metrics::compute(&ptest, &test.targets)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElmSection {
    pub l: usize,
    pub activation: Activation,
    pub omega: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub beta: Vec<f64>,
}

/// On-disk form of a [`TrainedModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub seed: u64,
    pub split_seed: u64,
    pub split_ratio: f64,
    pub feature_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<Normalization>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elm: Option<ElmSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knn: Option<KnnModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<RegressionTree>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forest: Option<RandomForest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gbrt: Option<Gbrt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion: Option<FusionMap>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<f64>,
}

impl ModelFile {
    pub fn from_model(m: &TrainedModel) -> Self {
        let mut f = ModelFile {
            kind: m.kind,
            seed: m.seed,
            split_seed: m.split_seed,
            split_ratio: m.split_ratio,
            feature_names: m.feature_names.clone(),
            norm: None,
            elm: None,
            knn: None,
            tree: None,
            forest: None,
            gbrt: None,
            fusion: m.fusion.clone(),
            history: m.history.clone(),
        };
        match &m.regressor {
            Regressor::Elm(e) => {
                f.norm = Some(e.norm.clone());
                f.elm = Some(ElmSection {
                    l: e.hidden_nodes(),
                    activation: e.activation,
                    omega: e.omega.row_iter().map(|r| r.iter().copied().collect()).collect(),
                    b: e.bias.iter().copied().collect(),
                    beta: e.beta.column(0).iter().copied().collect(),
                });
            }
            Regressor::Knn(k) => f.knn = Some(k.clone()),
            Regressor::Tree(t) => f.tree = Some(t.clone()),
            Regressor::Forest(t) => f.forest = Some(t.clone()),
            Regressor::Gbrt(t) => f.gbrt = Some(t.clone()),
        }
        f
    }

    pub fn into_model(self) -> Result<TrainedModel> {
        let missing = |what: &str| Error::data(format!("model file of kind `{}` lacks its `{what}` section", self.kind));
        let regressor = match self.kind {
            ModelKind::Elm | ModelKind::WoaElm => {
                let e = self.elm.as_ref().ok_or_else(|| missing("elm"))?;
                let norm = self.norm.clone().ok_or_else(|| missing("norm"))?;
                let n = norm.means.len();
                if e.omega.len() != e.l || e.omega.iter().any(|r| r.len() != n) || e.b.len() != e.l || e.beta.len() != e.l {
                    return Err(Error::data("elm section dimensions are inconsistent"));
                }
                let flat: Vec<f64> = e.omega.iter().flatten().copied().collect();
                Regressor::Elm(ElmModel {
                    omega: DMatrix::from_row_slice(e.l, n, &flat),
                    bias: DVector::from_column_slice(&e.b),
                    beta: DMatrix::from_column_slice(e.l, 1, &e.beta),
                    activation: e.activation,
                    norm,
                })
            }
            ModelKind::Knn => Regressor::Knn(self.knn.clone().ok_or_else(|| missing("knn"))?),
            ModelKind::Tree => Regressor::Tree(self.tree.clone().ok_or_else(|| missing("tree"))?),
            ModelKind::Rf => Regressor::Forest(self.forest.clone().ok_or_else(|| missing("forest"))?),
            ModelKind::Gbrt => Regressor::Gbrt(self.gbrt.clone().ok_or_else(|| missing("gbrt"))?),
        };
        Ok(TrainedModel {
            kind: self.kind,
            seed: self.seed,
            split_seed: self.split_seed,
            split_ratio: self.split_ratio,
            feature_names: self.feature_names,
            fusion: self.fusion,
            regressor,
            history: self.history,
        })
    }
}

// ---------------------------------------------------------------------------
// Before/after fusion comparison

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub rmse: f64,
    pub train_r2: f64,
    pub test_r2: f64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub item: String,
    pub before: f64,
    pub after: f64,
    pub diff_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub full: ArmResult,
    pub fused: ArmResult,
    pub fused_dim: usize,
    pub rows: Vec<ComparisonRow>,
}

impl FusionReport {
    /// The same report with wall times zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.full.wall_time_ms = 0.0;
        r.fused.wall_time_ms = 0.0;
        for row in &mut r.rows {
            if row.item.starts_with("Time") {
                row.before = 0.0;
                row.after = 0.0;
                row.diff_percent = 0.0;
            }
        }
        r
    }
}

fn run_arm(train_x: &[Vec<f64>], train_y: &[f64], test_x: &[Vec<f64>], test_y: &[f64], cfg: &TrainConfig) -> Result<ArmResult> {
    let start = Instant::now();
    let fit = woa_elm_train(train_x, train_y, cfg)?;
    let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    let ptrain = fit.model.predict(train_x)?;
    let ptest = fit.model.predict(test_x)?;
    Ok(ArmResult {
        rmse: rmse(&ptest, test_y)?,
        train_r2: r_squared(&ptrain, train_y)?,
        test_r2: r_squared(&ptest, test_y)?,
        wall_time_ms,
    })
}

/// Train WOA-ELM on all features and on a `fused_dim`-dimensional embedding
/// and tabulate RMSE, train/test R² and training time side by side.
///
/// Differences are relative changes in percent, signed so that a positive
/// value is an improvement for RMSE and time and a gain for R².
pub fn fused_comparison(m: &FeatureMatrix, cfg: &TrainConfig, split_seed: u64, fused_dim: usize) -> Result<FusionReport> {
    cfg.validate()?;
    let (train, test) = split_matrix(m, cfg.split_ratio, split_seed)?;
    let full = run_arm(&train.rows, &train.targets, &test.rows, &test.targets, cfg)?;

    let (map, emb) = FusionMap::fit(&train.rows, fused_dim, &cfg.tsne, cfg.fusion_scaling)?;
    let test_emb: Vec<Vec<f64>> = test.rows.iter().map(|r| map.embed(r)).collect();
    let fused = run_arm(&emb.y, &train.targets, &test_emb, &test.targets, cfg)?;

    let reduction = |b: f64, a: f64| 100.0 * (b - a) / b;
    let gain = |b: f64, a: f64| 100.0 * (a - b) / b;
    let row = |item: &str, before: f64, after: f64, f: &dyn Fn(f64, f64) -> f64| ComparisonRow {
        item: item.to_string(),
        before,
        after,
        diff_percent: f(before, after),
    };
    let rows = vec![
        row("RMSE", full.rmse, fused.rmse, &reduction),
        row("Training Data R2", full.train_r2, fused.train_r2, &gain),
        row("Test Data R2", full.test_r2, fused.test_r2, &gain),
        row("Time(ms)", full.wall_time_ms, fused.wall_time_ms, &reduction),
    ];
    Ok(FusionReport {
        full,
        fused,
        fused_dim,
        rows,
    })
}
