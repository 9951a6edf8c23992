//! Voltage study ranges and per-cycle charging features.
//!
//! Feature layout (times in seconds relative to the first sample):
//!
//! | name | meaning                                   |
//! |------|-------------------------------------------|
//! | F1   | initial voltage                           |
//! | F2   | final voltage                             |
//! | F3   | total charge time                         |
//! | F4   | slope of the whole-cycle line fit         |
//! | F5   | intercept of the whole-cycle line fit     |
//! | F6   | time of first entry into VS1              |
//! | F7   | time spent in VS1                         |
//! | F8   | time spent in VS2 (plateau)               |
//! | F9   | time of entry into VS2                    |
//! | F10  | time of entry into VS3                    |
//! | F11  | time-weighted mean voltage                |
//! | F12  | time spent in VS3                         |
//! | F13  | median sample voltage                     |
//!
//! Only F8, F12 and F13 have a fixed physical reading in the literature this
//! tool follows; the remaining assignments are a documented reconstruction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CycleRecord, Dataset, Sample, SplitDataset};
use crate::error::{Error, Result};
use crate::json::fmt_num;

pub const N_FEATURES: usize = 13;

/// Window of the centered moving average applied to dV/dt.
pub const SMOOTHING_WINDOW: usize = 5;

pub fn feature_names() -> Vec<String> {
    (1..=N_FEATURES).map(|i| format!("F{i}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least-squares line of voltage on time.
pub fn fit_charging_line(samples: &[Sample]) -> Result<LineFit> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::data("line fit needs at least two samples"));
    }
    let nf = n as f64;
    let t_mean = samples.iter().map(|s| s.time_s).sum::<f64>() / nf;
    let v_mean = samples.iter().map(|s| s.voltage_v).sum::<f64>() / nf;
    let (mut stt, mut stv, mut svv) = (0.0, 0.0, 0.0);
    for s in samples {
        let dt = s.time_s - t_mean;
        let dv = s.voltage_v - v_mean;
        stt += dt * dt;
        stv += dt * dv;
        svv += dv * dv;
    }
    if stt == 0.0 {
        return Err(Error::data("line fit: all sample times are identical"));
    }
    let slope = stv / stt;
    let intercept = v_mean - slope * t_mean;
    let r2 = if svv == 0.0 {
        1.0
    } else {
        (stv * stv / (stt * svv)).clamp(0.0, 1.0)
    };
    Ok(LineFit { slope, intercept, r2 })
}

/// The three contiguous voltage study ranges, in volts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageSegments {
    pub vs1: (f64, f64),
    pub vs2: (f64, f64),
    pub vs3: (f64, f64),
}

impl VoltageSegments {
    pub fn new(vs1: (f64, f64), vs2: (f64, f64), vs3: (f64, f64)) -> Result<Self> {
        let s = Self { vs1, vs2, vs3 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let contiguous = self.vs1.1 == self.vs2.0 && self.vs2.1 == self.vs3.0;
        let ordered = self.vs1.0 < self.vs1.1 && self.vs1.1 < self.vs2.1 && self.vs2.1 < self.vs3.1;
        if contiguous && ordered {
            Ok(())
        } else {
            Err(Error::data(format!(
                "voltage segments must be contiguous and increasing: {self:?}"
            )))
        }
    }
}

/// dV/dt at every sample (central differences, one-sided at the ends),
/// smoothed by a centered moving average that shrinks at the edges.
pub fn smoothed_derivative(samples: &[Sample]) -> Vec<f64> {
    let n = samples.len();
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            (samples[b].voltage_v - samples[a].voltage_v) / (samples[b].time_s - samples[a].time_s)
        })
        .collect();
    let half = SMOOTHING_WINDOW / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            raw[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Longest run of consecutive indices whose value is `<= threshold`
/// (first one on ties), as an inclusive index range.
fn longest_run_below(values: &[f64], threshold: f64) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for (i, &d) in values.iter().chain(std::iter::once(&f64::INFINITY)).enumerate() {
        match (d <= threshold, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                let len = i - s;
                if best.is_none_or(|(bs, be)| len > be + 1 - bs) {
                    best = Some((s, i - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    best
}

fn snap(v: f64, grid_mv: f64, mode: fn(f64) -> f64) -> f64 {
    mode(v * 1000.0 / grid_mv) * grid_mv / 1000.0
}

/// Locate the plateau of a reference charge curve and derive VS1/VS2/VS3.
///
/// VS2 is the longest contiguous stretch of samples whose smoothed dV/dt is
/// at most `alpha` times the median smoothed dV/dt. Its voltage bounds are
/// snapped outward to multiples of `grid_mv`; VS1 starts at the curve's
/// first voltage (snapped down) and VS3 ends at its last voltage (snapped up).
pub fn detect_segments(reference: &[Sample], alpha: f64, grid_mv: f64) -> Result<VoltageSegments> {
    if !(alpha > 0.0) || !(grid_mv > 0.0) {
        return Err(Error::param("alpha and grid_mv must be positive"));
    }
    if reference.len() < 3 {
        return Err(Error::data("reference curve needs at least 3 samples"));
    }
    let v_first = reference[0].voltage_v;
    let v_last = reference[reference.len() - 1].voltage_v;
    let grid_v = grid_mv / 1000.0;
    if v_last - v_first < 3.0 * grid_v {
        return Err(Error::data(format!(
            "reference curve spans {:.1} mV, need at least {:.1} mV",
            (v_last - v_first) * 1000.0,
            3.0 * grid_mv
        )));
    }
    let deriv = smoothed_derivative(reference);
    let threshold = alpha * median(&deriv);
    let (s, e) = longest_run_below(&deriv, threshold).ok_or_else(|| {
        Error::data(format!(
            "no plateau found: dV/dt never falls below {alpha} x median; try a larger alpha"
        ))
    })?;
    let run = &reference[s..=e];
    let lo = run.iter().map(|p| p.voltage_v).fold(f64::INFINITY, f64::min);
    let hi = run.iter().map(|p| p.voltage_v).fold(f64::NEG_INFINITY, f64::max);

    // Snap outward so the band covers the whole plateau and its bounds sit
    // on the steeper flanks, where crossing times are well defined.
    let mut lo = snap(lo + 1e-9, grid_mv, f64::floor);
    let mut hi = snap(hi - 1e-9, grid_mv, f64::ceil);
    if hi <= lo {
        hi = snap(lo + grid_v, grid_mv, f64::round);
    }
    let start = snap(v_first, grid_mv, f64::floor);
    let end = snap(v_last, grid_mv, f64::ceil);
    if lo <= start {
        lo = snap(start + grid_v, grid_mv, f64::round);
    }
    VoltageSegments::new((start, lo), (lo, hi), (hi, end)).map_err(|_| {
        Error::data(format!(
            "plateau [{lo:.3}, {hi:.3}] V touches the curve ends [{start:.3}, {end:.3}] V; try a smaller alpha"
        ))
    })
}

/// Time at which the curve crosses `level`, linearly interpolated between the
/// bracketing samples.
///
/// Sensor ripple can make a nearly flat curve cross a level several times;
/// the crossing is then the midpoint of the first and the last upward
/// crossing, which reduces to the single crossing on a monotone curve.
/// Curves starting at or above the level give the first time, curves never
/// reaching it give the last time.
pub fn crossing_time(samples: &[Sample], level: f64) -> f64 {
    let first = samples[0];
    if first.voltage_v >= level {
        return first.time_s;
    }
    let interp = |a: Sample, b: Sample| {
        let frac = (level - a.voltage_v) / (b.voltage_v - a.voltage_v);
        a.time_s + frac * (b.time_s - a.time_s)
    };
    let mut up = samples
        .windows(2)
        .filter(|w| w[0].voltage_v < level && w[1].voltage_v >= level)
        .map(|w| interp(w[0], w[1]));
    match up.next() {
        Some(t_first) => 0.5 * (t_first + up.next_back().unwrap_or(t_first)),
        None => samples[samples.len() - 1].time_s,
    }
}

/// Time spent in each of VS1, VS2, VS3, in seconds.
pub fn segment_times(samples: &[Sample], seg: &VoltageSegments) -> [f64; 3] {
    let span = |(lo, hi): (f64, f64)| (crossing_time(samples, hi) - crossing_time(samples, lo)).max(0.0);
    [span(seg.vs1), span(seg.vs2), span(seg.vs3)]
}

/// Time-weighted mean voltage (trapezoidal rule).
fn time_weighted_mean(samples: &[Sample]) -> f64 {
    let total = samples[samples.len() - 1].time_s - samples[0].time_s;
    let area: f64 = samples
        .windows(2)
        .map(|w| 0.5 * (w[0].voltage_v + w[1].voltage_v) * (w[1].time_s - w[0].time_s))
        .sum();
    area / total
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub f: [f64; N_FEATURES],
    pub target: f64,
}

/// F1..F13 for one cycle; the target is the raw discharge capacity.
pub fn extract_features(rec: &CycleRecord, seg: &VoltageSegments) -> Result<FeatureVector> {
    let s = &rec.samples;
    if s.len() < 2 {
        return Err(Error::data(format!("cycle {}: too few samples", rec.cycle_index)));
    }
    let t0 = s[0].time_s;
    let line = fit_charging_line(s)?;
    let [t1, t2, t3] = segment_times(s, seg);
    let voltages: Vec<f64> = s.iter().map(|p| p.voltage_v).collect();
    let f = [
        s[0].voltage_v,
        s[s.len() - 1].voltage_v,
        rec.total_time(),
        line.slope,
        line.intercept,
        crossing_time(s, seg.vs1.0) - t0,
        t1,
        t2,
        crossing_time(s, seg.vs2.0) - t0,
        crossing_time(s, seg.vs3.0) - t0,
        time_weighted_mean(s),
        t3,
        median(&voltages),
    ];
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric(format!("cycle {}: non-finite feature", rec.cycle_index)));
    }
    Ok(FeatureVector {
        f,
        target: rec.discharge_capacity,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    #[default]
    Raw,
    Normalized,
}

/// Rectangular feature table with one regression target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub cycles: Vec<u32>,
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(
        feature_names: Vec<String>,
        target_name: impl Into<String>,
        cycles: Vec<u32>,
        rows: Vec<Vec<f64>>,
        targets: Vec<f64>,
    ) -> Result<Self> {
        let m = Self {
            feature_names,
            target_name: target_name.into(),
            cycles,
            rows,
            targets,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rows.len();
        if n < 3 {
            return Err(Error::data(format!("feature matrix needs at least 3 rows, has {n}")));
        }
        if self.targets.len() != n || self.cycles.len() != n {
            return Err(Error::data("feature matrix: row, target and cycle counts differ"));
        }
        let m = self.feature_names.len();
        if m == 0 {
            return Err(Error::data("feature matrix has no feature columns"));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.len() != m {
                return Err(Error::data(format!("row {i} has {} values, expected {m}", r.len())));
            }
            if r.iter().chain(std::iter::once(&self.targets[i])).any(|x| !x.is_finite()) {
                return Err(Error::data(format!("row {i} contains a non-finite value")));
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// Sub-matrix with the given rows, in the given order.
    pub fn select(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            cycles: idx.iter().map(|&i| self.cycles[i]).collect(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
        }
    }

    /// `features.csv` text: `cycle,<features...>,target`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("cycle,{},target\n", self.feature_names.join(","));
        for ((c, r), t) in self.cycles.iter().zip(&self.rows).zip(&self.targets) {
            out.push_str(&c.to_string());
            for x in r {
                out.push(',');
                out.push_str(&fmt_num(*x));
            }
            out.push(',');
            out.push_str(&fmt_num(*t));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
            .iter()
            .map(str::to_string)
            .collect();
        if header.len() < 3 || header[0] != "cycle" || header[header.len() - 1] != "target" {
            return Err(Error::Parse {
                line: 1,
                msg: "expected header `cycle,<features...>,target`".into(),
            });
        }
        let names = header[1..header.len() - 1].to_vec();
        let (mut cycles, mut rows, mut targets) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |what: &str| Error::Parse { line, msg: format!("invalid {what}") };
            if rec.len() != header.len() {
                return Err(bad("field count"));
            }
            cycles.push(rec[0].parse().map_err(|_| bad("cycle"))?);
            let vals = rec
                .iter()
                .skip(1)
                .map(|x| x.parse::<f64>().map_err(|_| bad("number")))
                .collect::<Result<Vec<f64>>>()?;
            targets.push(vals[vals.len() - 1]);
            rows.push(vals[..vals.len() - 1].to_vec());
        }
        FeatureMatrix::new(names, "target", cycles, rows, targets)
    }
}

/// One feature row per cycle, in cycle order.
pub fn build_matrix(ds: &Dataset, seg: &VoltageSegments, mode: TargetMode) -> Result<FeatureMatrix> {
    let vectors = ds
        .cycles
        .par_iter()
        .map(|c| {
            extract_features(c, seg).map_err(|e| Error::data(format!("cycle {}: {e}", c.cycle_index)))
        })
        .collect::<Result<Vec<_>>>()?;
    let scale = match mode {
        TargetMode::Raw => 1.0,
        TargetMode::Normalized => 1.0 / ds.nominal_capacity,
    };
    FeatureMatrix::new(
        feature_names(),
        match mode {
            TargetMode::Raw => "capacity_mah",
            TargetMode::Normalized => "capacity_ratio",
        },
        ds.cycles.iter().map(|c| c.cycle_index).collect(),
        vectors.iter().map(|v| v.f.to_vec()).collect(),
        vectors.iter().map(|v| v.target * scale).collect(),
    )
}

/// Row index of the segmentation reference: the median of the training rows.
pub fn reference_row(split: &SplitDataset) -> Result<usize> {
    let mut train = split.train.clone();
    if train.is_empty() {
        return Err(Error::data("empty training split"));
    }
    train.sort_unstable();
    Ok(train[train.len() / 2])
}

/// Contents of `segments.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentsFile {
    pub vs1: [f64; 2],
    pub vs2: [f64; 2],
    pub vs3: [f64; 2],
    pub alpha: f64,
    pub grid_mv: f64,
    pub reference_cycle: u32,
}

impl SegmentsFile {
    pub fn new(seg: &VoltageSegments, alpha: f64, grid_mv: f64, reference_cycle: u32) -> Self {
        Self {
            vs1: [seg.vs1.0, seg.vs1.1],
            vs2: [seg.vs2.0, seg.vs2.1],
            vs3: [seg.vs3.0, seg.vs3.1],
            alpha,
            grid_mv,
            reference_cycle,
        }
    }

    pub fn segments(&self) -> Result<VoltageSegments> {
        VoltageSegments::new(
            (self.vs1[0], self.vs1[1]),
            (self.vs2[0], self.vs2[1]),
            (self.vs3[0], self.vs3[1]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SynthConfig};

    fn line(n: usize, dt: f64, slope: f64, icpt: f64) -> Vec<Sample> {
        (0..n).map(|i| Sample::new(i as f64 * dt, icpt + slope * i as f64 * dt)).collect()
    }

    #[test]
    fn exact_line_fit() {
        let f = fit_charging_line(&line(20, 10.0, 0.001, 3.0)).unwrap();
        assert!((f.slope - 0.001).abs() < 1e-15);
        assert!((f.intercept - 3.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);

        let two = [Sample::new(0.0, 3.0), Sample::new(100.0, 3.2)];
        let f = fit_charging_line(&two).unwrap();
        assert!((f.slope - 0.002).abs() < 1e-15);
        assert!((f.intercept - 3.0).abs() < 1e-12);

        let same = [Sample::new(5.0, 3.0), Sample::new(5.0, 3.2)];
        assert!(fit_charging_line(&same).is_err());
    }

    /// Steep rise over the first third, flat middle third, steep final third.
    fn three_phase(n_per: usize) -> Vec<Sample> {
        let mut out = Vec::new();
        let mut v = 3.0;
        for (k, step) in [0.003, 0.0002, 0.003].into_iter().enumerate() {
            for i in 0..n_per {
                if k + i > 0 {
                    v += step;
                }
                out.push(Sample::new(out.len() as f64 * 10.0, v));
            }
        }
        out
    }

    #[test]
    fn constructed_plateau_is_found() {
        let curve = three_phase(100);
        let seg = detect_segments(&curve, 0.5, 10.0).unwrap();
        let flat_lo = curve[100].voltage_v;
        let flat_hi = curve[199].voltage_v;
        assert!((seg.vs2.0 - flat_lo).abs() <= 0.010, "{seg:?} vs {flat_lo}");
        assert!((seg.vs2.1 - flat_hi).abs() <= 0.010, "{seg:?} vs {flat_hi}");
    }

    #[test]
    fn linear_curve_has_no_plateau() {
        let err = detect_segments(&line(100, 10.0, 0.001, 3.0), 0.5, 10.0).unwrap_err();
        assert!(err.to_string().contains("alpha"));
    }

    #[test]
    fn short_span_rejected() {
        assert!(detect_segments(&line(100, 1.0, 1e-4, 3.0), 0.5, 10.0).is_err());
    }

    #[test]
    fn detection_ignores_time_scale() {
        let curve = synth_dataset(&SynthConfig::default()).unwrap().cycles[100].samples.clone();
        let base = detect_segments(&curve, 0.5, 10.0).unwrap();
        for c in [0.01, 0.37, 3.0, 250.0] {
            let scaled: Vec<Sample> = curve.iter().map(|s| Sample::new(s.time_s * c, s.voltage_v)).collect();
            assert_eq!(detect_segments(&scaled, 0.5, 10.0).unwrap(), base, "scale {c}");
        }
    }

    #[test]
    fn crossing_interpolates_between_brackets() {
        let s = [Sample::new(10.0, 3.20), Sample::new(30.0, 3.30)];
        let t = crossing_time(&s, 3.27);
        // (3.27 - 3.20) / (3.30 - 3.20) * (30 - 10) + 10 = 24
        assert!((t - 24.0).abs() < 1e-9);
    }

    #[test]
    fn ripple_crossings_average() {
        let s = [
            Sample::new(0.0, 3.0),
            Sample::new(10.0, 3.2),
            Sample::new(20.0, 3.1),
            Sample::new(30.0, 3.2),
            Sample::new(40.0, 3.4),
        ];
        // upward crossings of 3.15 at 7.5 s and 25 s
        assert!((crossing_time(&s, 3.15) - 16.25).abs() < 1e-12);
        assert_eq!(crossing_time(&s, 2.9), 0.0);
        assert_eq!(crossing_time(&s, 3.5), 40.0);
    }

    #[test]
    fn segment_times_partition_total_time() {
        let curve = line(101, 1.0, 0.01, 3.0); // 3.0 V .. 4.0 V
        let seg = VoltageSegments::new((3.0, 3.3), (3.3, 3.6), (3.6, 4.0)).unwrap();
        let [a, b, c] = segment_times(&curve, &seg);
        assert!((a + b + c - 100.0).abs() < 1e-9);
        assert!((b - 30.0).abs() < 1e-9);

        // ends inside VS2
        let [_, b, c] = segment_times(&curve[..46], &seg);
        assert_eq!(c, 0.0);
        assert!((b - 15.0).abs() < 1e-9);
    }

    #[test]
    fn exact_plateau_duration_is_f8() {
        // 3.0 -> 3.3 in 30 s, plateau at 3.3..3.31 for 200 s, then 3.31 -> 3.6 in 29 s
        let mut s = Vec::new();
        for i in 0..=30 {
            s.push(Sample::new(f64::from(i), 3.0 + 0.01 * f64::from(i)));
        }
        for i in 1..=200 {
            s.push(Sample::new(30.0 + f64::from(i), 3.3 + 0.00005 * f64::from(i)));
        }
        for i in 1..=29 {
            s.push(Sample::new(230.0 + f64::from(i), 3.31 + 0.01 * f64::from(i)));
        }
        let rec = CycleRecord {
            cycle_index: 1,
            samples: s,
            discharge_capacity: 100.0,
        };
        let seg = VoltageSegments::new((3.0, 3.3), (3.3, 3.31), (3.31, 3.6)).unwrap();
        let fv = extract_features(&rec, &seg).unwrap();
        assert!((fv.f[7] - 200.0).abs() < 1e-6, "F8 = {}", fv.f[7]);
        assert!((fv.f[6] - 30.0).abs() < 1e-6);
        assert!((fv.f[11] - 29.0).abs() < 1e-6);
        assert_eq!(fv.f[2], 259.0);
    }

    #[test]
    fn median_of_symmetric_profile_is_midpoint() {
        let s: Vec<Sample> = (0..21).map(|i| Sample::new(f64::from(i), 3.0 + 0.05 * f64::from(i))).collect();
        let rec = CycleRecord {
            cycle_index: 1,
            samples: s,
            discharge_capacity: 1.0,
        };
        let seg = VoltageSegments::new((3.0, 3.3), (3.3, 3.7), (3.7, 4.0)).unwrap();
        let fv = extract_features(&rec, &seg).unwrap();
        assert!((fv.f[12] - 3.5).abs() < 1e-12);
        assert!((fv.f[10] - 3.5).abs() < 1e-12);
    }

    #[test]
    fn matrix_rows_match_per_cycle_extraction() {
        let ds = synth_dataset(&SynthConfig {
            n_cycles: 50,
            ..Default::default()
        })
        .unwrap();
        let seg = detect_segments(&ds.cycles[25].samples, 0.5, 10.0).unwrap();
        let m = build_matrix(&ds, &seg, TargetMode::Raw).unwrap();
        assert_eq!((m.n_rows(), m.n_features()), (50, 13));
        assert_eq!(m.rows[0], extract_features(&ds.cycles[0], &seg).unwrap().f.to_vec());

        let norm = build_matrix(&ds, &seg, TargetMode::Normalized).unwrap();
        assert!(norm.targets.iter().all(|&t| t <= 1.01 && t > 0.5));

        let back = FeatureMatrix::from_csv(&m.to_csv()).unwrap();
        assert_eq!(back.n_rows(), 50);
        assert_eq!(back.cycles, m.cycles);
        for (a, b) in back.rows.iter().flatten().zip(m.rows.iter().flatten()) {
            assert!((a - b).abs() <= 1e-11 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn segments_file_round_trip() {
        let seg = VoltageSegments::new((3.0, 3.3), (3.3, 3.6), (3.6, 4.0)).unwrap();
        let f = SegmentsFile::new(&seg, 0.5, 10.0, 7);
        let back: SegmentsFile = serde_json::from_str(&crate::json::to_string(&f).unwrap()).unwrap();
        assert_eq!(back.segments().unwrap(), seg);
        assert!(VoltageSegments::new((3.0, 3.3), (3.31, 3.6), (3.6, 4.0)).is_err());
    }
}
