//! Cycle datasets: CSV ingestion, validation, canonical JSON, train/test
//! splitting and a synthetic capacity-fade generator.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Allowed downward voltage ripple within a constant-current charge, in volts.
pub const VOLTAGE_RIPPLE_V: f64 = 0.005;

/// Minimum number of samples in one charge curve.
pub const MIN_SAMPLES: usize = 10;

pub const SAMPLES_HEADER: [&str; 4] = ["battery_id", "cycle", "time_s", "voltage_v"];
pub const CAPACITY_HEADER: [&str; 3] = ["battery_id", "cycle", "discharge_capacity_mah"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub time_s: f64,
    pub voltage_v: f64,
}

impl Sample {
    pub fn new(time_s: f64, voltage_v: f64) -> Self {
        Self { time_s, voltage_v }
    }
}

/// A charge curve read from `samples.csv`, before capacities are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeCurve {
    pub battery_id: String,
    pub cycle_index: u32,
    pub samples: Vec<Sample>,
}

/// One charge cycle with its measured discharge capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub cycle_index: u32,
    pub samples: Vec<Sample>,
    pub discharge_capacity: f64,
}

impl CycleRecord {
    pub fn total_time(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.time_s - a.time_s,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub battery_id: String,
    pub nominal_capacity: f64,
    pub cycles: Vec<CycleRecord>,
}

/// Check the charge-curve invariants for one cycle.
pub fn validate_curve(cycle_index: u32, samples: &[Sample]) -> Result<()> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::data(format!(
            "cycle {cycle_index}: {} samples, at least {MIN_SAMPLES} required",
            samples.len()
        )));
    }
    let mut running_max = f64::NEG_INFINITY;
    for (i, s) in samples.iter().enumerate() {
        if !s.time_s.is_finite() || !s.voltage_v.is_finite() || s.time_s < 0.0 {
            return Err(Error::data(format!(
                "cycle {cycle_index}: sample {i} has invalid time or voltage"
            )));
        }
        if i > 0 && s.time_s <= samples[i - 1].time_s {
            return Err(Error::data(format!(
                "cycle {cycle_index}: time not strictly increasing at sample {i} ({} after {})",
                s.time_s,
                samples[i - 1].time_s
            )));
        }
        if s.voltage_v < running_max - VOLTAGE_RIPPLE_V - 1e-12 {
            return Err(Error::data(format!(
                "cycle {cycle_index}: voltage drops {:.4} V below its running maximum at sample {i}",
                running_max - s.voltage_v
            )));
        }
        running_max = running_max.max(s.voltage_v);
    }
    Ok(())
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn check_header(rdr: &mut csv::Reader<&[u8]>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    let got: Vec<&str> = header.iter().collect();
    if got.is_empty() || (got.len() == 1 && got[0].is_empty()) {
        // Completely empty input.
        return Ok(());
    }
    if got != expected {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<T> {
    let raw = rec.get(idx).ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing field `{name}`"),
    })?;
    raw.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("field `{name}` is not a valid number: `{raw}`"),
    })
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// Parse `samples.csv` text into per-cycle charge curves sorted by cycle.
///
/// Rows of one cycle keep their file order, which must already be strictly
/// increasing in time.
pub fn parse_samples(csv_text: &str) -> Result<Vec<ChargeCurve>> {
    let mut rdr = reader(csv_text);
    check_header(&mut rdr, &SAMPLES_HEADER)?;
    let mut groups: BTreeMap<u32, ChargeCurve> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = line_of(&rec);
        if rec.len() != SAMPLES_HEADER.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", SAMPLES_HEADER.len(), rec.len()),
            });
        }
        let battery_id = rec[0].to_string();
        let cycle: u32 = field(&rec, 1, "cycle", line)?;
        let time_s: f64 = field(&rec, 2, "time_s", line)?;
        let voltage_v: f64 = field(&rec, 3, "voltage_v", line)?;
        if cycle == 0 {
            return Err(Error::Parse {
                line,
                msg: "cycle index must be positive".into(),
            });
        }
        let curve = groups.entry(cycle).or_insert_with(|| ChargeCurve {
            battery_id: battery_id.clone(),
            cycle_index: cycle,
            samples: Vec::new(),
        });
        if curve.battery_id != battery_id {
            return Err(Error::Parse {
                line,
                msg: format!(
                    "cycle {cycle} mixes battery ids `{}` and `{battery_id}`",
                    curve.battery_id
                ),
            });
        }
        if let Some(prev) = curve.samples.last() {
            if time_s <= prev.time_s {
                return Err(Error::Data(format!(
                    "cycle {cycle}: time not strictly increasing at line {line} ({time_s} after {})",
                    prev.time_s
                )));
            }
        }
        curve.samples.push(Sample::new(time_s, voltage_v));
    }
    let curves: Vec<ChargeCurve> = groups.into_values().collect();
    for c in &curves {
        validate_curve(c.cycle_index, &c.samples)?;
    }
    Ok(curves)
}

/// Parse `capacity.csv` into cycle → discharge capacity (mAh).
pub fn parse_capacity(csv_text: &str) -> Result<BTreeMap<u32, f64>> {
    let mut rdr = reader(csv_text);
    check_header(&mut rdr, &CAPACITY_HEADER)?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = line_of(&rec);
        if rec.len() != CAPACITY_HEADER.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", CAPACITY_HEADER.len(), rec.len()),
            });
        }
        let cycle: u32 = field(&rec, 1, "cycle", line)?;
        let cap: f64 = field(&rec, 2, "discharge_capacity_mah", line)?;
        if !(cap.is_finite() && cap > 0.0) {
            return Err(Error::Parse {
                line,
                msg: format!("cycle {cycle}: discharge capacity must be positive, got {cap}"),
            });
        }
        if out.insert(cycle, cap).is_some() {
            return Err(Error::Parse {
                line,
                msg: format!("duplicate capacity entry for cycle {cycle}"),
            });
        }
    }
    Ok(out)
}

/// Join curves with capacities into a dataset sorted by cycle index.
pub fn assemble_dataset(
    records: Vec<ChargeCurve>,
    capacities: &BTreeMap<u32, f64>,
    battery_id: &str,
    nominal_capacity: f64,
) -> Result<Dataset> {
    if !(nominal_capacity.is_finite() && nominal_capacity > 0.0) {
        return Err(Error::param("nominal capacity must be positive"));
    }
    let mut seen = HashSet::new();
    let mut missing = Vec::new();
    let mut cycles = Vec::with_capacity(records.len());
    for r in records {
        if r.battery_id != battery_id {
            return Err(Error::data(format!(
                "cycle {} belongs to battery `{}`, expected `{battery_id}`",
                r.cycle_index, r.battery_id
            )));
        }
        if !seen.insert(r.cycle_index) {
            return Err(Error::data(format!("duplicate cycle {}", r.cycle_index)));
        }
        validate_curve(r.cycle_index, &r.samples)?;
        match capacities.get(&r.cycle_index) {
            Some(&cap) => cycles.push(CycleRecord {
                cycle_index: r.cycle_index,
                samples: r.samples,
                discharge_capacity: cap,
            }),
            None => missing.push(r.cycle_index),
        }
    }
    if !missing.is_empty() {
        missing.sort_unstable();
        let list: Vec<String> = missing.iter().map(u32::to_string).collect();
        return Err(Error::data(format!(
            "no discharge capacity for cycle(s) {}",
            list.join(", ")
        )));
    }
    cycles.sort_by_key(|c| c.cycle_index);
    Ok(Dataset {
        battery_id: battery_id.to_string(),
        nominal_capacity,
        cycles,
    })
}

impl Dataset {
    /// `samples.csv` text for this dataset.
    pub fn samples_csv(&self) -> String {
        let mut out = SAMPLES_HEADER.join(",");
        out.push('\n');
        for c in &self.cycles {
            for s in &c.samples {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    self.battery_id,
                    c.cycle_index,
                    crate::json::fmt_num(s.time_s),
                    crate::json::fmt_num(s.voltage_v)
                ));
            }
        }
        out
    }

    /// `capacity.csv` text for this dataset.
    pub fn capacity_csv(&self) -> String {
        let mut out = CAPACITY_HEADER.join(",");
        out.push('\n');
        for c in &self.cycles {
            out.push_str(&format!(
                "{},{},{}\n",
                self.battery_id,
                c.cycle_index,
                crate::json::fmt_num(c.discharge_capacity)
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(&DatasetJson::from(self))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: DatasetJson = serde_json::from_str(text)?;
        let battery_id = raw.battery_id.clone();
        let mut caps = BTreeMap::new();
        let mut curves = Vec::with_capacity(raw.cycles.len());
        for c in raw.cycles {
            if caps.insert(c.cycle, c.capacity_mah).is_some() {
                return Err(Error::data(format!("duplicate cycle {}", c.cycle)));
            }
            if !(c.capacity_mah > 0.0) {
                return Err(Error::data(format!("cycle {}: capacity must be positive", c.cycle)));
            }
            curves.push(ChargeCurve {
                battery_id: battery_id.clone(),
                cycle_index: c.cycle,
                samples: c.samples.iter().map(|&[t, v]| Sample::new(t, v)).collect(),
            });
        }
        assemble_dataset(curves, &caps, &battery_id, raw.nominal_capacity_mah)
    }
}

#[derive(Serialize, Deserialize)]
struct CycleJson {
    cycle: u32,
    samples: Vec<[f64; 2]>,
    capacity_mah: f64,
}

#[derive(Serialize, Deserialize)]
struct DatasetJson {
    battery_id: String,
    nominal_capacity_mah: f64,
    cycles: Vec<CycleJson>,
}

impl From<&Dataset> for DatasetJson {
    fn from(ds: &Dataset) -> Self {
        DatasetJson {
            battery_id: ds.battery_id.clone(),
            nominal_capacity_mah: ds.nominal_capacity,
            cycles: ds
                .cycles
                .iter()
                .map(|c| CycleJson {
                    cycle: c.cycle_index,
                    samples: c.samples.iter().map(|s| [s.time_s, s.voltage_v]).collect(),
                    capacity_mah: c.discharge_capacity,
                })
                .collect(),
        }
    }
}

/// Row indices of a train/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Number of training rows: `ratio * n` rounded half-up, kept within `[1, n - 1]`.
pub fn train_size(n_rows: usize, ratio: f64) -> usize {
    let k = (ratio * n_rows as f64 + 0.5).floor() as usize;
    k.clamp(1, n_rows - 1)
}

fn check_split_args(n_rows: usize, ratio: f64) -> Result<()> {
    if n_rows < 3 {
        return Err(Error::param(format!("need at least 3 rows to split, got {n_rows}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::param(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    Ok(())
}

/// Uniform shuffle of `0..n_rows`, then prefix split. Both index lists are
/// returned in ascending order.
pub fn split_rows(n_rows: usize, ratio: f64, seed: u64) -> Result<SplitDataset> {
    check_split_args(n_rows, ratio)?;
    let mut idx: Vec<usize> = (0..n_rows).collect();
    idx.shuffle(&mut rng::rng(seed));
    let k = train_size(n_rows, ratio);
    let mut train = idx[..k].to_vec();
    let mut test = idx[k..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitDataset { train, test, seed })
}

/// Time-ordered split: the earliest rows train, the latest rows test.
pub fn split_rows_ordered(n_rows: usize, ratio: f64) -> Result<SplitDataset> {
    check_split_args(n_rows, ratio)?;
    let k = train_size(n_rows, ratio);
    Ok(SplitDataset {
        train: (0..k).collect(),
        test: (k..n_rows).collect(),
        seed: 0,
    })
}

/// Parameters of the synthetic capacity-fade generator.
///
/// Capacity follows `q0 * (1 - k * n^p)` plus relative noise of size
/// `noise_sd`; voltages carry Gaussian noise of `noise_sd` volts, and the
/// pre- and post-plateau phase durations vary from cycle to cycle with a
/// relative spread of `DURATION_JITTER_PER_NOISE * noise_sd`. With
/// `noise_sd = 0` the generator is fully deterministic in the cycle index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub battery_id: String,
    pub n_cycles: u32,
    pub q0: f64,
    pub nominal_capacity: f64,
    pub fade_rate: f64,
    pub fade_power: f64,
    pub plateau_voltage: f64,
    pub noise_sd: f64,
    pub sample_interval_s: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            battery_id: "LFP-170".into(),
            n_cycles: 200,
            q0: 170.0,
            nominal_capacity: 170.0,
            fade_rate: 3.5e-4,
            fade_power: 1.2,
            plateau_voltage: 3.3,
            noise_sd: 0.0002,
            sample_interval_s: 20.0,
            seed: 42,
        }
    }
}

// Phase durations of a fresh cell, seconds.
const PRE_PLATEAU_S: f64 = 1500.0;
const PLATEAU_S: f64 = 1800.0;
const POST_PLATEAU_S: f64 = 1500.0;
// Voltage offsets from the plateau voltage.
const START_OFFSET_V: f64 = -0.45;
const PLATEAU_HALF_WIDTH_V: f64 = 0.015;
const END_OFFSET_V: f64 = 0.35;

/// Relative phase-duration spread per unit of `noise_sd`.
pub const DURATION_JITTER_PER_NOISE: f64 = 50.0;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cycles < 20 {
            return Err(Error::param("synthetic dataset needs n_cycles >= 20"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::param("noise_sd must be finite and >= 0"));
        }
        if !(self.q0 > 0.0 && self.nominal_capacity > 0.0) {
            return Err(Error::param("q0 and nominal capacity must be positive"));
        }
        if !(self.fade_rate >= 0.0 && self.fade_power.is_finite()) {
            return Err(Error::param("fade rate must be >= 0 and fade power finite"));
        }
        if !(self.sample_interval_s > 0.0) {
            return Err(Error::param("sample interval must be positive"));
        }
        let worst = self.fade_ratio(self.n_cycles);
        if !(worst > 0.0) {
            return Err(Error::param(format!(
                "fade parameters give non-positive capacity by cycle {} (ratio {worst:.4})",
                self.n_cycles
            )));
        }
        Ok(())
    }

    /// Noise-free remaining-capacity ratio at cycle `n`.
    pub fn fade_ratio(&self, n: u32) -> f64 {
        1.0 - self.fade_rate * f64::from(n).powf(self.fade_power)
    }
}

/// Piecewise charge-curve shape: concave rise, near-flat plateau, convex rise.
fn curve_voltage(t: f64, durations: [f64; 3], levels: [f64; 4]) -> f64 {
    let [d1, d2, d3] = durations;
    let [v0, v1, v2, v3] = levels;
    let sat = |u: f64| (1.0 - (-2.0 * u).exp()) / (1.0 - (-2.0f64).exp());
    if t <= d1 {
        v0 + (v1 - v0) * sat(t / d1)
    } else if t <= d1 + d2 {
        v1 + (v2 - v1) * (t - d1) / d2
    } else {
        let u = ((t - d1 - d2) / d3).min(1.0);
        v2 + (v3 - v2) * (1.0 - sat(1.0 - u))
    }
}

/// Generate a synthetic single-battery dataset with cycles `1..=n_cycles`.
///
/// The plateau duration tracks the cycle's capacity, the pre-plateau phase
/// lengthens as the cell fades, and the whole curve shortens with age. Times are exact multiples of the sample
/// interval (plus the end point), voltages are quantized to 1 µV and
/// capacities to 0.1 µAh so the canonical text forms round-trip.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = rng::rng(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sd.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::param(e.to_string()))?;
    let draw = |rng: &mut rng::Rng| if cfg.noise_sd > 0.0 { noise.sample(rng) } else { 0.0 };

    let mut cycles = Vec::with_capacity(cfg.n_cycles as usize);
    for n in 1..=cfg.n_cycles {
        let det = cfg.fade_ratio(n);
        let q = (cfg.q0 * det + cfg.q0 * draw(&mut rng)).max(1e-3 * cfg.q0);
        let q = (q * 1e4).round() / 1e4;
        let ratio = q / cfg.q0;
        let aged = 1.0 - det;

        let jitter = DURATION_JITTER_PER_NOISE;
        let durations = [
            PRE_PLATEAU_S * (1.0 + 0.5 * aged + jitter * draw(&mut rng)),
            PLATEAU_S * ratio,
            POST_PLATEAU_S * (0.75 + 0.25 * ratio + jitter * draw(&mut rng)),
        ];
        let vp = cfg.plateau_voltage;
        let levels = [
            vp + START_OFFSET_V,
            vp - PLATEAU_HALF_WIDTH_V,
            vp + PLATEAU_HALF_WIDTH_V,
            vp + END_OFFSET_V,
        ];
        let total: f64 = durations.iter().sum();

        let mut times: Vec<f64> = (0..)
            .map(|i| f64::from(i) * cfg.sample_interval_s)
            .take_while(|&t| t < total)
            .collect();
        times.push((total * 1e3).round() / 1e3);

        let mut samples = Vec::with_capacity(times.len());
        let mut running_max = f64::NEG_INFINITY;
        for t in times {
            let mut v = curve_voltage(t, durations, levels) + draw(&mut rng);
            // keep sensor ripple inside the monotonicity band
            v = v.max(running_max - 0.8 * VOLTAGE_RIPPLE_V);
            v = (v * 1e6).round() / 1e6;
            running_max = running_max.max(v);
            samples.push(Sample::new(t, v));
        }
        cycles.push(CycleRecord {
            cycle_index: n,
            samples,
            discharge_capacity: q,
        });
    }
    Ok(Dataset {
        battery_id: cfg.battery_id.clone(),
        nominal_capacity: cfg.nominal_capacity,
        cycles,
    })
}
