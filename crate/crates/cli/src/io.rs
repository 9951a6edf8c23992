use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use capfade_core::data::{assemble_dataset, parse_capacity, parse_samples, Dataset};
use capfade_core::features::FeatureMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Failure reported as `ERROR <code>: <message>`.
#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // keep it on one line
        let msg = self.message.replace(['\n', '\r'], " ");
        write!(f, "ERROR {}: {}", self.code, msg)
    }
}

impl From<capfade_core::Error> for CliError {
    fn from(e: capfade_core::Error) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Fail before doing any work if an input is missing.
pub fn require_inputs(paths: &[&Path]) -> CliResult<()> {
    for p in paths {
        if !p.is_file() {
            return Err(CliError::new("io", format!("input file not found: {}", p.display())));
        }
    }
    Ok(())
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::new("io", format!("cannot read {}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        if !dir.is_dir() {
            return Err(CliError::new("io", format!("output directory does not exist: {}", dir.display())));
        }
    }
    fs::write(path, text).map_err(|e| CliError::new("io", format!("cannot write {}: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    write_text(path, &capfade_core::json::to_string(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::new("schema", format!("{}: {e}", path.display())))
}

pub fn read_features(path: &Path) -> CliResult<FeatureMatrix> {
    FeatureMatrix::from_csv(&read_text(path)?).map_err(|e| CliError::new(e.code(), format!("{}: {e}", path.display())))
}

pub fn load_dataset(samples: &Path, capacity: &Path, nominal_mah: f64) -> CliResult<Dataset> {
    let curves = parse_samples(&read_text(samples)?)
        .map_err(|e| CliError::new(e.code(), format!("{}: {e}", samples.display())))?;
    let caps = parse_capacity(&read_text(capacity)?)
        .map_err(|e| CliError::new(e.code(), format!("{}: {e}", capacity.display())))?;
    let battery = curves
        .first()
        .map(|c| c.battery_id.clone())
        .ok_or_else(|| CliError::new("data", format!("{} holds no cycles", samples.display())))?;
    Ok(assemble_dataset(curves, &caps, &battery, nominal_mah)?)
}

pub fn join(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
