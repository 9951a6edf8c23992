//! `capfade`: capacity-fade analysis from charging curves.

mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use capfade_core::attribution::{background, shapley_summary_with, BackgroundMode};
use capfade_core::correlation::correlation_report;
use capfade_core::data::{split_rows, synth_dataset, SynthConfig};
use capfade_core::features::{build_matrix, detect_segments, reference_row, SegmentsFile, TargetMode};
use capfade_core::fusion::{column_stats, screen_dimensions, standardize, FusionScaling};
use capfade_core::json::round_sig;
use capfade_core::models::ModelKind;
use capfade_core::pipeline::{
    evaluate_model, fused_comparison, render_taylor_svg, split_matrix, taylor_points, train_model, ModelFile,
    TrainConfig,
};
use capfade_core::rng::derive_seed_str;
use capfade_core::woa::WoaTrace;

use crate::io::{
    join, load_dataset, read_features, read_json, read_text, require_inputs, write_json, write_text, CliError,
    CliResult,
};

const DEFAULT_SEED: u64 = 42;
const SEED_ENV: &str = "RUN_SEED";

#[derive(Parser, Debug)]
#[command(name = "capfade", version, about = "Battery capacity-fade analysis: features, attribution, fusion and WOA-ELM prediction")]
struct Cli {
    /// Master seed; the RUN_SEED environment variable takes precedence.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Target {
    Raw,
    Normalized,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Background {
    Mean,
    Median,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (samples.csv, capacity.csv).
    Synth {
        /// Generator parameters (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Detect the VS1/VS2/VS3 voltage segments on a reference cycle.
    Segment {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        capacity: PathBuf,
        /// Plateau threshold as a fraction of the median dV/dt.
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Voltage grid for segment bounds, millivolts.
        #[arg(long, default_value_t = 10.0)]
        grid_mv: f64,
        /// Train fraction of the split that picks the reference cycle.
        #[arg(long, default_value_t = 0.7)]
        split_ratio: f64,
        #[arg(long, default_value_t = 170.0)]
        nominal_mah: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract features F1..F13 for every cycle.
    Features {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        capacity: PathBuf,
        #[arg(long)]
        segments: PathBuf,
        #[arg(long, value_enum, default_value_t = Target::Raw)]
        target: Target,
        #[arg(long, default_value_t = 170.0)]
        nominal_mah: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pearson and grey relational analysis of features against the target.
    Correlate {
        #[arg(long)]
        features: PathBuf,
        /// Distinguishing coefficient of the grey relational analysis.
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// t-SNE fusion with KL screening over candidate dimensions.
    Fuse {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        dims: Vec<usize>,
        /// Training configuration supplying t-SNE parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the training split.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "woa-elm")]
        kind: String,
        /// Train on a t-SNE fusion of the features.
        #[arg(long)]
        fused: bool,
        /// Fusion dimension used with --fused.
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long)]
        model_out: PathBuf,
        /// Write the optimizer history (WOA-ELM only).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score a model on its train/test split.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Override the split seed stored in the model.
        #[arg(long)]
        split_seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train several models and summarize them in a Taylor diagram.
    Compare {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "elm,woa-elm,knn,rf,gbrt")]
        models: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Exact Shapley attributions of a model over every feature row.
    Shap {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum, default_value_t = Background::Mean)]
        background: Background,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict capacity for one feature vector.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// JSON array of feature values, or an object keyed by feature name.
        #[arg(long)]
        input: PathBuf,
    },
    /// Compare WOA-ELM on all features against a fused embedding.
    Table1 {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Segment { .. } => "segment",
            Command::Features { .. } => "features",
            Command::Correlate { .. } => "correlate",
            Command::Fuse { .. } => "fuse",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Compare { .. } => "compare",
            Command::Shap { .. } => "shap",
            Command::Predict { .. } => "predict",
            Command::Table1 { .. } => "table1",
        }
    }
}

/// Seeds for one invocation: the master seed and the streams derived from it.
struct Seeds {
    master: u64,
    explicit: bool,
}

impl Seeds {
    fn resolve(flag: Option<u64>) -> CliResult<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let master = v
                .trim()
                .parse()
                .map_err(|_| CliError::new("param", format!("{SEED_ENV} must be an unsigned integer, got `{v}`")))?;
            return Ok(Self { master, explicit: true });
        }
        Ok(match flag {
            Some(master) => Self { master, explicit: true },
            None => Self {
                master: DEFAULT_SEED,
                explicit: false,
            },
        })
    }

    fn for_stage(&self, name: &str) -> u64 {
        derive_seed_str(self.master, name)
    }

    /// Shared by every stage that needs the train/test partition.
    fn split(&self) -> u64 {
        self.for_stage("split")
    }
}

fn load_config(path: Option<&Path>) -> CliResult<TrainConfig> {
    let cfg: TrainConfig = match path {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Configuration with the stage seeds filled in.
fn seeded_config(path: Option<&Path>, seeds: &Seeds, stage: &str) -> CliResult<TrainConfig> {
    let mut cfg = load_config(path)?;
    cfg.seed = seeds.for_stage(stage);
    cfg.tsne.seed = seeds.for_stage("fuse");
    Ok(cfg)
}

fn parse_kind(s: &str) -> CliResult<ModelKind> {
    s.parse::<ModelKind>().map_err(CliError::from)
}

fn read_model(path: &Path) -> CliResult<capfade_core::pipeline::TrainedModel> {
    let file: ModelFile = read_json(path)?;
    Ok(file.into_model()?)
}

fn parse_input_vector(text: &str, names: &[String]) -> CliResult<Vec<f64>> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::new("schema", format!("input vector: {e}")))?;
    let number = |v: &serde_json::Value, what: &str| {
        v.as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| CliError::new("schema", format!("input vector: {what} is not a finite number")))
    };
    let out = match &value {
        serde_json::Value::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, v)| number(v, &format!("element {i}")))
            .collect::<CliResult<Vec<f64>>>()?,
        serde_json::Value::Object(map) => {
            if let Some(extra) = map.keys().find(|k| !names.contains(k)) {
                return Err(CliError::new("schema", format!("input vector: unknown feature `{extra}`")));
            }
            names
                .iter()
                .map(|n| {
                    let v = map
                        .get(n)
                        .ok_or_else(|| CliError::new("schema", format!("input vector: missing feature `{n}`")))?;
                    number(v, n)
                })
                .collect::<CliResult<Vec<f64>>>()?
        }
        _ => return Err(CliError::new("schema", "input vector must be a JSON array or object")),
    };
    if out.len() != names.len() {
        return Err(CliError::new(
            "schema",
            format!("input vector has {} values, model expects {}", out.len(), names.len()),
        ));
    }
    Ok(out)
}

#[derive(Serialize)]
struct TaylorFile<'a> {
    #[serde(flatten)]
    data: &'a capfade_core::pipeline::TaylorData,
    split_seed: u64,
    n_test: usize,
}

fn run(cli: Cli) -> CliResult<()> {
    let seeds = Seeds::resolve(cli.seed)?;
    let stage = cli.command.name();
    match cli.command {
        Command::Synth { config, out_dir } => {
            if let Some(c) = &config {
                require_inputs(&[c])?;
            }
            let mut cfg: SynthConfig = match &config {
                Some(p) => read_json(p)?,
                None => SynthConfig::default(),
            };
            if seeds.explicit {
                cfg.seed = seeds.for_stage(stage);
            }
            let ds = synth_dataset(&cfg)?;
            std::fs::create_dir_all(&out_dir)
                .map_err(|e| CliError::new("io", format!("cannot create {}: {e}", out_dir.display())))?;
            write_text(&join(&out_dir, "samples.csv"), &ds.samples_csv())?;
            write_text(&join(&out_dir, "capacity.csv"), &ds.capacity_csv())?;
        }
        Command::Segment {
            samples,
            capacity,
            alpha,
            grid_mv,
            split_ratio,
            nominal_mah,
            out,
        } => {
            require_inputs(&[&samples, &capacity])?;
            let ds = load_dataset(&samples, &capacity, nominal_mah)?;
            let split = split_rows(ds.cycles.len(), split_ratio, seeds.split())?;
            let reference = &ds.cycles[reference_row(&split)?];
            let seg = detect_segments(&reference.samples, alpha, grid_mv)?;
            write_json(&out, &SegmentsFile::new(&seg, alpha, grid_mv, reference.cycle_index))?;
        }
        Command::Features {
            samples,
            capacity,
            segments,
            target,
            nominal_mah,
            out,
        } => {
            require_inputs(&[&samples, &capacity, &segments])?;
            let seg = read_json::<SegmentsFile>(&segments)?.segments()?;
            let ds = load_dataset(&samples, &capacity, nominal_mah)?;
            let mode = match target {
                Target::Raw => TargetMode::Raw,
                Target::Normalized => TargetMode::Normalized,
            };
            write_text(&out, &build_matrix(&ds, &seg, mode)?.to_csv())?;
        }
        Command::Correlate { features, rho, out } => {
            require_inputs(&[&features])?;
            let m = read_features(&features)?;
            write_json(&out, &correlation_report(&m, rho)?)?;
        }
        Command::Fuse {
            features,
            dims,
            config,
            out,
        } => {
            require_inputs(&[&features])?;
            if let Some(c) = &config {
                require_inputs(&[c])?;
            }
            let cfg = seeded_config(config.as_deref(), &seeds, stage)?;
            let m = read_features(&features)?;
            let x = match cfg.fusion_scaling {
                FusionScaling::Raw => m.rows.clone(),
                FusionScaling::Standardize => {
                    let (means, sds) = column_stats(&m.rows);
                    standardize(&m.rows, &means, &sds)
                }
            };
            write_json(&out, &screen_dimensions(&x, &dims, &cfg.tsne)?)?;
        }
        Command::Train {
            features,
            config,
            kind,
            fused,
            dim,
            model_out,
            trace,
        } => {
            require_inputs(&[&features])?;
            if let Some(c) = &config {
                require_inputs(&[c])?;
            }
            let kind = parse_kind(&kind)?;
            let cfg = seeded_config(config.as_deref(), &seeds, stage)?;
            let m = read_features(&features)?;
            let model = train_model(&m, kind, &cfg, seeds.split(), fused.then_some(dim))?;
            write_json(&model_out, &ModelFile::from_model(&model))?;
            if let Some(path) = trace {
                if kind != ModelKind::WoaElm {
                    return Err(CliError::new("param", "--trace is only available for woa-elm"));
                }
                let n_inputs = if fused { dim } else { m.n_features() };
                let best_position = match &model.regressor {
                    capfade_core::models::Regressor::Elm(e) => {
                        capfade_core::pipeline::encode_position(&e.omega, &e.bias)
                    }
                    _ => Vec::new(),
                };
                let trace = WoaTrace {
                    config: cfg.woa_config(n_inputs),
                    history: model.history.clone(),
                    best_position,
                };
                write_json(&path, &trace)?;
            }
        }
        Command::Evaluate {
            model,
            features,
            split_seed,
            out,
        } => {
            require_inputs(&[&model, &features])?;
            let mut model = read_model(&model)?;
            if let Some(s) = split_seed {
                model.split_seed = s;
            }
            let m = read_features(&features)?;
            write_json(&out, &evaluate_model(&model, &m)?)?;
        }
        Command::Compare {
            features,
            config,
            models,
            out,
            svg,
        } => {
            require_inputs(&[&features])?;
            if let Some(c) = &config {
                require_inputs(&[c])?;
            }
            let kinds = models.iter().map(|k| parse_kind(k)).collect::<CliResult<Vec<_>>>()?;
            let cfg = seeded_config(config.as_deref(), &seeds, "train")?;
            let m = read_features(&features)?;
            let (_, test) = split_matrix(&m, cfg.split_ratio, seeds.split())?;
            let mut preds = Vec::with_capacity(kinds.len());
            for kind in kinds {
                let model = train_model(&m, kind, &cfg, seeds.split(), None)?;
                preds.push((kind.name().to_string(), model.predict_rows(&test.rows)?));
            }
            let data = taylor_points(&preds, &test.targets)?;
            write_json(
                &out,
                &TaylorFile {
                    data: &data,
                    split_seed: seeds.split(),
                    n_test: test.n_rows(),
                },
            )?;
            if let Some(path) = svg {
                write_text(&path, &render_taylor_svg(&data))?;
            }
        }
        Command::Shap {
            model,
            features,
            background: bg,
            out,
        } => {
            require_inputs(&[&model, &features])?;
            let model = read_model(&model)?;
            let m = read_features(&features)?;
            if m.feature_names != model.feature_names {
                return Err(CliError::new("data", "feature columns differ from those the model was trained on"));
            }
            let split = split_rows(m.n_rows(), model.split_ratio, model.split_seed)?;
            let train: Vec<Vec<f64>> = split.train.iter().map(|&i| m.rows[i].clone()).collect();
            let mode = match bg {
                Background::Mean => BackgroundMode::Mean,
                Background::Median => BackgroundMode::Median,
            };
            write_json(&out, &shapley_summary_with(&model, &m, &background(&train, mode))?)?;
        }
        Command::Predict { model, input } => {
            require_inputs(&[&model, &input])?;
            let start = Instant::now();
            let model = read_model(&model)?;
            let x = parse_input_vector(&read_text(&input)?, &model.feature_names)?;
            let y = model.predict_row(&x);
            if !y.is_finite() {
                return Err(CliError::new("numeric", "prediction is not finite"));
            }
            println!("{}", round_sig(y));
            log::info!("prediction took {:.1} ms", start.elapsed().as_secs_f64() * 1e3);
        }
        Command::Table1 {
            features,
            config,
            dim,
            out,
        } => {
            require_inputs(&[&features])?;
            if let Some(c) = &config {
                require_inputs(&[c])?;
            }
            let cfg = seeded_config(config.as_deref(), &seeds, "train")?;
            let m = read_features(&features)?;
            write_json(&out, &fused_comparison(&m, &cfg, seeds.split(), dim)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let line = first
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::new("usage", line));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
