//! Command-line experiments and their run manifests.
//!
//! Every subcommand is a pure function of its flags: randomness comes only
//! from the mandatory `--seed`, and no environment variable is consulted.
//! Each successful command writes a [`RunManifest`] listing its flags,
//! seeds, configuration digests, and the SHA-256 of every artifact.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::calib::{estimate_disturbance, generate_calibration_set, DisturbanceEstimate, DEFAULT_AMPLITUDES};
use crate::data::{generate_dataset, load_dataset, save_dataset, split_dataset, Dataset, SamplingParams};
use crate::error::{Error, Result};
use crate::evalrep::{
    compare_hybrid, emit_heatmap, evaluate, evaluate_ensemble, learning_curve, learning_curve_csv, write_report,
    HybridComparison, HybridEvaluation, LearningCurveConfig,
};
use crate::io::{f32_to_le_bytes, read_versioned_json, sha256_hex, write_versioned_json};
use crate::net::{fit, Model, TrainConfig, UNetConfig};
use crate::optics::{Design, Disturbance, ForwardConfig, DEFAULT_BETA, DEFAULT_DISTURBANCE_ORDER, DEFAULT_GRID_SIZE};

pub const MANIFEST_FORMAT: &str = "formnet-run-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const TABLE_FORMAT: &str = "formnet-hybrid-table";
pub const TABLE_VERSION: u32 = 1;
pub const HISTORY_FORMAT: &str = "formnet-train-history";
pub const HISTORY_VERSION: u32 = 1;

/// Held-out fraction of every generated dataset.
pub const DEFAULT_TEST_FRACTION: f64 = 0.1;
/// Held-out topographies used for the three-way instrument comparison.
pub const DEFAULT_HYBRID_SAMPLES: usize = 30;
/// Samples rendered as heatmaps by `reproduce`.
pub const HEATMAP_SAMPLES: usize = 3;

/// Experiment size presets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Minutes on one CPU core.
    #[default]
    Desk,
    /// Dataset size, epochs and batch size of the original study.
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalePreset {
    pub num_samples: usize,
    pub depth: usize,
    pub base_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
}

/// Learning-rate schedule and weight penalty used for each design.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr0: f64,
    pub drop_factor: f64,
    pub drop_period: usize,
    pub weight_decay: f64,
}

impl Schedule {
    pub fn for_design(design: Design) -> Self {
        match design {
            Design::Freeform => Self {
                lr0: 5e-4,
                drop_factor: 0.75,
                drop_period: 5,
                weight_decay: 0.004,
            },
            Design::Asphere => Self {
                lr0: 5e-4,
                drop_factor: 0.5,
                drop_period: 3,
                weight_decay: 5e-4,
            },
        }
    }
}

impl Scale {
    pub fn preset(self, design: Design) -> ScalePreset {
        match self {
            Scale::Desk => ScalePreset {
                num_samples: 4000,
                depth: 3,
                base_width: 16,
                epochs: 10,
                batch_size: 32,
            },
            Scale::Paper => ScalePreset {
                num_samples: 22000,
                depth: 3,
                base_width: 16,
                epochs: 15,
                batch_size: match design {
                    Design::Asphere => 8,
                    Design::Freeform => 64,
                },
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one command invocation, sufficient to re-run it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub config_digests: BTreeMap<String, String>,
    pub artifacts: Vec<Artifact>,
    pub tool_version: String,
    pub timestamp_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, args: &[String]) -> Self {
        Self {
            command: command.to_string(),
            args: args.to_vec(),
            seeds: BTreeMap::new(),
            config_digests: BTreeMap::new(),
            artifacts: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    pub fn digest<T: Serialize>(&mut self, name: &str, config: &T) -> Result<()> {
        let digest = sha256_hex(&serde_json::to_vec(config)?);
        self.config_digests.insert(name.to_string(), digest);
        Ok(())
    }

    /// Records a file, or every file below a directory, with its digest.
    pub fn artifact(&mut self, path: &Path) -> Result<()> {
        if path.is_dir() {
            let mut entries = fs::read_dir(path)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<Vec<_>>>()?;
            entries.sort();
            for e in entries {
                self.artifact(&e)?;
            }
        } else {
            let sha256 = sha256_hex(&fs::read(path)?);
            self.artifacts.push(Artifact {
                path: path.to_path_buf(),
                sha256,
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_versioned_json(path, MANIFEST_FORMAT, MANIFEST_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_versioned_json(path, MANIFEST_FORMAT, MANIFEST_VERSION)
    }
}

#[derive(Debug, Parser)]
#[command(name = "formnet", version, about = "Virtual form measurement with a learned inverse")]
pub struct Cli {
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Increase log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset of difference topographies and their inputs.
    GenData(GenDataArgs),
    /// Split a dataset into train and test parts.
    Split(SplitArgs),
    /// Train a network on a dataset.
    Train(TrainArgs),
    /// Predict difference topographies for every sample of a dataset.
    Predict(PredictArgs),
    /// Evaluate one model, or the mean of several, on a dataset.
    Eval(EvalArgs),
    /// Sample or load a disturbance and estimate it from calibration spheres.
    Calibrate(CalibrateArgs),
    /// Compare perfect, disturbed and calibrated inputs on held-out samples.
    HybridEval(HybridEvalArgs),
    /// Train several networks that differ only in their seed.
    EnsembleTrain(EnsembleTrainArgs),
    /// Train on growing subsets of a pool and evaluate on a fixed test set.
    LearningCurve(LearningCurveArgs),
    /// Run the full experiment: data, training, calibration, comparison.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ForwardArgs {
    #[arg(long, default_value = "freeform")]
    pub design: Design,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    pub grid_size: usize,
    /// Quadratic coefficient of the forward law in 1/nm.
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
}

impl ForwardArgs {
    pub fn config(&self) -> Result<ForwardConfig> {
        let mut cfg = ForwardConfig::for_design(self.design, self.grid_size);
        cfg.beta = self.beta;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct NetArgs {
    #[arg(long, value_enum, default_value = "desk")]
    pub scale: Scale,
    /// Encoder stages; defaults to the scale preset.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Channels of the first stage; defaults to the scale preset.
    #[arg(long)]
    pub base_width: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate; defaults to the design's schedule.
    #[arg(long)]
    pub lr0: Option<f64>,
    /// Learning-rate factor applied every `drop_period` epochs.
    #[arg(long)]
    pub drop_factor: Option<f64>,
    #[arg(long)]
    pub drop_period: Option<usize>,
    /// Coefficient of the squared weight norm in the loss.
    #[arg(long)]
    pub weight_decay: Option<f64>,
}

impl NetArgs {
    pub fn unet(&self, design: Design, grid_size: usize, channels: usize) -> UNetConfig {
        let p = self.scale.preset(design);
        UNetConfig::new(
            grid_size,
            channels,
            self.depth.unwrap_or(p.depth),
            self.base_width.unwrap_or(p.base_width),
        )
    }

    pub fn train(&self, design: Design, seed: u64) -> TrainConfig {
        let p = self.scale.preset(design);
        let s = Schedule::for_design(design);
        TrainConfig {
            epochs: self.epochs.unwrap_or(p.epochs),
            batch_size: self.batch_size.unwrap_or(p.batch_size),
            lr0: self.lr0.unwrap_or(s.lr0),
            drop_factor: self.drop_factor.unwrap_or(s.drop_factor),
            drop_period: self.drop_period.unwrap_or(s.drop_period),
            weight_decay: self.weight_decay.unwrap_or(s.weight_decay),
            ..TrainConfig::new(seed)
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub forward: ForwardArgs,
    #[arg(long, value_enum, default_value = "desk")]
    pub scale: Scale,
    /// Number of samples; defaults to the scale preset.
    #[arg(long)]
    pub num_samples: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub first_mode: u32,
    #[arg(long, default_value_t = 36)]
    pub last_mode: u32,
    #[arg(long, default_value_t = 50.0)]
    pub rms_min: f64,
    #[arg(long, default_value_t = 700.0)]
    pub rms_max: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TEST_FRACTION)]
    pub test_fraction: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub test_out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long)]
    pub seed: u64,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for predictions and heatmaps.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of leading samples to render as heatmaps.
    #[arg(long, default_value_t = 0)]
    pub heatmaps: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Model file; repeat to evaluate the mean of several models.
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Report file (JSON); a table is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub forward: ForwardArgs,
    /// Existing disturbance file; otherwise one is sampled from `--seed`.
    #[arg(long)]
    pub disturbance: Option<PathBuf>,
    #[arg(long, required_unless_present = "disturbance")]
    pub seed: Option<u64>,
    /// Highest Noll index of the offset model.
    #[arg(long, default_value_t = DEFAULT_DISTURBANCE_ORDER)]
    pub order: u32,
    /// Calibration sphere amplitudes in nm.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_AMPLITUDES)]
    pub amplitudes: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct HybridEvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Held-out dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub disturbance: PathBuf,
    #[arg(long)]
    pub estimate: PathBuf,
    #[arg(long, default_value_t = DEFAULT_HYBRID_SAMPLES)]
    pub samples: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EnsembleTrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long, default_value_t = 3)]
    pub members: usize,
    /// Seed of member 0; member `m` uses `seed + m`.
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct LearningCurveArgs {
    /// Training pool directory.
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.25, 0.5, 1.0])]
    pub fractions: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub members: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output directory for the table and its manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReproduceArgs {
    #[command(flatten)]
    pub forward: ForwardArgs,
    #[command(flatten)]
    pub net: NetArgs,
    /// Number of samples; defaults to the scale preset.
    #[arg(long)]
    pub num_samples: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_HYBRID_SAMPLES)]
    pub hybrid_samples: usize,
    /// Master seed; every stage derives its own seed from it.
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    log::info!("stage {name}");
    f().map_err(|e| e.in_stage(name))
}

fn write_history(path: &Path, history: &crate::net::TrainHistory) -> Result<()> {
    write_versioned_json(path, HISTORY_FORMAT, HISTORY_VERSION, history)
}

fn gen_data(a: &GenDataArgs, args: &[String]) -> Result<RunManifest> {
    let cfg = a.forward.config()?;
    let sampling = SamplingParams {
        first_mode: a.first_mode,
        last_mode: a.last_mode,
        rms_min_nm: a.rms_min,
        rms_max_nm: a.rms_max,
    };
    let n = a.num_samples.unwrap_or(a.scale.preset(a.forward.design).num_samples);
    let ds = generate_dataset(&cfg, n, a.seed, &sampling)?;
    save_dataset(&ds, &a.out)?;
    let mut m = RunManifest::new("gen-data", args);
    m.seed("data", a.seed);
    m.digest("forward_config", &cfg)?;
    m.digest("sampling", &sampling)?;
    m.artifact(&a.out)?;
    m.save(&a.out.join("manifest.json"))?;
    Ok(m)
}

fn split(a: &SplitArgs, args: &[String]) -> Result<RunManifest> {
    let ds = load_dataset(&a.data)?;
    let (train, test) = split_dataset(&ds, a.test_fraction, a.seed)?;
    save_dataset(&train, &a.train_out)?;
    save_dataset(&test, &a.test_out)?;
    let mut m = RunManifest::new("split", args);
    m.seed("split", a.seed);
    m.artifact(&a.train_out)?;
    m.artifact(&a.test_out)?;
    m.save(&a.train_out.join("split-manifest.json"))?;
    Ok(m)
}

fn train_one(ds: &Dataset, net: &NetArgs, seed: u64, out: &Path) -> Result<Model> {
    let unet = net.unet(ds.meta().design, ds.grid_size(), ds.channels());
    let tc = net.train(ds.meta().design, seed);
    let (model, history) = fit(ds, &unet, &tc)?;
    model.save(out)?;
    write_history(&sibling(out, "history.json"), &history)?;
    Ok(model)
}

/// `<path stem>.<suffix>` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn train_cmd(a: &TrainArgs, args: &[String]) -> Result<RunManifest> {
    let ds = load_dataset(&a.data)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let model = train_one(&ds, &a.net, a.seed, &a.out)?;
    let mut m = RunManifest::new("train", args);
    m.seed("train", a.seed);
    m.digest("unet", model.config())?;
    m.digest("train_config", &model.train)?;
    m.artifact(&a.out)?;
    m.artifact(&sibling(&a.out, "history.json"))?;
    m.save(&sibling(&a.out, "manifest.json"))?;
    Ok(m)
}

fn predict_cmd(a: &PredictArgs, args: &[String]) -> Result<RunManifest> {
    let model = Model::load(&a.model)?;
    let ds = load_dataset(&a.data)?;
    let preds = model.predict_dataset(&ds)?;
    fs::create_dir_all(&a.out)?;
    let flat: Vec<f32> = preds.iter().flat_map(|g| g.values().iter().map(|&v| v as f32)).collect();
    fs::write(a.out.join("predictions.bin"), f32_to_le_bytes(&flat))?;
    for (i, g) in preds.iter().take(a.heatmaps).enumerate() {
        emit_heatmap(g, &a.out.join(format!("prediction_{i:04}.pgm")))?;
    }
    let mut m = RunManifest::new("predict", args);
    m.artifact(&a.out)?;
    m.save(&a.out.join("manifest.json"))?;
    Ok(m)
}

fn eval_cmd(a: &EvalArgs, args: &[String]) -> Result<RunManifest> {
    let ds = load_dataset(&a.data)?;
    let models = a.model.iter().map(|p| Model::load(p)).collect::<Result<Vec<_>>>()?;
    let report = if models.len() == 1 {
        evaluate(&models[0], &ds)?
    } else {
        evaluate_ensemble(&models, &ds)?
    };
    write_report(&report, &a.out)?;
    let mut m = RunManifest::new("eval", args);
    m.artifact(&a.out)?;
    m.artifact(&a.out.with_extension("txt"))?;
    m.save(&sibling(&a.out, "manifest.json"))?;
    Ok(m)
}

fn calibrate_cmd(a: &CalibrateArgs, args: &[String]) -> Result<RunManifest> {
    let cfg = a.forward.config()?;
    fs::create_dir_all(&a.out)?;
    let mut m = RunManifest::new("calibrate", args);
    let d_true = match (&a.disturbance, a.seed) {
        (Some(path), _) => Disturbance::load(path)?,
        (None, Some(seed)) => {
            m.seed("disturbance", seed);
            let d = Disturbance::sample(cfg.num_channels(), a.order, seed);
            d.save(&a.out.join("disturbance.json"))?;
            d
        }
        (None, None) => return Err(Error::InvalidConfig("need --disturbance or --seed".into())),
    };
    let cal = generate_calibration_set(&cfg, &d_true, &a.amplitudes)?;
    let est = estimate_disturbance(&cal, &cfg, a.order)?;
    est.save(&a.out.join("estimate.json"))?;
    m.digest("forward_config", &cfg)?;
    m.artifact(&a.out)?;
    m.save(&a.out.join("manifest.json"))?;
    Ok(m)
}

fn write_hybrid(eval: &HybridEvaluation, out: &Path, heatmaps: usize) -> Result<()> {
    fs::create_dir_all(out)?;
    write_versioned_json(&out.join("table.json"), TABLE_FORMAT, TABLE_VERSION, &eval.comparison)?;
    fs::write(out.join("table.txt"), eval.comparison.table())?;
    if heatmaps > 0 {
        let dir = out.join("heatmaps");
        fs::create_dir_all(&dir)?;
        for i in 0..heatmaps.min(eval.truths.len()) {
            let mut error = eval.calibrated[i].clone();
            error.add_scaled(&eval.truths[i], -1.0);
            emit_heatmap(&eval.truths[i], &dir.join(format!("sample{i}_truth.pgm")))?;
            emit_heatmap(&eval.perfect[i], &dir.join(format!("sample{i}_perfect.pgm")))?;
            emit_heatmap(&eval.disturbed[i], &dir.join(format!("sample{i}_disturbed.pgm")))?;
            emit_heatmap(&eval.calibrated[i], &dir.join(format!("sample{i}_calibrated.pgm")))?;
            emit_heatmap(&error, &dir.join(format!("sample{i}_calibrated_error.pgm")))?;
        }
    }
    Ok(())
}

pub fn read_hybrid_table(path: &Path) -> Result<HybridComparison> {
    read_versioned_json(path, TABLE_FORMAT, TABLE_VERSION)
}

fn hybrid_eval_cmd(a: &HybridEvalArgs, args: &[String]) -> Result<RunManifest> {
    let model = Model::load(&a.model)?;
    let ds = load_dataset(&a.data)?;
    let d_true = Disturbance::load(&a.disturbance)?;
    let est = DisturbanceEstimate::load(&a.estimate)?;
    let eval = compare_hybrid(&model, &ds, a.samples, &d_true, &est)?;
    write_hybrid(&eval, &a.out, 0)?;
    let mut m = RunManifest::new("hybrid-eval", args);
    m.artifact(&a.out)?;
    m.save(&a.out.join("manifest.json"))?;
    Ok(m)
}

fn ensemble_train_cmd(a: &EnsembleTrainArgs, args: &[String]) -> Result<RunManifest> {
    if a.members == 0 {
        return Err(Error::InvalidConfig("an ensemble needs at least one member".into()));
    }
    let ds = load_dataset(&a.data)?;
    fs::create_dir_all(&a.out)?;
    let mut m = RunManifest::new("ensemble-train", args);
    for k in 0..a.members {
        let seed = a.seed.wrapping_add(k as u64);
        m.seed(&format!("member{k}"), seed);
        train_one(&ds, &a.net, seed, &a.out.join(format!("member{k}.bin")))?;
    }
    m.artifact(&a.out)?;
    m.save(&a.out.join("manifest.json"))?;
    Ok(m)
}

fn learning_curve_cmd(a: &LearningCurveArgs, args: &[String]) -> Result<RunManifest> {
    let pool = load_dataset(&a.pool)?;
    let test = load_dataset(&a.test)?;
    let cfg = LearningCurveConfig {
        fractions: a.fractions.clone(),
        ensemble_size: a.members,
        unet: a.net.unet(pool.meta().design, pool.grid_size(), pool.channels()),
        train: a.net.train(pool.meta().design, a.seed),
        subset_seed: a.seed,
    };
    let rows = learning_curve(&pool, &test, &cfg)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("learning_curve.csv"), learning_curve_csv(&rows))?;
    let mut m = RunManifest::new("learning-curve", args);
    m.seed("subset", a.seed);
    m.digest("learning_curve", &cfg)?;
    m.artifact(&a.out)?;
    m.save(&a.out.join("manifest.json"))?;
    Ok(m)
}

/// Seeds of the reproduce stages, derived from one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSeeds {
    pub data: u64,
    pub split: u64,
    pub train: u64,
    pub disturbance: u64,
}

impl StageSeeds {
    pub fn from_master(seed: u64) -> Self {
        Self {
            data: seed,
            split: seed.wrapping_add(1),
            train: seed.wrapping_add(2),
            disturbance: seed.wrapping_add(3),
        }
    }
}

/// Files written by [`run_reproduce`], relative to its output directory.
pub mod layout {
    pub const FULL_DATA: &str = "data/full";
    pub const TRAIN_DATA: &str = "data/train";
    pub const TEST_DATA: &str = "data/test";
    pub const MODEL: &str = "model.bin";
    pub const HISTORY: &str = "model.history.json";
    pub const TEST_REPORT: &str = "test_report.json";
    pub const DISTURBANCE: &str = "disturbance.json";
    pub const ESTIMATE: &str = "estimate.json";
    pub const HYBRID: &str = "hybrid";
    pub const MANIFEST: &str = "manifest.json";
}

/// End-to-end experiment: generate and split data, train, evaluate on the
/// test set, then compare perfect, disturbed, and calibrated inputs on
/// held-out samples. Artifacts of a failed stage are left in place.
pub fn run_reproduce(a: &ReproduceArgs, args: &[String]) -> Result<RunManifest> {
    use layout::*;
    let out = &a.out;
    fs::create_dir_all(out)?;
    let seeds = StageSeeds::from_master(a.seed);
    let cfg = a.forward.config()?;
    let design = cfg.design;
    let n = a.num_samples.unwrap_or(a.net.scale.preset(design).num_samples);
    let mut m = RunManifest::new("reproduce", args);
    m.seed("data", seeds.data);
    m.seed("split", seeds.split);
    m.seed("train", seeds.train);
    m.seed("disturbance", seeds.disturbance);
    m.digest("forward_config", &cfg)?;

    let ds = stage("gen-data", || {
        let ds = generate_dataset(&cfg, n, seeds.data, &SamplingParams::default())?;
        save_dataset(&ds, &out.join(FULL_DATA))?;
        Ok(ds)
    })?;
    let (train, test) = stage("split", || {
        let (train, test) = split_dataset(&ds, DEFAULT_TEST_FRACTION, seeds.split)?;
        save_dataset(&train, &out.join(TRAIN_DATA))?;
        save_dataset(&test, &out.join(TEST_DATA))?;
        Ok((train, test))
    })?;
    drop(ds);
    let model = stage("train", || train_one(&train, &a.net, seeds.train, &out.join(MODEL)))?;
    m.digest("unet", model.config())?;
    m.digest("train_config", &model.train)?;
    stage("eval", || write_report(&evaluate(&model, &test)?, &out.join(TEST_REPORT)))?;
    let (d_true, est) = stage("calibrate", || {
        let d = Disturbance::sample(cfg.num_channels(), DEFAULT_DISTURBANCE_ORDER, seeds.disturbance);
        d.save(&out.join(DISTURBANCE))?;
        let cal = generate_calibration_set(&cfg, &d, &DEFAULT_AMPLITUDES)?;
        let est = estimate_disturbance(&cal, &cfg, DEFAULT_DISTURBANCE_ORDER)?;
        est.save(&out.join(ESTIMATE))?;
        Ok((d, est))
    })?;
    stage("hybrid-eval", || {
        let eval = compare_hybrid(&model, &test, a.hybrid_samples, &d_true, &est)?;
        log::info!("\n{}", eval.comparison.table());
        write_hybrid(&eval, &out.join(HYBRID), HEATMAP_SAMPLES)
    })?;
    for rel in [FULL_DATA, TRAIN_DATA, TEST_DATA, MODEL, HISTORY, TEST_REPORT, DISTURBANCE, ESTIMATE, HYBRID] {
        m.artifact(&out.join(rel))?;
    }
    m.artifact(&out.join(TEST_REPORT).with_extension("txt"))?;
    m.save(&out.join(MANIFEST))?;
    Ok(m)
}

impl Cli {
    pub fn run(&self, args: &[String]) -> Result<RunManifest> {
        match &self.command {
            Command::GenData(a) => gen_data(a, args),
            Command::Split(a) => split(a, args),
            Command::Train(a) => train_cmd(a, args),
            Command::Predict(a) => predict_cmd(a, args),
            Command::Eval(a) => eval_cmd(a, args),
            Command::Calibrate(a) => calibrate_cmd(a, args),
            Command::HybridEval(a) => hybrid_eval_cmd(a, args),
            Command::EnsembleTrain(a) => ensemble_train_cmd(a, args),
            Command::LearningCurve(a) => learning_curve_cmd(a, args),
            Command::Reproduce(a) => run_reproduce(a, args),
        }
    }
}

/// Parses `args`, runs the command, and returns the process exit code:
/// 0 success, 2 invalid flags or configuration, 3 numeric failure,
/// 4 I/O or format error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return 2;
        }
        // Fails only if a pool already exists, e.g. when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let recorded: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match cli.run(&recorded) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn presets() {
        let desk = Scale::Desk.preset(Design::Freeform);
        assert_eq!((desk.num_samples, desk.depth, desk.base_width, desk.epochs, desk.batch_size), (4000, 3, 16, 10, 32));
        assert_eq!(Scale::Paper.preset(Design::Asphere).batch_size, 8);
        assert_eq!(Scale::Paper.preset(Design::Freeform).batch_size, 64);
        assert_eq!(Scale::Paper.preset(Design::Freeform).num_samples, 22000);
        let net = NetArgs { epochs: Some(2), ..NetArgs::default() };
        let tc = net.train(Design::Freeform, 7);
        assert_eq!((tc.epochs, tc.batch_size, tc.seed), (2, 32, 7));
        assert_eq!((tc.lr0, tc.drop_factor, tc.drop_period, tc.weight_decay), (5e-4, 0.75, 5, 0.004));
        let tc = NetArgs::default().train(Design::Asphere, 7);
        assert_eq!((tc.drop_factor, tc.drop_period, tc.weight_decay), (0.5, 3, 5e-4));
    }

    #[test]
    fn seed_is_mandatory_for_generation_and_training() {
        assert!(Cli::try_parse_from(["formnet", "gen-data", "--out", "x"]).is_err());
        assert!(Cli::try_parse_from(["formnet", "train", "--data", "d", "--out", "m"]).is_err());
        assert!(Cli::try_parse_from(["formnet", "reproduce", "--out", "r"]).is_err());
        let cli = Cli::try_parse_from(["formnet", "--workers", "2", "reproduce", "--out", "r", "--seed", "5"]).unwrap();
        assert_eq!(cli.workers, Some(2));
        match cli.command {
            Command::Reproduce(a) => {
                assert_eq!(a.seed, 5);
                assert_eq!(a.forward.design, Design::Freeform);
                assert_eq!(a.net.scale, Scale::Desk);
            }
            other => panic!("parsed {other:?}"),
        }
    }

    #[test]
    fn stage_seeds_are_distinct() {
        let s = StageSeeds::from_master(u64::MAX);
        let all = [s.data, s.split, s.train, s.disturbance];
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(all[i], all[j]);
            }
        }
    }

    #[test]
    fn manifest_lists_directory_files_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("sub/b.txt"), b"b").unwrap();
        fs::write(dir.path().join("a.txt"), b"a").unwrap();
        let mut m = RunManifest::new("test", &["formnet".into(), "test".into()]);
        m.seed("data", 3);
        m.digest("cfg", &[1, 2, 3]).unwrap();
        m.artifact(dir.path()).unwrap();
        assert_eq!(m.artifacts.len(), 2);
        assert!(m.artifacts[0].path.ends_with("a.txt"));
        assert_eq!(m.artifacts[0].sha256, sha256_hex(b"a"));
        let path = dir.path().join("manifest.json");
        m.save(&path).unwrap();
        assert_eq!(RunManifest::load(&path).unwrap(), m);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(main_with_args(["formnet", "bogus"]), 2);
        assert_eq!(main_with_args(["formnet", "eval", "--model", "/nonexistent/m.bin", "--data", "/nonexistent", "--out", "/tmp/x.json"]), 4);
        assert_eq!(main_with_args(["formnet", "--help"]), 0);
    }
}
