//! Command-line front end: `generate`, `train`, `erase`, `eval`.
//!
//! Thin sequential orchestration over the library modules. Every command
//! resolves its configuration as flags > config file > defaults, writes
//! its artifacts under one output tree, and drops a `run_manifest.json`
//! recording the resolved config, seed, and a hash over all outputs.
//! Exit codes: 0 success, 1 validation error, 2 I/O error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{self, DatasetConfig, PairedSample};
use crate::error::{Error, Result};
use crate::image_tensor::ImageTensor;
use crate::losses::{DeskFeatureExtractor, FeatureExtractor, Vgg16Extractor};
use crate::metrics::{self, MetricParams};
use crate::model::{EraseOptions, MaskPostprocess, ModelConfig, TextEraser};
use crate::trainer::{self, load_checkpoint, TrainConfig};

/// Overrides the default seed of `generate` and `train` when the
/// corresponding flag is absent (flags still win).
pub const SEED_ENV_VAR: &str = "TEXTERASE_SEED";

/// Seed of the frozen random feature extractor used when no VGG weights
/// are supplied; fixed so the loss landscape is identical across runs.
const FEATURE_SEED: u64 = 2177;

#[derive(Parser, Debug)]
#[command(
    name = "texterase",
    version,
    about = "Progressive region-based text erasure: data, training, inference, metrics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic paired dataset (original/gt/mask + manifest).
    Generate(GenerateArgs),
    /// Train an eraser on a generated dataset.
    Train(TrainArgs),
    /// Erase text from images with a trained checkpoint.
    Erase(EraseArgs),
    /// Compare predictions against ground truth and write metric reports.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Default)]
pub struct GenerateArgs {
    /// Number of samples to render.
    #[arg(long)]
    pub n: Option<usize>,
    /// Square canvas side in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Master seed for the sample stream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset config JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// Training dataset directory (layout of `generate`).
    #[arg(long)]
    pub data: PathBuf,
    /// Validation dataset directory; overrides --holdout.
    #[arg(long)]
    pub val_data: Option<PathBuf>,
    /// Hold out the last N training samples for validation.
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Erasing stages to unroll.
    #[arg(long)]
    pub stages: Option<usize>,
    /// Disable a component: region_ms, rg_loss, ssim_loss or vgg_loss.
    #[arg(long, value_name = "COMPONENT")]
    pub ablate: Vec<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Backbone width (multiple of 4).
    #[arg(long)]
    pub base_channels: Option<usize>,
    /// Training config JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Perceptual-network weights (tensor file); defaults to the frozen
    /// random extractor.
    #[arg(long)]
    pub vgg_weights: Option<PathBuf>,
    /// Output directory for checkpoints, history and curves.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EraseArgs {
    /// Checkpoint produced by `train`.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Input PNG file or directory of PNGs.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write every stage's composited image and mask.
    #[arg(long)]
    pub dump_stages: bool,
    /// Binarize predicted masks at this threshold before compositing.
    #[arg(long)]
    pub binarize_mask: Option<f32>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of predicted PNGs.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth PNGs with matching names.
    #[arg(long)]
    pub gt: PathBuf,
    /// Aggregate JSON report path; a per-image CSV lands next to it.
    #[arg(long)]
    pub report: PathBuf,
    /// Skip unpaired images instead of failing.
    #[arg(long)]
    pub allow_missing: bool,
}

/// Provenance record written alongside every command's outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    /// Fully resolved configuration after flag/file/default merging.
    pub config: serde_json::Value,
    pub seed: u64,
    /// SHA-256 over the sorted `path:digest` lines of all outputs.
    pub artifact_hash: String,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    /// Output files relative to the manifest's directory, sorted.
    pub outputs: Vec<String>,
}

fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn env_seed() -> Option<u64> {
    std::env::var(SEED_ENV_VAR).ok()?.parse().ok()
}

/// Hash `dir`-relative outputs into one digest over sorted entries.
fn artifact_hash(dir: &Path, outputs: &[String]) -> Result<String> {
    let mut lines = Vec::with_capacity(outputs.len());
    for rel in outputs {
        let path = dir.join(rel);
        let bytes = std::fs::read(&path).map_err(Error::io(&path))?;
        lines.push(format!("{rel}:{:x}", Sha256::digest(&bytes)));
    }
    lines.sort();
    Ok(format!("{:x}", Sha256::digest(lines.join("\n").as_bytes())))
}

/// Collect output paths, hash them, and write `run_manifest.json` in `dir`.
fn write_run_manifest(
    dir: &Path,
    command: &str,
    config: serde_json::Value,
    seed: u64,
    started_unix_ms: u64,
    mut outputs: Vec<String>,
) -> Result<RunManifest> {
    outputs.sort();
    let manifest = RunManifest {
        schema_version: 1,
        command: command.to_string(),
        config,
        seed,
        artifact_hash: artifact_hash(dir, &outputs)?,
        started_unix_ms,
        finished_unix_ms: now_ms(),
        outputs,
    };
    let path = dir.join("run_manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Data(format!("run manifest serialization: {e}")))?;
    std::fs::write(&path, json).map_err(Error::io(&path))?;
    Ok(manifest)
}

fn read_json_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Render a dataset under `--out` and record the run.
pub fn cmd_generate(args: &GenerateArgs) -> Result<RunManifest> {
    let started = now_ms();
    let mut cfg: DatasetConfig = match &args.config {
        Some(path) => read_json_config(path)?,
        None => DatasetConfig::default(),
    };
    if args.config.is_none() {
        if let Some(seed) = env_seed() {
            cfg.master_seed = seed;
        }
    }
    if let Some(n) = args.n {
        cfg.num_samples = n;
    }
    if let Some(size) = args.size {
        cfg.canvas_size = (size, size);
    }
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    let manifest = datagen::build_dataset(&cfg, &args.out)?;
    let mut outputs = vec!["manifest.json".to_string()];
    for e in &manifest.entries {
        for sub in ["original", "gt", "mask"] {
            outputs.push(format!("{sub}/{}.png", e.id));
        }
    }
    let config = serde_json::to_value(&cfg)
        .map_err(|e| Error::Data(format!("config serialization: {e}")))?;
    write_run_manifest(&args.out, "generate", config, cfg.master_seed, started, outputs)
}

/// Split or load the validation set per `--val-data`/`--holdout`.
fn resolve_train_sets(
    args: &TrainArgs,
) -> Result<(Vec<PairedSample>, Vec<PairedSample>)> {
    let (_, mut train_set) = datagen::load_dataset(&args.data)?;
    let val_set = match &args.val_data {
        Some(dir) => datagen::load_dataset(dir)?.1,
        None => {
            let holdout = args.holdout.unwrap_or(0);
            if holdout >= train_set.len() {
                return Err(Error::Config(format!(
                    "holdout {holdout} does not leave any of the {} samples for training",
                    train_set.len()
                )));
            }
            train_set.split_off(train_set.len() - holdout)
        }
    };
    Ok((train_set, val_set))
}

/// Train a model on a generated dataset and write checkpoints + curves.
pub fn cmd_train(args: &TrainArgs) -> Result<RunManifest> {
    let started = now_ms();
    let mut cfg: TrainConfig = match &args.config {
        Some(path) => read_json_config(path)?,
        None => TrainConfig::default(),
    };
    if args.config.is_none() {
        if let Some(seed) = env_seed() {
            cfg.seed = seed;
        }
    }
    if let Some(stages) = args.stages {
        cfg.num_stages = stages;
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    if let Some(batch) = args.batch_size {
        cfg.batch_size = batch;
    }
    if let Some(lr) = args.lr {
        cfg.learning_rate = lr;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    for name in &args.ablate {
        match name.as_str() {
            "region_ms" => cfg.toggles.region_ms = false,
            "rg_loss" => cfg.toggles.rg_loss = false,
            "ssim_loss" => cfg.toggles.ssim_loss = false,
            "vgg_loss" => cfg.toggles.vgg_loss = false,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation {other}; expected region_ms, rg_loss, ssim_loss or vgg_loss"
                )))
            }
        }
    }
    cfg.checkpoint_dir = Some(args.out.clone());

    let (train_set, val_set) = resolve_train_sets(args)?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let input_size = (train_set[0].gt.height(), train_set[0].gt.width());
    let model_cfg = ModelConfig {
        num_stages: cfg.num_stages,
        input_size,
        base_channels: args.base_channels.unwrap_or(ModelConfig::default().base_channels),
        seed: cfg.seed,
        ..ModelConfig::default()
    };
    let mut model = TextEraser::new(model_cfg.clone())?;

    let fx: Box<dyn FeatureExtractor<f32>> = match &args.vgg_weights {
        Some(path) => Box::new(Vgg16Extractor::load(path)?),
        None => Box::new(DeskFeatureExtractor::new(FEATURE_SEED)),
    };
    trainer::train(&mut model, &train_set, &val_set, fx.as_ref(), &cfg)?;

    let mut outputs = vec!["last.ckpt".to_string(), "history.jsonl".to_string()];
    for extra in ["best.ckpt", "curves.png"] {
        if args.out.join(extra).is_file() {
            outputs.push(extra.to_string());
        }
    }
    let config = serde_json::json!({
        "train": cfg,
        "model": model_cfg,
        "data": args.data.display().to_string(),
        "val_data": args.val_data.as_ref().map(|p| p.display().to_string()),
        "holdout": args.holdout.unwrap_or(0),
        "vgg_weights": args.vgg_weights.as_ref().map(|p| p.display().to_string()),
    });
    write_run_manifest(&args.out, "train", config, cfg.seed, started, outputs)
}

/// List the PNG inputs of `erase`: one file, or a directory scan.
fn erase_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(Error::io(input))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("png"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!(
            "no PNG inputs under {}",
            input.display()
        )));
    }
    Ok(files)
}

/// Run a checkpoint over the inputs; write one erased PNG per input and,
/// with `--dump-stages`, every stage's composite and mask.
pub fn cmd_erase(args: &EraseArgs) -> Result<RunManifest> {
    let started = now_ms();
    let (model, _) = load_checkpoint(&args.ckpt)?;
    let opts = EraseOptions {
        mask_postprocess: match args.binarize_mask {
            Some(threshold) => MaskPostprocess::Binarize { threshold },
            None => MaskPostprocess::Identity,
        },
        ..Default::default()
    };
    std::fs::create_dir_all(&args.out).map_err(Error::io(&args.out))?;
    let mut outputs = Vec::new();
    for path in erase_inputs(&args.input)? {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into());
        let image = ImageTensor::load_png(&path)?;
        let stages = model.erase(&image, &opts)?;
        let last = stages.last().expect("at least one stage");
        let name = format!("{stem}.png");
        last.composited.save_png(args.out.join(&name))?;
        outputs.push(name);
        if args.dump_stages {
            for stage in &stages {
                let t = stage.stage_index;
                let img = format!("{stem}_stage{t}.png");
                let msk = format!("{stem}_stage{t}_mask.png");
                stage.composited.save_png(args.out.join(&img))?;
                stage.mask.save_png(args.out.join(&msk))?;
                outputs.push(img);
                outputs.push(msk);
            }
        }
    }
    let config = serde_json::json!({
        "ckpt": args.ckpt.display().to_string(),
        "input": args.input.display().to_string(),
        "dump_stages": args.dump_stages,
        "binarize_mask": args.binarize_mask,
        "model": model.config(),
    });
    write_run_manifest(&args.out, "erase", config, 0, started, outputs)
}

/// Schema-versioned aggregate + per-image JSON report of `eval`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub aggregate: metrics::MetricsReport,
    pub per_image: Vec<EvalRow>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalRow {
    pub name: String,
    #[serde(flatten)]
    pub metrics: metrics::MetricsReport,
}

/// Evaluate prediction/ground-truth pairs; write the JSON report and a
/// per-image CSV next to it.
pub fn cmd_eval(args: &EvalArgs) -> Result<RunManifest> {
    let started = now_ms();
    let (rows, aggregate) = metrics::evaluate_dataset(
        &args.pred,
        &args.gt,
        &MetricParams::default(),
        args.allow_missing,
    )?;
    let report_dir = args
        .report
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&report_dir).map_err(Error::io(&report_dir))?;

    let report = EvalReport {
        schema_version: 1,
        aggregate,
        per_image: rows
            .iter()
            .map(|(name, m)| EvalRow {
                name: name.clone(),
                metrics: *m,
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Data(format!("report serialization: {e}")))?;
    std::fs::write(&args.report, json).map_err(Error::io(&args.report))?;

    let csv_path = args.report.with_extension("csv");
    let mut writer = csv::Writer::from_path(&csv_path).map_err(|e| {
        Error::Data(format!("{}: {e}", csv_path.display()))
    })?;
    writer
        .write_record(["name", "psnr", "mssim", "mse", "age", "peps", "pceps"])
        .and_then(|_| {
            report.per_image.iter().try_for_each(|row| {
                writer.write_record([
                    row.name.clone(),
                    row.metrics.psnr.to_string(),
                    row.metrics.mssim.to_string(),
                    row.metrics.mse.to_string(),
                    row.metrics.age.to_string(),
                    row.metrics.peps.to_string(),
                    row.metrics.pceps.to_string(),
                ])
            })
        })
        .and_then(|_| writer.flush().map_err(Into::into))
        .map_err(|e| Error::Data(format!("{}: {e}", csv_path.display())))?;

    let rel = |p: &Path| {
        p.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let outputs = vec![rel(&args.report), rel(&csv_path)];
    let config = serde_json::json!({
        "pred": args.pred.display().to_string(),
        "gt": args.gt.display().to_string(),
        "allow_missing": args.allow_missing,
    });
    write_run_manifest(&report_dir, "eval", config, 0, started, outputs)
}

pub fn dispatch(command: &Command) -> Result<RunManifest> {
    match command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Erase(args) => cmd_erase(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version print to stdout and are a success.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(manifest) => {
            println!(
                "{}: {} outputs, artifact hash {}",
                manifest.command,
                manifest.outputs.len(),
                manifest.artifact_hash
            );
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
