//! The `voxelstruct` binary: dataset generation, training, and evaluation
//! as subcommands over the library pipeline.
//!
//! Exit codes are a stable contract: 0 success, 2 invalid arguments or
//! configuration, 3 I/O failure, 4 data problems (missing annotations, bad
//! dataset), 5 checkpoint/config-hash mismatch. All randomness flows from
//! explicit `--seed` flags; re-running a subcommand with identical inputs
//! overwrites its outputs with identical bytes.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::dataset::{self, files, CropSide, Dataset};
use crate::error::{Error, Result};
use crate::eval::{
    completion_eval, consistency_report, export_views, interpolate, sparseness_sweep, Degradation,
};
use crate::nets::{checkpoint, expected_keys, ModelParams, NetConfig, ParamSet};
use crate::training::{collaborative_train, describe_params, pretrain_detector, pretrain_vae};

/// Structure-aware voxel shape synthesis pipeline.
#[derive(Debug, Parser)]
#[command(name = "voxelstruct", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural chair dataset with analytic landmarks.
    GenData(GenDataArgs),
    /// Train the shape VAE, the structure detector, or both jointly.
    Train(TrainArgs),
    /// Run an evaluation protocol against trained checkpoints.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory for voxel files, landmark files, and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of chairs to generate.
    #[arg(long, default_value_t = 250)]
    pub count: usize,
    /// Grid resolution D.
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Master seed for parameters and the split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of each split carrying landmark annotations (0 disables).
    #[arg(long, default_value_t = 0.24)]
    pub annotated_frac: f64,
    /// Fraction of samples held out for testing.
    #[arg(long, default_value_t = 0.2)]
    pub test_frac: f64,
    /// Admit zero-leg and five-leg chairs.
    #[arg(long, default_value_t = false)]
    pub hard: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainMode {
    /// Shape encoder/generator pretraining on reconstruction + KL.
    Vae,
    /// Structure detector pretraining (add --init with a VAE checkpoint to
    /// activate the robustness term on reconstructions).
    Detector,
    /// Collaborative training; --init must supply encoder, generator, and
    /// detector weights.
    Joint,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub mode: TrainMode,
    /// Dataset directory (as written by gen-data).
    #[arg(long)]
    pub data: PathBuf,
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for checkpoints, the log, and the config copy.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint(s) to initialize from; may repeat, later files win per key.
    #[arg(long)]
    pub init: Vec<PathBuf>,
    /// Record real wall-clock times in the log CSV (off keeps reruns
    /// byte-identical).
    #[arg(long, default_value_t = false)]
    pub timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    /// Clean reconstruction IoU on the test split.
    Iou,
    /// Completion IoU under a fixed degradation.
    Complete,
    /// Completion IoU across sparseness levels (paired when two models).
    Sweep,
    /// Latent interpolation between two samples.
    Interpolate,
    /// Per-landmark consistency of prior samples.
    Consistency,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub protocol: Protocol,
    /// Checkpoint path(s), comma separated; each needs a config.json beside
    /// it. Two checkpoints enable paired comparisons.
    #[arg(long, value_delimiter = ',', required = true)]
    pub models: Vec<PathBuf>,
    /// Dataset directory (required by iou/complete/sweep/interpolate).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for report files.
    #[arg(long)]
    pub out: PathBuf,
    /// Binarization threshold for IoU.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Sparsify level for the complete protocol.
    #[arg(long, default_value_t = 0.0)]
    pub sparsify: f64,
    /// Dilation iterations for the complete protocol.
    #[arg(long, default_value_t = 0)]
    pub dilate: usize,
    /// Crop spec `axis:fraction:side` (e.g. `z:0.33:low`), complete protocol.
    #[arg(long)]
    pub crop: Option<String>,
    /// Sparseness levels for the sweep protocol.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.25, 0.5, 0.75])]
    pub levels: Vec<f64>,
    /// Degradation seeds for sweep/complete.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0])]
    pub seeds: Vec<u64>,
    /// First endpoint sample id (interpolate).
    #[arg(long, default_value_t = 0)]
    pub a: usize,
    /// Second endpoint sample id (interpolate).
    #[arg(long, default_value_t = 1)]
    pub b: usize,
    /// Number of interpolation steps.
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    /// Number of prior draws (consistency).
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    /// Seed for prior draws (consistency).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Maps library errors onto the documented exit codes.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Json(_) => 2,
        Error::Io(_) => 3,
        Error::Data(_) | Error::Checkpoint(_) => 4,
        Error::ConfigHashMismatch(_) => 5,
        _ => 1,
    }
}

/// Caps the rayon worker pool from VOXELSTRUCT_THREADS (default: all cores).
pub fn init_threads() {
    if let Ok(value) = std::env::var("VOXELSTRUCT_THREADS") {
        if let Ok(n) = value.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

/// Binary entry point: parses arguments, dispatches, returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    init_threads();
    match run(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(args) => cmd_gen_data(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
    }
}

#[derive(Serialize)]
struct GenStamp {
    count: usize,
    dim: usize,
    seed: u64,
    test_frac: f64,
    annotated_frac: f64,
    hard: bool,
}

fn hash_json<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_string(value).expect("stamp serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    if args.dim < 16 {
        return Err(Error::Config(format!(
            "--dim must be at least 16, got {}",
            args.dim
        )));
    }
    let dataset = dataset::generate_dataset(
        args.count,
        args.dim,
        args.seed,
        args.test_frac,
        args.annotated_frac,
        args.hard,
    )?;
    let stamp = GenStamp {
        count: args.count,
        dim: args.dim,
        seed: args.seed,
        test_frac: args.test_frac,
        annotated_frac: args.annotated_frac,
        hard: args.hard,
    };
    std::fs::create_dir_all(&args.out)?;
    files::write_dataset(&args.out, &dataset, &hash_json(&stamp))?;
    println!(
        "wrote {} samples at D={} to {} (train {}, test {}, annotated {}+{})",
        args.count,
        args.dim,
        args.out.display(),
        dataset.split.train.len(),
        dataset.split.test.len(),
        dataset.split.annotated_train.len(),
        dataset.split.annotated_test.len(),
    );
    Ok(())
}

fn load_config(args_config: Option<&Path>, seed: Option<u64>, dim: usize) -> Result<RunConfig> {
    let mut cfg = match args_config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let mut cfg = RunConfig::default();
            // Without an explicit config, follow the dataset resolution.
            cfg.net.grid_dim = dim;
            cfg
        }
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    if cfg.net.grid_dim != dim {
        return Err(Error::Config(format!(
            "config grid_dim {} does not match dataset dim {dim}",
            cfg.net.grid_dim
        )));
    }
    Ok(cfg)
}

/// Loads and merges the given checkpoints (later files win per key), then
/// validates key sets for present components.
fn load_init(paths: &[PathBuf], net: &NetConfig) -> Result<ModelParams> {
    let mut merged = std::collections::BTreeMap::new();
    for path in paths {
        merged.extend(checkpoint::read_checkpoint(path)?);
    }
    let params = checkpoint::split_entries(merged);
    let (enc, gen, det) = expected_keys(net);
    if !params.encoder.is_empty() {
        params.encoder.validate_keys(&enc, "encoder")?;
    }
    if !params.generator.is_empty() {
        params.generator.validate_keys(&gen, "generator")?;
    }
    if !params.detector.is_empty() {
        params.detector.validate_keys(&det, "detector")?;
    }
    Ok(params)
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let data = files::load_dataset(&args.data)?;
    let cfg = load_config(args.config.as_deref(), args.seed, data.dim)?;
    std::fs::create_dir_all(&args.out)?;
    cfg.save(&args.out.join("config.json"))?;
    println!("config hash {}", cfg.content_hash());
    println!("{}", describe_params(&cfg)?);

    let init = load_init(&args.init, &cfg.net)?;
    let log = match args.mode {
        TrainMode::Vae => {
            let init_pair = if !init.encoder.is_empty() && !init.generator.is_empty() {
                Some((init.encoder, init.generator))
            } else {
                None
            };
            let (_, _, log) = pretrain_vae(&data, &cfg, init_pair, Some(&args.out))?;
            log
        }
        TrainMode::Detector => {
            let recon = if !init.encoder.is_empty() && !init.generator.is_empty() {
                Some((&init.encoder, &init.generator))
            } else {
                None
            };
            let det_init = if init.detector.is_empty() {
                None
            } else {
                Some(init.detector.clone())
            };
            let (_, log) = pretrain_detector(&data, &cfg, recon, det_init, Some(&args.out))?;
            log
        }
        TrainMode::Joint => {
            if init.encoder.is_empty() || init.generator.is_empty() || init.detector.is_empty() {
                return Err(Error::Config(
                    "joint mode needs --init checkpoint(s) holding encoder, generator, and detector weights".into(),
                ));
            }
            let (_, log) = collaborative_train(init, &data, &cfg, Some(&args.out))?;
            log
        }
    };
    log.write_csv(&args.out.join("train_log.csv"), args.timing)?;
    let (first, last) = (
        log.records.first().map(|r| r.total).unwrap_or(0.0),
        log.last_total().unwrap_or(0.0),
    );
    println!(
        "finished {} optimizer steps (total loss {first:.4} -> {last:.4})",
        log.records.len()
    );
    Ok(())
}

struct LoadedModel {
    params: ModelParams,
    cfg: RunConfig,
    hash: String,
    label: String,
}

fn load_model(path: &Path) -> Result<LoadedModel> {
    let params = checkpoint::read_model(path)?;
    let config_path = path
        .parent()
        .map(|d| d.join("config.json"))
        .filter(|p| p.exists())
        .ok_or_else(|| {
            Error::ConfigHashMismatch(format!(
                "{}: no config.json beside the checkpoint to verify against",
                path.display()
            ))
        })?;
    let cfg = RunConfig::load(&config_path)?;
    let hash = cfg.content_hash();
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    Ok(LoadedModel {
        params,
        cfg,
        hash,
        label,
    })
}

fn require(set: &ParamSet, what: &str, model: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{model}: checkpoint holds no {what} weights"
        )));
    }
    Ok(())
}

fn parse_crop(spec: &str) -> Result<(usize, f64, CropSide)> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "crop spec '{spec}' is not axis:fraction:side"
        )));
    }
    let axis = match parts[0] {
        "x" => 0,
        "y" => 1,
        "z" => 2,
        other => return Err(Error::Config(format!("crop axis '{other}' not x/y/z"))),
    };
    let fraction: f64 = parts[1]
        .parse()
        .map_err(|_| Error::Config(format!("crop fraction '{}' not a number", parts[1])))?;
    let side = match parts[2] {
        "low" => CropSide::Low,
        "high" => CropSide::High,
        other => return Err(Error::Config(format!("crop side '{other}' not low/high"))),
    };
    Ok((axis, fraction, side))
}

fn load_eval_dataset(args: &EvalArgs, net: &NetConfig) -> Result<Dataset> {
    let dir = args.data.as_ref().ok_or_else(|| {
        Error::Config("this protocol needs --data pointing at a dataset directory".into())
    })?;
    let data = files::load_dataset(dir)?;
    if data.dim != net.grid_dim {
        return Err(Error::Config(format!(
            "dataset dim {} does not match model grid_dim {}",
            data.dim, net.grid_dim
        )));
    }
    Ok(data)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    if args.models.is_empty() {
        return Err(Error::Config("--models needs at least one checkpoint".into()));
    }
    let models: Vec<LoadedModel> = args.models.iter().map(|p| load_model(p)).collect::<Result<_>>()?;
    // Cross-config comparisons are refused outright.
    for m in &models[1..] {
        if m.hash != models[0].hash {
            return Err(Error::ConfigHashMismatch(format!(
                "checkpoint {} was trained under config {} but {} carries {}",
                args.models[0].display(),
                models[0].hash,
                m.label,
                m.hash
            )));
        }
    }
    let cfg = models[0].cfg.clone();
    let hash = models[0].hash.clone();
    std::fs::create_dir_all(&args.out)?;

    match args.protocol {
        Protocol::Iou => {
            let m = &models[0];
            require(&m.params.encoder, "encoder", &m.label)?;
            require(&m.params.generator, "generator", &m.label)?;
            let data = load_eval_dataset(args, &cfg.net)?;
            let report = completion_eval(
                &m.params.encoder,
                &m.params.generator,
                &cfg.net,
                &data.test_samples(),
                &Degradation::none(),
                args.threshold,
                args.seeds[0],
                &hash,
            )?;
            report.write_csv(&args.out.join("iou_report.csv"))?;
            report.write_json(&args.out.join("iou_report.json"))?;
            println!(
                "reconstruction IoU over {} test samples: {:.4}",
                report.rows.len(),
                report.aggregate("mean_iou").unwrap_or(0.0)
            );
        }
        Protocol::Complete => {
            let m = &models[0];
            require(&m.params.encoder, "encoder", &m.label)?;
            require(&m.params.generator, "generator", &m.label)?;
            let data = load_eval_dataset(args, &cfg.net)?;
            let degradation = Degradation {
                sparsify_level: args.sparsify,
                dilate_iters: args.dilate,
                crop: args.crop.as_deref().map(parse_crop).transpose()?,
            };
            let report = completion_eval(
                &m.params.encoder,
                &m.params.generator,
                &cfg.net,
                &data.test_samples(),
                &degradation,
                args.threshold,
                args.seeds[0],
                &hash,
            )?;
            report.write_csv(&args.out.join("complete_report.csv"))?;
            report.write_json(&args.out.join("complete_report.json"))?;
            println!(
                "completion IoU (sparsify {}, dilate {}, crop {:?}): {:.4}",
                args.sparsify,
                args.dilate,
                args.crop,
                report.aggregate("mean_iou").unwrap_or(0.0)
            );
        }
        Protocol::Sweep => {
            let data = load_eval_dataset(args, &cfg.net)?;
            let mut labelled: Vec<(&str, &ParamSet, &ParamSet)> = Vec::new();
            for m in &models {
                require(&m.params.encoder, "encoder", &m.label)?;
                require(&m.params.generator, "generator", &m.label)?;
                labelled.push((m.label.as_str(), &m.params.encoder, &m.params.generator));
            }
            let report = sparseness_sweep(
                &labelled,
                &cfg.net,
                &data.test_samples(),
                &args.levels,
                &args.seeds,
                args.threshold,
                &hash,
            )?;
            report.write_csv(&args.out.join("sweep.csv"))?;
            report.write_json(&args.out.join("sweep.json"))?;
            println!("sweep over {} levels written", args.levels.len());
        }
        Protocol::Interpolate => {
            let m = &models[0];
            require(&m.params.encoder, "encoder", &m.label)?;
            require(&m.params.generator, "generator", &m.label)?;
            let data = load_eval_dataset(args, &cfg.net)?;
            if args.a >= data.samples.len() || args.b >= data.samples.len() {
                return Err(Error::Data(format!(
                    "sample ids {}/{} out of range (dataset has {})",
                    args.a,
                    args.b,
                    data.samples.len()
                )));
            }
            let detector = if m.params.detector.is_empty() {
                None
            } else {
                Some(&m.params.detector)
            };
            let track = interpolate(
                &m.params.encoder,
                &m.params.generator,
                detector,
                &cfg.net,
                &data.samples[args.a],
                &data.samples[args.b],
                args.k,
            )?;
            for (i, grid) in track.grids.iter().enumerate() {
                files::write_voxel_file(&args.out.join(format!("interp_{i:03}.vox")), grid)?;
                export_views(grid, &args.out.join(format!("interp_{i:03}")))?;
            }
            let meta = serde_json::json!({
                "a_id": track.a_id,
                "b_id": track.b_id,
                "k": args.k,
                "codes": track.codes,
                "landmarks": track.landmarks.as_ref().map(|sets| {
                    sets.iter().map(|s| s.points().to_vec()).collect::<Vec<_>>()
                }),
                "config_hash": hash,
            });
            std::fs::write(
                args.out.join("track.json"),
                serde_json::to_string_pretty(&meta)?,
            )?;
            println!("wrote {} interpolation steps", track.grids.len());
        }
        Protocol::Consistency => {
            let m = &models[0];
            require(&m.params.generator, "generator", &m.label)?;
            require(&m.params.detector, "detector", &m.label)?;
            let report = consistency_report(
                &m.params.generator,
                &m.params.detector,
                &cfg.net,
                args.n,
                args.seed,
                cfg.consist_sigma,
                cfg.consist_trunc,
                &hash,
            )?;
            report.write_csv(&args.out.join("consistency.csv"))?;
            report.write_json(&args.out.join("consistency.json"))?;
            println!(
                "mean consistency M over {} prior draws: {:.4}",
                args.n,
                report.aggregate("mean_total").unwrap_or(0.0)
            );
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_spec_parsing() {
        assert_eq!(parse_crop("z:0.33:low").unwrap(), (2, 0.33, CropSide::Low));
        assert_eq!(parse_crop("x:0.1:high").unwrap(), (0, 0.1, CropSide::High));
        assert!(parse_crop("w:0.1:low").is_err());
        assert!(parse_crop("z:abc:low").is_err());
        assert!(parse_crop("z:0.1").is_err());
    }

    #[test]
    fn exit_codes_are_stable() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(
            exit_code(&Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "x"
            ))),
            3
        );
        assert_eq!(exit_code(&Error::Data("x".into())), 4);
        assert_eq!(exit_code(&Error::Checkpoint("x".into())), 4);
        assert_eq!(exit_code(&Error::ConfigHashMismatch("x".into())), 5);
        assert_eq!(
            exit_code(&Error::Diverged {
                step: 1,
                last_checkpoint: None
            }),
            1
        );
    }
}
