//! Adam optimization, VAE and detector pretraining, and the collaborative
//! training loop that alternates detector updates on labelled data with
//! shape updates driven by reconstruction, KL, and prior-sample consistency.
//!
//! Every batch order, augmentation factor, reparameterization draw, prior
//! sample, and dropout mask comes from a purpose-keyed RNG stream derived
//! from the run seed, so runs are exactly reproducible and independent
//! streams never shift each other. The stage-2 shape phase shares its stream
//! keys with VAE pretraining; with the consistency and robustness weights
//! zeroed it therefore reproduces plain VAE fine-tuning step for step.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{augment_factors, augment_scale, Dataset, Sample};
use crate::error::{Error, Result};
use crate::losses::{
    consistency_spec, kl_loss, recon_loss, shape_total_loss,
};
use crate::nets::{
    self, checkpoint, detect, encode, generate, init_params, watch_params, ModelParams, ParamSet,
    WatchedParams,
};
use crate::tensor::{Gradients, Tape, Tensor};
use crate::util::stream_rng;
use crate::voxel::{grids_to_tensor, landmarks_to_tensor, LandmarkSet, VoxelGrid};

/// Adam optimizer state: per-parameter first/second moments plus the shared
/// step count and hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn first_moment(&self, key: &str) -> Option<&[f64]> {
        self.first.get(key).map(Vec::as_slice)
    }
}

/// One bias-corrected Adam update over the given parameter sets. Keys absent
/// from `grads` are treated as zero gradient; non-finite gradients abort with
/// the offending parameter key.
pub fn adam_step(
    sets: &mut [&mut ParamSet],
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamState,
) -> Result<()> {
    for (key, g) in grads {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "NaN gradient for parameter {key} at element {i}"
            )));
        }
    }
    state.step += 1;
    let bc1 = 1.0 - state.beta1.powi(state.step as i32);
    let bc2 = 1.0 - state.beta2.powi(state.step as i32);
    for set in sets {
        for (key, tensor) in set.iter_mut() {
            let n = tensor.len();
            let m = state.first.entry(key.to_string()).or_insert_with(|| vec![0.0; n]);
            let v = state.second.entry(key.to_string()).or_insert_with(|| vec![0.0; n]);
            let zero;
            let g = match grads.get(key) {
                Some(g) => g.as_slice(),
                None => {
                    zero = vec![0.0; n];
                    zero.as_slice()
                }
            };
            let data = tensor.data_mut();
            for i in 0..n {
                m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
                v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
            }
        }
    }
    Ok(())
}

/// Pulls the gradient buffers of a watched parameter view into a keyed map.
pub fn collect_grads(
    grads: &Gradients,
    watched: &WatchedParams,
    into: &mut BTreeMap<String, Vec<f64>>,
) {
    for (key, tensor) in watched.iter() {
        if let Some(g) = grads.wrt(tensor) {
            into.insert(key.to_string(), g.to_vec());
        }
    }
}

/// Global L2 norm over a gradient map.
pub fn grad_norm(grads: &BTreeMap<String, Vec<f64>>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Scales the whole map down when its global norm exceeds `max_norm`;
/// returns the pre-clip norm.
pub fn clip_grads(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

fn prefix_norm(grads: &BTreeMap<String, Vec<f64>>, prefix: &str) -> f64 {
    grads
        .iter()
        .filter(|(k, _)| k.starts_with(prefix))
        .flat_map(|(_, g)| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Hyperparameters of one pretraining stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageParams {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
}

impl Default for StageParams {
    fn default() -> Self {
        StageParams {
            lr: 3e-4,
            batch: 16,
            epochs: 60,
        }
    }
}

/// Collaborative stage 1: generator (and detector) updates with the encoder
/// frozen, counted in optimizer steps, followed by a decreasing-batch
/// fine-tune sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Params {
    pub gen_lr: f64,
    pub batch: usize,
    pub iters: usize,
    pub finetune_lr: f64,
    pub finetune_batches: Vec<usize>,
    pub finetune_iters: usize,
}

impl Default for Stage1Params {
    fn default() -> Self {
        Stage1Params {
            gen_lr: 1e-2,
            batch: 32,
            iters: 150,
            finetune_lr: 1e-3,
            finetune_batches: vec![16, 8, 4, 2],
            finetune_iters: 20,
        }
    }
}

/// Collaborative stage 2: the entire system fine-tuned end to end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Params {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
}

impl Default for Stage2Params {
    fn default() -> Self {
        Stage2Params {
            lr: 1e-6,
            batch: 32,
            epochs: 50,
        }
    }
}

/// All training hyperparameters: the latent prior, the three pretraining /
/// collaborative schedules, and the safety rails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub prior_mu: f64,
    pub prior_sigma: f64,
    pub vae: StageParams,
    pub detector: StageParams,
    pub stage1: Stage1Params,
    pub stage2: Stage2Params,
    /// Detector learning rate during collaborative training (lambda-1).
    pub detector_collab_lr: f64,
    pub detector_collab_batch: usize,
    /// Global-norm gradient clip for the collaborative phase; the 1/M loss
    /// has unbounded gradient as M approaches zero.
    pub grad_clip: f64,
    pub checkpoint_every: usize,
    /// Random anisotropic rescaling of every training sample each epoch.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            prior_mu: 0.0,
            prior_sigma: 1.0,
            vae: StageParams::default(),
            detector: StageParams {
                lr: 1e-4,
                batch: 16,
                epochs: 150,
            },
            stage1: Stage1Params::default(),
            stage2: Stage2Params::default(),
            detector_collab_lr: 1e-4,
            detector_collab_batch: 32,
            grad_clip: 10.0,
            checkpoint_every: 10,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lrs = [
            self.vae.lr,
            self.detector.lr,
            self.stage1.gen_lr,
            self.stage1.finetune_lr,
            self.stage2.lr,
            self.detector_collab_lr,
        ];
        if lrs.iter().any(|lr| !(lr.is_finite() && *lr > 0.0)) {
            return Err(Error::Config("all learning rates must be positive".into()));
        }
        if self.prior_sigma <= 0.0 {
            return Err(Error::Config("prior_sigma must be positive".into()));
        }
        let batches = [
            self.vae.batch,
            self.detector.batch,
            self.stage1.batch,
            self.stage2.batch,
            self.detector_collab_batch,
        ];
        if batches.iter().any(|b| *b == 0) || self.stage1.finetune_batches.contains(&0) {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.grad_clip <= 0.0 {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        Ok(())
    }
}

/// One optimizer step's log record.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub stage: String,
    pub l_rec: f64,
    pub l_kl: f64,
    pub l_struct_c: f64,
    pub l_struct_r: f64,
    pub l_consist: f64,
    pub total: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
    /// Per-component gradient norms; exactly zero for frozen sets.
    pub enc_grad_norm: f64,
    pub gen_grad_norm: f64,
    pub det_grad_norm: f64,
}

/// Append-only training log, one record per optimizer step.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

pub const TRAIN_LOG_HEADER: &str =
    "step,stage,l_rec,l_kl,l_struct_c,l_struct_r,l_consist,total,grad_norm,wall_ms";

impl TrainLog {
    pub fn push(&mut self, record: LogRecord) {
        self.records.push(record);
    }

    pub fn extend(&mut self, other: TrainLog) {
        self.records.extend(other.records);
    }

    pub fn last_total(&self) -> Option<f64> {
        self.records.last().map(|r| r.total)
    }

    /// Writes the CSV log. Wall-clock times are zeroed unless
    /// `include_wall_time` so reruns stay byte-identical by default.
    pub fn write_csv(&self, path: &Path, include_wall_time: bool) -> Result<()> {
        let mut out = String::from(TRAIN_LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            let wall = if include_wall_time { r.wall_ms } else { 0.0 };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.step,
                r.stage,
                r.l_rec,
                r.l_kl,
                r.l_struct_c,
                r.l_struct_r,
                r.l_consist,
                r.total,
                r.grad_norm,
                wall
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

fn shuffled(ids: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = ids.to_vec();
    for i in (1..out.len()).rev() {
        let j = rng.gen_range(0..=i);
        out.swap(i, j);
    }
    out
}

fn normal_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng, mu: f64, sigma: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            mu + sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
        })
        .collect();
    Tensor::from_vec(shape, data).expect("normal tensor shape")
}

/// Augments each referenced sample with factors from the per-(epoch, id)
/// stream and stacks shapes (and optionally landmarks) into batch tensors.
fn assemble_batch(
    data: &Dataset,
    ids: &[usize],
    seed: u64,
    purpose: &str,
    epoch: usize,
    augment: bool,
    with_landmarks: bool,
) -> Result<(Tensor, Option<Tensor>)> {
    let mut grids: Vec<VoxelGrid> = Vec::with_capacity(ids.len());
    let mut landmarks: Vec<LandmarkSet> = Vec::with_capacity(ids.len());
    for &id in ids {
        let sample: &Sample = &data.samples[id];
        let prepared = if augment {
            let mut rng = stream_rng(seed, purpose, epoch as u64, id as u64);
            let [sx, sy, sz] = augment_factors(&mut rng);
            augment_scale(sample, sx, sy, sz)?
        } else {
            sample.clone()
        };
        if with_landmarks {
            landmarks.push(prepared.landmarks.ok_or_else(|| {
                Error::Data(format!("sample {id} has no landmark annotations"))
            })?);
        }
        grids.push(prepared.shape);
    }
    let refs: Vec<&VoxelGrid> = grids.iter().collect();
    let grid_tensor = grids_to_tensor(&refs)?;
    let lm_tensor = if with_landmarks {
        let refs: Vec<&LandmarkSet> = landmarks.iter().collect();
        Some(landmarks_to_tensor(&refs)?)
    } else {
        None
    };
    Ok((grid_tensor, lm_tensor))
}

fn write_ckpt(dir: &Path, name: &str, sets: &[&ParamSet]) -> Result<PathBuf> {
    let path = dir.join(name);
    checkpoint::write_checkpoint(&path, sets)?;
    Ok(path)
}

/// Divergence bookkeeping: writes the last good parameters (when a directory
/// is given) and wraps the failure.
/// Routes non-finite forward losses into the divergence path while letting
/// genuine usage errors propagate unchanged.
macro_rules! step_try {
    ($expr:expr, $step:expr, $dir:expr, $good:expr) => {
        match $expr {
            Ok(v) => v,
            Err(Error::Numeric(_)) => return Err(diverged($step, $dir, $good)),
            Err(e) => return Err(e),
        }
    };
}

fn diverged(
    step: usize,
    dir: Option<&Path>,
    last_good: &[&ParamSet],
) -> Error {
    let last_checkpoint = dir.and_then(|d| write_ckpt(d, "model_lastgood.ckpt", last_good).ok());
    Error::Diverged {
        step,
        last_checkpoint,
    }
}

/// Pretrains the shape encoder/generator on the reconstruction + KL loss
/// with per-epoch augmentation. Returns the trained parameters and the log;
/// periodic checkpoints land in `ckpt_dir` when given.
pub fn pretrain_vae(
    data: &Dataset,
    cfg: &RunConfig,
    init: Option<(ParamSet, ParamSet)>,
    ckpt_dir: Option<&Path>,
) -> Result<(ParamSet, ParamSet, TrainLog)> {
    cfg.validate()?;
    if data.split.train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let seed = cfg.seed;
    let (mut enc, mut gen) = match init {
        Some(pair) => pair,
        None => {
            let p = init_params(&cfg.net, seed)?;
            (p.encoder, p.generator)
        }
    };
    let mut adam = AdamState::new(cfg.train.vae.lr);
    let mut log = TrainLog::default();
    let mut step = 0usize;
    let weights = cfg.loss;

    for epoch in 0..cfg.train.vae.epochs {
        let mut shuffle_rng = stream_rng(seed, "shuffle", epoch as u64, 0);
        let ids = shuffled(&data.split.train, &mut shuffle_rng);
        for (bi, chunk) in ids.chunks(cfg.train.vae.batch).enumerate() {
            let start = Instant::now();
            let (grids, _) = assemble_batch(
                data,
                chunk,
                seed,
                "augment",
                epoch,
                cfg.train.augment,
                false,
            )?;
            let mut tape = Tape::new();
            let enc_w = watch_params(&mut tape, &enc, true);
            let gen_w = watch_params(&mut tape, &gen, true);
            let (mu, logvar) = encode(&mut tape, &enc_w, &cfg.net, &grids)?;
            let mut noise_rng = stream_rng(seed, "noise", epoch as u64, bi as u64);
            let noise = normal_tensor(mu.shape().to_vec(), &mut noise_rng, 0.0, 1.0);
            let z = step_try!(
                tape.reparameterize(&mu, &logvar, &noise),
                step, ckpt_dir, &[&enc, &gen]
            );
            let out = generate(&mut tape, &gen_w, &cfg.net, &z)?;
            let l_rec = step_try!(
                recon_loss(&mut tape, &out, &grids),
                step, ckpt_dir, &[&enc, &gen]
            );
            let l_kl = step_try!(
                kl_loss(&mut tape, &mu, &logvar),
                step, ckpt_dir, &[&enc, &gen]
            );
            let weighted_kl = tape.scale(&l_kl, weights.kl_weight);
            let total = tape.add(&l_rec, &weighted_kl)?;

            if !total.item().is_finite() {
                return Err(diverged(step, ckpt_dir, &[&enc, &gen]));
            }
            let grads = match tape.backward(&total) {
                Ok(g) => g,
                Err(_) => return Err(diverged(step, ckpt_dir, &[&enc, &gen])),
            };
            let mut gmap = BTreeMap::new();
            collect_grads(&grads, &enc_w, &mut gmap);
            collect_grads(&grads, &gen_w, &mut gmap);
            let norm = grad_norm(&gmap);
            let enc_norm = prefix_norm(&gmap, "enc/");
            let gen_norm = prefix_norm(&gmap, "gen/");
            adam_step(&mut [&mut enc, &mut gen], &gmap, &mut adam)?;

            log.push(LogRecord {
                step,
                stage: "vae".into(),
                l_rec: l_rec.item(),
                l_kl: l_kl.item(),
                l_struct_c: 0.0,
                l_struct_r: 0.0,
                l_consist: 0.0,
                total: total.item(),
                grad_norm: norm,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                enc_grad_norm: enc_norm,
                gen_grad_norm: gen_norm,
                det_grad_norm: 0.0,
            });
            step += 1;
        }
        if let Some(dir) = ckpt_dir {
            if (epoch + 1) % cfg.train.checkpoint_every == 0 {
                write_ckpt(dir, &format!("model_epoch_{:04}.ckpt", epoch + 1), &[&enc, &gen])?;
            }
        }
    }
    if let Some(dir) = ckpt_dir {
        write_ckpt(dir, "model_final.ckpt", &[&enc, &gen])?;
    }
    Ok((enc, gen, log))
}

/// Pretrains the structure detector on annotated samples. When
/// `recon_models` supplies a pretrained encoder/generator, every batch also
/// carries mean-branch reconstructions of its samples and the robustness
/// term becomes active.
pub fn pretrain_detector(
    data: &Dataset,
    cfg: &RunConfig,
    recon_models: Option<(&ParamSet, &ParamSet)>,
    init: Option<ParamSet>,
    ckpt_dir: Option<&Path>,
) -> Result<(ParamSet, TrainLog)> {
    cfg.validate()?;
    if data.split.annotated_train.is_empty() {
        return Err(Error::Data(
            "detector pretraining needs annotated training samples".into(),
        ));
    }
    let seed = cfg.seed;
    let mut det = match init {
        Some(p) => p,
        None => init_params(&cfg.net, seed)?.detector,
    };
    let mut adam = AdamState::new(cfg.train.detector.lr);
    let mut log = TrainLog::default();
    let mut step = 0usize;
    let weights = cfg.loss;

    for epoch in 0..cfg.train.detector.epochs {
        let mut shuffle_rng = stream_rng(seed, "det_shuffle", epoch as u64, 0);
        let ids = shuffled(&data.split.annotated_train, &mut shuffle_rng);
        for (bi, chunk) in ids.chunks(cfg.train.detector.batch).enumerate() {
            let start = Instant::now();
            let (grids, truth) = assemble_batch(
                data,
                chunk,
                seed,
                "det_augment",
                epoch,
                cfg.train.augment,
                true,
            )?;
            let truth = truth.expect("annotated batch carries landmarks");

            let mut tape = Tape::new();
            let det_w = watch_params(&mut tape, &det, true);
            let mut dropout_rng = stream_rng(seed, "det_dropout", epoch as u64, bi as u64);
            let pred_clean = detect(&mut tape, &det_w, &cfg.net, &grids, Some(&mut dropout_rng))?;
            let d_clean = tape.landmark_distance(&pred_clean, &truth)?;

            let (total, d_recon_val) = match recon_models {
                Some((enc, gen)) => {
                    let enc_w = watch_params(&mut tape, enc, false);
                    let gen_w = watch_params(&mut tape, gen, false);
                    let (mu, _) = encode(&mut tape, &enc_w, &cfg.net, &grids)?;
                    let recon = generate(&mut tape, &gen_w, &cfg.net, &mu)?;
                    let pred_recon =
                        detect(&mut tape, &det_w, &cfg.net, &recon, Some(&mut dropout_rng))?;
                    let d_recon = tape.landmark_distance(&pred_recon, &truth)?;
                    let wc = tape.scale(&d_clean, weights.struct_correctness_weight);
                    let wr = tape.scale(&d_recon, weights.struct_robustness_weight);
                    (tape.add(&wc, &wr)?, d_recon.item())
                }
                None => (tape.scale(&d_clean, weights.struct_correctness_weight), 0.0),
            };

            if !total.item().is_finite() {
                return Err(diverged(step, ckpt_dir, &[&det]));
            }
            let grads = match tape.backward(&total) {
                Ok(g) => g,
                Err(_) => return Err(diverged(step, ckpt_dir, &[&det])),
            };
            let mut gmap = BTreeMap::new();
            collect_grads(&grads, &det_w, &mut gmap);
            let norm = grad_norm(&gmap);
            adam_step(&mut [&mut det], &gmap, &mut adam)?;

            log.push(LogRecord {
                step,
                stage: "det".into(),
                l_rec: 0.0,
                l_kl: 0.0,
                l_struct_c: d_clean.item(),
                l_struct_r: d_recon_val,
                l_consist: 0.0,
                total: total.item(),
                grad_norm: norm,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                enc_grad_norm: 0.0,
                gen_grad_norm: 0.0,
                det_grad_norm: norm,
            });
            step += 1;
        }
        if let Some(dir) = ckpt_dir {
            if (epoch + 1) % cfg.train.checkpoint_every == 0 {
                write_ckpt(dir, &format!("model_epoch_{:04}.ckpt", epoch + 1), &[&det])?;
            }
        }
    }
    if let Some(dir) = ckpt_dir {
        write_ckpt(dir, "model_final.ckpt", &[&det])?;
    }
    Ok((det, log))
}

enum Budget {
    ShapeSteps(usize),
    Epochs(usize),
}

struct Segment {
    /// Stage label in log records ("s1" or "s2").
    label: &'static str,
    /// Prefix for RNG stream purposes; empty in stage 2 so its streams match
    /// VAE pretraining.
    stream_prefix: &'static str,
    /// Index appended to the stream purpose for fine-tune sub-segments.
    stream_index: u64,
    lr: f64,
    batch: usize,
    budget: Budget,
    train_encoder: bool,
}

/// Collaborative training: per epoch, all labelled batches update the
/// detector (lambda-1, shape nets frozen), then all training batches update
/// the shape nets (lambda-2, detector frozen) on
/// `alpha1 * L_shape + alpha2 * L_consist` with consistency evaluated on
/// fresh prior samples. Stage 1 keeps the encoder fixed; stage 2 fine-tunes
/// everything.
pub fn collaborative_train(
    params: ModelParams,
    data: &Dataset,
    cfg: &RunConfig,
    ckpt_dir: Option<&Path>,
) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    if data.split.train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if data.split.annotated_train.is_empty() {
        return Err(Error::Data(
            "collaborative training needs annotated training samples".into(),
        ));
    }
    let seed = cfg.seed;
    let weights = cfg.loss;
    let spec = consistency_spec(cfg.net.grid_dim, cfg.consist_sigma, cfg.consist_trunc);

    let mut enc = params.encoder;
    let mut gen = params.generator;
    let mut det = params.detector;

    let mut segments = vec![Segment {
        label: "s1",
        stream_prefix: "s1_",
        stream_index: 0,
        lr: cfg.train.stage1.gen_lr,
        batch: cfg.train.stage1.batch,
        budget: Budget::ShapeSteps(cfg.train.stage1.iters),
        train_encoder: false,
    }];
    for (i, &b) in cfg.train.stage1.finetune_batches.iter().enumerate() {
        segments.push(Segment {
            label: "s1",
            stream_prefix: "s1f_",
            stream_index: i as u64 + 1,
            lr: cfg.train.stage1.finetune_lr,
            batch: b,
            budget: Budget::ShapeSteps(cfg.train.stage1.finetune_iters),
            train_encoder: false,
        });
    }
    segments.push(Segment {
        label: "s2",
        stream_prefix: "",
        stream_index: 0,
        lr: cfg.train.stage2.lr,
        batch: cfg.train.stage2.batch,
        budget: Budget::Epochs(cfg.train.stage2.epochs),
        train_encoder: true,
    });

    let mut adam_det = AdamState::new(cfg.train.detector_collab_lr);
    let mut log = TrainLog::default();
    let mut step = 0usize;
    let mut collab_epoch = 0u64;
    let last_segment = segments.len() - 1;

    for (seg_i, seg) in segments.iter().enumerate() {
        let mut adam_shape = AdamState::new(seg.lr);
        let mut shape_steps = 0usize;
        let mut epoch = 0usize;
        loop {
            let done = match seg.budget {
                Budget::ShapeSteps(n) => shape_steps >= n,
                Budget::Epochs(n) => epoch >= n,
            };
            if done {
                break;
            }

            // Phase (a): detector updates over the labelled set.
            let mut det_shuffle = stream_rng(seed, "cd_shuffle", collab_epoch, 0);
            let det_ids = shuffled(&data.split.annotated_train, &mut det_shuffle);
            for (bi, chunk) in det_ids.chunks(cfg.train.detector_collab_batch).enumerate() {
                let start = Instant::now();
                let (grids, truth) = assemble_batch(
                    data,
                    chunk,
                    seed,
                    "cd_augment",
                    collab_epoch as usize,
                    cfg.train.augment,
                    true,
                )?;
                let truth = truth.expect("annotated batch carries landmarks");
                let mut tape = Tape::new();
                let enc_w = watch_params(&mut tape, &enc, false);
                let gen_w = watch_params(&mut tape, &gen, false);
                let det_w = watch_params(&mut tape, &det, true);
                let (mu, _) = encode(&mut tape, &enc_w, &cfg.net, &grids)?;
                let recon = generate(&mut tape, &gen_w, &cfg.net, &mu)?;
                let mut dropout_rng =
                    stream_rng(seed, "cd_dropout", collab_epoch, bi as u64);
                let pred_recon =
                    detect(&mut tape, &det_w, &cfg.net, &recon, Some(&mut dropout_rng))?;
                let pred_clean =
                    detect(&mut tape, &det_w, &cfg.net, &grids, Some(&mut dropout_rng))?;
                let d_recon = tape.landmark_distance(&pred_recon, &truth)?;
                let d_clean = tape.landmark_distance(&pred_clean, &truth)?;
                let wr = tape.scale(&d_recon, weights.struct_robustness_weight);
                let wc = tape.scale(&d_clean, weights.struct_correctness_weight);
                let total = tape.add(&wc, &wr)?;

                if !total.item().is_finite() {
                    return Err(diverged(step, ckpt_dir, &[&enc, &gen, &det]));
                }
                let grads = match tape.backward(&total) {
                    Ok(g) => g,
                    Err(_) => return Err(diverged(step, ckpt_dir, &[&enc, &gen, &det])),
                };
                let mut gmap = BTreeMap::new();
                collect_grads(&grads, &det_w, &mut gmap);
                let norm = clip_grads(&mut gmap, cfg.train.grad_clip);
                adam_step(&mut [&mut det], &gmap, &mut adam_det)?;

                log.push(LogRecord {
                    step,
                    stage: format!("{}-det", seg.label),
                    l_rec: 0.0,
                    l_kl: 0.0,
                    l_struct_c: d_clean.item(),
                    l_struct_r: d_recon.item(),
                    l_consist: 0.0,
                    total: total.item(),
                    grad_norm: norm,
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                    enc_grad_norm: prefix_norm(&gmap, "enc/"),
                    gen_grad_norm: prefix_norm(&gmap, "gen/"),
                    det_grad_norm: prefix_norm(&gmap, "det/"),
                });
                step += 1;
            }

            // Phase (b): shape updates over the full training set.
            let shuffle_purpose = format!("{}shuffle", seg.stream_prefix);
            let augment_purpose = format!("{}augment", seg.stream_prefix);
            let noise_purpose = format!("{}noise", seg.stream_prefix);
            let prior_purpose = format!("{}prior", seg.stream_prefix);
            let epoch_key = epoch as u64 + (seg.stream_index << 32);
            let mut shuffle_rng = stream_rng(seed, &shuffle_purpose, epoch_key, 0);
            let ids = shuffled(&data.split.train, &mut shuffle_rng);
            for (bi, chunk) in ids.chunks(seg.batch).enumerate() {
                if let Budget::ShapeSteps(n) = seg.budget {
                    if shape_steps >= n {
                        break;
                    }
                }
                let start = Instant::now();
                let (grids, _) = assemble_batch(
                    data,
                    chunk,
                    seed,
                    &augment_purpose,
                    epoch_key as usize,
                    cfg.train.augment,
                    false,
                )?;
                let mut tape = Tape::new();
                let enc_w = watch_params(&mut tape, &enc, seg.train_encoder);
                let gen_w = watch_params(&mut tape, &gen, true);
                let det_w = watch_params(&mut tape, &det, false);

                let (mu, logvar) = encode(&mut tape, &enc_w, &cfg.net, &grids)?;
                let mut noise_rng = stream_rng(seed, &noise_purpose, epoch_key, bi as u64);
                let noise = normal_tensor(mu.shape().to_vec(), &mut noise_rng, 0.0, 1.0);
                let z = step_try!(
                    tape.reparameterize(&mu, &logvar, &noise),
                    step, ckpt_dir, &[&enc, &gen, &det]
                );
                let out = generate(&mut tape, &gen_w, &cfg.net, &z)?;
                let l_rec = step_try!(
                    recon_loss(&mut tape, &out, &grids),
                    step, ckpt_dir, &[&enc, &gen, &det]
                );
                let l_kl = step_try!(
                    kl_loss(&mut tape, &mu, &logvar),
                    step, ckpt_dir, &[&enc, &gen, &det]
                );

                // Fresh prior samples probe the manifold away from data.
                let mut prior_rng = stream_rng(seed, &prior_purpose, epoch_key, bi as u64);
                let zbar = normal_tensor(
                    vec![chunk.len(), cfg.net.latent_dim],
                    &mut prior_rng,
                    cfg.train.prior_mu,
                    cfg.train.prior_sigma,
                );
                let sbar = generate(&mut tape, &gen_w, &cfg.net, &zbar)?;
                let lbar = detect(&mut tape, &det_w, &cfg.net, &sbar, None)?;
                let d3 = cfg.net.grid_dim.pow(3);
                let sbar_flat = tape.reshape(&sbar, vec![chunk.len(), d3])?;
                let l_consist = step_try!(
                    tape.consistency_loss(&sbar_flat, &lbar, spec),
                    step, ckpt_dir, &[&enc, &gen, &det]
                );

                let total = shape_total_loss(&mut tape, &l_rec, &l_kl, &l_consist, &weights)?;

                if !total.item().is_finite() {
                    return Err(diverged(step, ckpt_dir, &[&enc, &gen, &det]));
                }
                let grads = match tape.backward(&total) {
                    Ok(g) => g,
                    Err(_) => return Err(diverged(step, ckpt_dir, &[&enc, &gen, &det])),
                };
                let mut gmap = BTreeMap::new();
                if seg.train_encoder {
                    collect_grads(&grads, &enc_w, &mut gmap);
                }
                collect_grads(&grads, &gen_w, &mut gmap);
                let norm = clip_grads(&mut gmap, cfg.train.grad_clip);
                let enc_norm = prefix_norm(&gmap, "enc/");
                let gen_norm = prefix_norm(&gmap, "gen/");
                if seg.train_encoder {
                    adam_step(&mut [&mut enc, &mut gen], &gmap, &mut adam_shape)?;
                } else {
                    adam_step(&mut [&mut gen], &gmap, &mut adam_shape)?;
                }

                log.push(LogRecord {
                    step,
                    stage: format!("{}-shape", seg.label),
                    l_rec: l_rec.item(),
                    l_kl: l_kl.item(),
                    l_struct_c: 0.0,
                    l_struct_r: 0.0,
                    l_consist: l_consist.item(),
                    total: total.item(),
                    grad_norm: norm,
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                    enc_grad_norm: enc_norm,
                    gen_grad_norm: gen_norm,
                    det_grad_norm: prefix_norm(&gmap, "det/"),
                });
                step += 1;
                shape_steps += 1;
            }
            epoch += 1;
            collab_epoch += 1;
        }

        if let Some(dir) = ckpt_dir {
            // Stage boundaries: end of stage 1 (last fine-tune sub-segment)
            // and the final state.
            let stage1_end = seg_i + 1 == last_segment;
            if stage1_end {
                write_ckpt(dir, "model_stage1.ckpt", &[&enc, &gen, &det])?;
            }
            if seg_i == last_segment {
                write_ckpt(dir, "model_final.ckpt", &[&enc, &gen, &det])?;
            }
        }
    }

    Ok((
        ModelParams {
            encoder: enc,
            generator: gen,
            detector: det,
        },
        log,
    ))
}

/// Parameter count summary line used by the CLI.
pub fn describe_params(cfg: &RunConfig) -> Result<String> {
    let (e, g, d) = nets::param_count(&cfg.net)?;
    Ok(format!(
        "parameters: encoder {e}, generator {g}, detector {d}, total {}",
        e + g + d
    ))
}
