//! The full pipeline at miniature scale: pretrain the VAE and the detector,
//! run collaborative training, and show how the shape-structure consistency
//! of prior samples improves.
//!
//!     cargo run --release --example collaborative
//!
//! Expect several minutes on one CPU core.

use rand_distr::{Distribution, StandardNormal};
use voxelstruct::config::RunConfig;
use voxelstruct::dataset::generate_dataset;
use voxelstruct::losses::{consistency_measure, default_sigma, default_trunc};
use voxelstruct::nets::{detect_eval, generate_eval, ModelParams, ParamSet};
use voxelstruct::tensor::Tensor;
use voxelstruct::training::{
    collaborative_train, pretrain_detector, pretrain_vae, Stage1Params, Stage2Params, StageParams,
};
use voxelstruct::util::stream_rng;
use voxelstruct::voxel::{grids_to_tensor, VoxelGrid};

fn mean_consistency(
    generator: &ParamSet,
    detector: &ParamSet,
    cfg: &RunConfig,
    draws: usize,
) -> voxelstruct::Result<f64> {
    let mut rng = stream_rng(99, "example-prior", 0, 0);
    let z: Vec<f64> = (0..draws * cfg.net.latent_dim)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    let zt = Tensor::from_vec(vec![draws, cfg.net.latent_dim], z)?;
    let grids = generate_eval(generator, &cfg.net, &zt)?;
    let refs: Vec<&VoxelGrid> = grids.iter().collect();
    let landmarks = detect_eval(detector, &cfg.net, &grids_to_tensor(&refs)?)?;
    let sigma = default_sigma(cfg.net.grid_dim);
    let trunc = default_trunc(sigma);
    let mut total = 0.0;
    for (g, l) in grids.iter().zip(&landmarks) {
        total += consistency_measure(g, l, sigma, trunc)?.total;
    }
    Ok(total / draws as f64)
}

fn main() -> voxelstruct::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.net.grid_dim = 16;
    cfg.net.latent_dim = 16;
    cfg.train.vae = StageParams { lr: 3e-4, batch: 16, epochs: 10 };
    cfg.train.detector = StageParams { lr: 1e-4, batch: 16, epochs: 40 };
    cfg.train.stage1 = Stage1Params {
        gen_lr: 1e-2,
        batch: 32,
        iters: 25,
        finetune_lr: 1e-3,
        finetune_batches: vec![8],
        finetune_iters: 5,
    };
    cfg.train.stage2 = Stage2Params { lr: 1e-6, batch: 32, epochs: 1 };
    cfg.seed = 4;

    let data = generate_dataset(150, 16, 11, 0.2, 0.3, false)?;
    let t0 = std::time::Instant::now();

    println!("pretraining shape encoder/generator ...");
    let (encoder, generator, _) = pretrain_vae(&data, &cfg, None, None)?;

    println!("[{:.0}s] pretraining structure detector (with reconstructions) ...", t0.elapsed().as_secs_f64());
    let (detector, _) = pretrain_detector(&data, &cfg, Some((&encoder, &generator)), None, None)?;

    let before = mean_consistency(&generator, &detector, &cfg, 48)?;
    println!("[{:.0}s] mean consistency M of prior samples before: {before:.3}", t0.elapsed().as_secs_f64());

    println!("collaborative training ...");
    let params = ModelParams {
        encoder,
        generator,
        detector,
    };
    let (joint, log) = collaborative_train(params, &data, &cfg, None)?;
    println!(
        "[{:.0}s] done: {} optimizer steps across detector and shape phases",
        t0.elapsed().as_secs_f64(),
        log.records.len()
    );

    let after = mean_consistency(&joint.generator, &joint.detector, &cfg, 48)?;
    println!("mean consistency M of prior samples after:  {after:.3}");
    println!(
        "structure-aware training {} the consistency of generated shapes",
        if after > before { "raised" } else { "did not raise" }
    );
    Ok(())
}
