//! Pretrain the voxel VAE on a small chair dataset and measure round-trip
//! reconstruction quality.
//!
//!     cargo run --release --example train_vae
//!
//! A few minutes on one CPU core.

use voxelstruct::config::RunConfig;
use voxelstruct::dataset::generate_dataset;
use voxelstruct::eval::iou;
use voxelstruct::nets::reconstruct_eval;
use voxelstruct::training::{pretrain_vae, StageParams};
use voxelstruct::voxel::{grids_to_tensor, VoxelGrid};

fn main() -> voxelstruct::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.net.grid_dim = 16;
    cfg.net.latent_dim = 16;
    cfg.train.vae = StageParams {
        lr: 3e-4,
        batch: 16,
        epochs: 12,
    };
    cfg.seed = 1;

    let data = generate_dataset(120, 16, 3, 0.2, 0.25, false)?;
    println!("training on {} chairs at D=16 ...", data.split.train.len());
    let start = std::time::Instant::now();
    let (enc, gen, log) = pretrain_vae(&data, &cfg, None, None)?;
    let first = log.records.first().map(|r| r.total).unwrap_or(0.0);
    let last = log.last_total().unwrap_or(0.0);
    println!(
        "{} steps in {:.0}s; total loss {first:.1} -> {last:.1}",
        log.records.len(),
        start.elapsed().as_secs_f64(),
    );

    let train = data.train_samples();
    let mut scores = Vec::new();
    for chunk in train.chunks(16) {
        let grids: Vec<&VoxelGrid> = chunk.iter().map(|s| &s.shape).collect();
        let recon = reconstruct_eval(&enc, &gen, &cfg.net, &grids_to_tensor(&grids)?)?;
        for (r, s) in recon.iter().zip(chunk) {
            scores.push(iou(r, &s.shape, 0.5)?);
        }
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    println!("mean round-trip IoU@0.5 on the training set: {mean:.3}");
    Ok(())
}
