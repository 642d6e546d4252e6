//! Pretrain the landmark structure detector on annotated chairs and report
//! its mean landmark error on held-out shapes.
//!
//!     cargo run --release --example train_detector

use voxelstruct::config::RunConfig;
use voxelstruct::dataset::generate_dataset;
use voxelstruct::eval::mean_landmark_error;
use voxelstruct::nets::detect_eval;
use voxelstruct::training::{pretrain_detector, StageParams};
use voxelstruct::voxel::{grids_to_tensor, VoxelGrid};

fn main() -> voxelstruct::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.net.grid_dim = 16;
    cfg.net.latent_dim = 16;
    cfg.train.detector = StageParams {
        lr: 1e-4,
        batch: 16,
        epochs: 40,
    };
    cfg.seed = 2;

    let data = generate_dataset(150, 16, 5, 0.2, 0.4, false)?;
    println!(
        "training on {} annotated chairs ...",
        data.split.annotated_train.len()
    );
    let start = std::time::Instant::now();
    let (det, log) = pretrain_detector(&data, &cfg, None, None, None)?;
    println!(
        "{} steps in {:.0}s; struct loss {:.4} -> {:.4}",
        log.records.len(),
        start.elapsed().as_secs_f64(),
        log.records.first().map(|r| r.total).unwrap_or(0.0),
        log.last_total().unwrap_or(0.0),
    );

    let test = data.test_samples();
    let grids: Vec<&VoxelGrid> = test.iter().map(|s| &s.shape).collect();
    let pred = detect_eval(&det, &cfg.net, &grids_to_tensor(&grids)?)?;
    let truth: Vec<_> = test.iter().map(|s| s.landmarks.unwrap()).collect();
    let err = mean_landmark_error(&pred, &truth);
    println!(
        "mean landmark error on {} held-out chairs: {err:.4} ({:.2} voxels at D=16)",
        test.len(),
        err * 16.0
    );
    Ok(())
}
