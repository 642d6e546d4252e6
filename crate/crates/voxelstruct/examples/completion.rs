//! Shape completion under controlled degradation: sparsify, dilate, and crop
//! test chairs, reconstruct them through the mean branch, and sweep the
//! sparseness level.
//!
//!     cargo run --release --example completion

use voxelstruct::config::RunConfig;
use voxelstruct::dataset::{generate_dataset, CropSide};
use voxelstruct::eval::{completion_eval, sparseness_sweep, Degradation};
use voxelstruct::training::{pretrain_vae, StageParams};

fn main() -> voxelstruct::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.net.grid_dim = 16;
    cfg.net.latent_dim = 16;
    cfg.train.vae = StageParams { lr: 3e-4, batch: 16, epochs: 12 };
    cfg.seed = 8;

    let data = generate_dataset(150, 16, 17, 0.2, 0.25, false)?;
    println!("pretraining a small VAE ...");
    let (enc, gen, _) = pretrain_vae(&data, &cfg, None, None)?;
    let hash = cfg.content_hash();
    let test = data.test_samples();

    for (label, degradation) in [
        ("clean input", Degradation::none()),
        (
            "sparse (level 0.5)",
            Degradation {
                sparsify_level: 0.5,
                ..Degradation::none()
            },
        ),
        (
            "sparse + dilated",
            Degradation {
                sparsify_level: 0.5,
                dilate_iters: 1,
                ..Degradation::none()
            },
        ),
        (
            "missing a third (crop)",
            Degradation {
                crop: Some((0, 1.0 / 3.0, CropSide::Low)),
                ..Degradation::none()
            },
        ),
    ] {
        let report = completion_eval(&enc, &gen, &cfg.net, &test, &degradation, 0.5, 21, &hash)?;
        println!(
            "{label:<24} mean IoU {:.3} (mean input occupancy {:.1}%)",
            report.aggregate("mean_iou").unwrap(),
            report.aggregate("mean_input_occupancy").unwrap() * 100.0
        );
    }

    let report = sparseness_sweep(
        &[("vae", &enc, &gen)],
        &cfg.net,
        &test,
        &[0.0, 0.25, 0.5, 0.75],
        &[1, 2],
        0.5,
        &hash,
    )?;
    println!("sparseness sweep (mean IoU per level):");
    for row in &report.rows {
        println!("  level {:.2} -> {:.3}", row[0], row[1]);
    }
    Ok(())
}
