use voxelstruct::config::RunConfig;
use voxelstruct::dataset::{generate_dataset, Dataset};
use voxelstruct::eval::{completion_eval, mean_landmark_error, Degradation};
use voxelstruct::losses::{consistency_measure, default_sigma, default_trunc};
use voxelstruct::nets::{detect_eval, generate_eval, reconstruct_eval, ParamSet};
use voxelstruct::tensor::Tensor;
use voxelstruct::training::{
    collaborative_train, pretrain_detector, pretrain_vae, Stage1Params, Stage2Params, StageParams,
};
use voxelstruct::util::stream_rng;
use voxelstruct::voxel::{grids_to_tensor, VoxelGrid};
use rand_distr::{Distribution, StandardNormal};

fn cfg(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.net.grid_dim = 16;
    cfg.net.latent_dim = 16;
    cfg.train.vae = StageParams { lr: 3e-4, batch: 16, epochs: 18 };
    cfg.train.detector = StageParams { lr: 1e-4, batch: 16, epochs: 100 };
    cfg.train.stage1 = Stage1Params {
        gen_lr: 1e-2, batch: 32, iters: 40,
        finetune_lr: 1e-3, finetune_batches: vec![8], finetune_iters: 10,
    };
    cfg.train.stage2 = Stage2Params { lr: 1e-6, batch: 32, epochs: 2 };
    cfg.seed = seed;
    cfg
}

fn mean_consistency(gen: &ParamSet, det: &ParamSet, cfg: &RunConfig, n: usize, seed: u64) -> f64 {
    let mut rng = stream_rng(seed, "probe-prior", 0, 0);
    let z: Vec<f64> = (0..n * cfg.net.latent_dim)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    let zt = Tensor::from_vec(vec![n, cfg.net.latent_dim], z).unwrap();
    let grids = generate_eval(gen, &cfg.net, &zt).unwrap();
    let refs: Vec<&VoxelGrid> = grids.iter().collect();
    let lms = detect_eval(det, &cfg.net, &grids_to_tensor(&refs).unwrap()).unwrap();
    let sigma = default_sigma(cfg.net.grid_dim);
    let trunc = default_trunc(sigma);
    let mut total = 0.0;
    for (g, l) in grids.iter().zip(&lms) {
        total += consistency_measure(g, l, sigma, trunc).unwrap().total;
    }
    total / n as f64
}

fn detector_errors(det: &ParamSet, cfg: &RunConfig, data: &Dataset, enc: &ParamSet, gen: &ParamSet) -> (f64, f64) {
    let test = data.test_samples();
    let grids: Vec<&VoxelGrid> = test.iter().map(|s| &s.shape).collect();
    let batch = grids_to_tensor(&grids).unwrap();
    let truth: Vec<_> = test.iter().map(|s| s.landmarks.unwrap()).collect();
    let clean_pred = detect_eval(det, &cfg.net, &batch).unwrap();
    let clean_err = mean_landmark_error(&clean_pred, &truth);
    let recon = reconstruct_eval(enc, gen, &cfg.net, &batch).unwrap();
    let recon_refs: Vec<&VoxelGrid> = recon.iter().collect();
    let recon_pred = detect_eval(det, &cfg.net, &grids_to_tensor(&recon_refs).unwrap()).unwrap();
    let recon_err = mean_landmark_error(&recon_pred, &truth);
    (clean_err, recon_err)
}

fn main() {
    let t0 = std::time::Instant::now();
    let data = generate_dataset(250, 16, 7, 0.2, 0.24, false).unwrap();
    let cfg = cfg(101);
    println!("[{:.0}s] dataset ready", t0.elapsed().as_secs_f64());

    let (enc, gen, _) = pretrain_vae(&data, &cfg, None, None).unwrap();
    println!("[{:.0}s] vae pretrained", t0.elapsed().as_secs_f64());

    let (det_clean, _) = pretrain_detector(&data, &cfg, None, None, None).unwrap();
    println!("[{:.0}s] clean detector done", t0.elapsed().as_secs_f64());
    let (clean_on_clean, clean_on_recon) = detector_errors(&det_clean, &cfg, &data, &enc, &gen);
    println!("clean detector: clean err {clean_on_clean:.4} (bar {:.4}), recon err {clean_on_recon:.4}", 2.0 / 16.0);

    let (det_robust, _) = pretrain_detector(&data, &cfg, Some((&enc, &gen)), None, None).unwrap();
    println!("[{:.0}s] robust detector done", t0.elapsed().as_secs_f64());
    let (robust_on_clean, robust_on_recon) = detector_errors(&det_robust, &cfg, &data, &enc, &gen);
    println!("robust detector: clean err {robust_on_clean:.4}, recon err {robust_on_recon:.4}");

    let m_before = mean_consistency(&gen, &det_robust, &cfg, 64, 3);
    println!("[{:.0}s] pretrained-VAE mean M = {m_before:.4}", t0.elapsed().as_secs_f64());

    let params = voxelstruct::nets::ModelParams {
        encoder: enc.clone(),
        generator: gen.clone(),
        detector: det_robust.clone(),
    };
    let (joint, log) = collaborative_train(params, &data, &cfg, None).unwrap();
    println!("[{:.0}s] collaborative done ({} steps)", t0.elapsed().as_secs_f64(), log.records.len());
    for r in log.records.iter().filter(|r| r.stage.ends_with("-shape")).step_by(10) {
        println!("  step {} {}: rec {:.1} kl {:.2} consist {:.4} total {:.2}", r.step, r.stage, r.l_rec, r.l_kl, r.l_consist, r.total);
    }

    let m_after = mean_consistency(&joint.generator, &joint.detector, &cfg, 64, 3);
    println!("mean M: before {m_before:.4} -> after {m_after:.4} (must strictly increase)");

    let test = data.test_samples();
    let deg = Degradation { sparsify_level: 0.5, ..Degradation::none() };
    let hash = cfg.content_hash();
    let base = completion_eval(&enc, &gen, &cfg.net, &test, &deg, 0.5, 11, &hash).unwrap();
    let ours = completion_eval(&joint.encoder, &joint.generator, &cfg.net, &test, &deg, 0.5, 11, &hash).unwrap();
    println!(
        "completion IoU @ sparseness 0.5: shape-only {:.4} vs structure-aware {:.4}",
        base.aggregate("mean_iou").unwrap(),
        ours.aggregate("mean_iou").unwrap()
    );
    let clean_base = completion_eval(&enc, &gen, &cfg.net, &test, &Degradation::none(), 0.5, 11, &hash).unwrap();
    let clean_ours = completion_eval(&joint.encoder, &joint.generator, &cfg.net, &test, &Degradation::none(), 0.5, 11, &hash).unwrap();
    println!(
        "clean recon IoU: shape-only {:.4} vs structure-aware {:.4}",
        clean_base.aggregate("mean_iou").unwrap(),
        clean_ours.aggregate("mean_iou").unwrap()
    );
    println!("[{:.0}s] probe complete", t0.elapsed().as_secs_f64());
}
