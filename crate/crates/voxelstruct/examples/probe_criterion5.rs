use voxelstruct::config::RunConfig;
use voxelstruct::dataset::generate_dataset;
use voxelstruct::eval::iou;
use voxelstruct::nets::reconstruct_eval;
use voxelstruct::training::{pretrain_vae, StageParams};
use voxelstruct::voxel::grids_to_tensor;

fn main() {
    let mut cfg = RunConfig::default();
    cfg.net.grid_dim = 16;
    cfg.net.latent_dim = 16;
    cfg.train.vae = StageParams { lr: 3e-4, batch: 16, epochs: 30 };
    cfg.seed = 42;
    let data = generate_dataset(250, 16, 7, 0.2, 0.24, false).unwrap();
    let start = std::time::Instant::now();
    let (enc, gen, log) = pretrain_vae(&data, &cfg, None, None).unwrap();
    let (first, last) = (log.records.first().unwrap().total, log.last_total().unwrap());
    println!("loss {first:.1} -> {last:.1} (ratio {:.3}) in {:.1}s, {} steps",
        last / first, start.elapsed().as_secs_f64(), log.records.len());

    let train = data.train_samples();
    let mut scores = Vec::new();
    for chunk in train.chunks(16) {
        let grids: Vec<&voxelstruct::voxel::VoxelGrid> = chunk.iter().map(|s| &s.shape).collect();
        let batch = grids_to_tensor(&grids).unwrap();
        let recon = reconstruct_eval(&enc, &gen, &cfg.net, &batch).unwrap();
        for (r, s) in recon.iter().zip(chunk) {
            scores.push(iou(r, &s.shape, 0.5).unwrap());
        }
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    println!("round-trip IoU@0.5 on training set: {mean:.4}");
    let mut epochs_seen = std::collections::BTreeMap::new();
    for r in &log.records {
        *epochs_seen.entry(r.step / 13).or_insert(0.0f64) = r.total;
    }
    for (e, t) in epochs_seen.iter().step_by(5) {
        println!("  epoch ~{e}: total {t:.1}");
    }
}
