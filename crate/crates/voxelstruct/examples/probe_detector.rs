use voxelstruct::config::RunConfig;
use voxelstruct::dataset::generate_dataset;
use voxelstruct::eval::mean_landmark_error;
use voxelstruct::nets::detect_eval;
use voxelstruct::training::{pretrain_detector, StageParams};
use voxelstruct::voxel::{grids_to_tensor, VoxelGrid};

fn main() {
    let data = generate_dataset(250, 16, 7, 0.2, 0.24, false).unwrap();
    let test = data.test_samples();
    let grids: Vec<&VoxelGrid> = test.iter().map(|s| &s.shape).collect();
    let batch = grids_to_tensor(&grids).unwrap();
    let truth: Vec<_> = test.iter().map(|s| s.landmarks.unwrap()).collect();

    // Mean-predictor baseline for context.
    let mut centroid = [[0.0f64; 3]; 10];
    let train = data.annotated_train_samples();
    for s in &train {
        for (k, p) in s.landmarks.unwrap().points().iter().enumerate() {
            for a in 0..3 {
                centroid[k][a] += p[a] / train.len() as f64;
            }
        }
    }
    let centroid_set = voxelstruct::voxel::LandmarkSet::new(centroid);
    let base: f64 = truth.iter().map(|t| centroid_set.mean_distance(t)).sum::<f64>() / truth.len() as f64;
    println!("mean-predictor baseline error: {base:.4} (bar 0.1250)");

    for (lr, epochs) in [(1e-3, 60), (1e-3, 150), (3e-3, 100)] {
        let mut cfg = RunConfig::default();
        cfg.net.grid_dim = 16;
        cfg.net.latent_dim = 16;
        cfg.train.detector = StageParams { lr, batch: 16, epochs };
        cfg.seed = 55;
        let t = std::time::Instant::now();
        let (det, log) = pretrain_detector(&data, &cfg, None, None, None).unwrap();
        let pred = detect_eval(&det, &cfg.net, &batch).unwrap();
        let err = mean_landmark_error(&pred, &truth);
        println!(
            "lr {lr:<8} epochs {epochs:<4} ({} steps, {:.0}s): held-out error {err:.4}",
            log.records.len(),
            t.elapsed().as_secs_f64()
        );
    }
}
