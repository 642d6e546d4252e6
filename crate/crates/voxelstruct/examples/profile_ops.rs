use std::time::Instant;
use voxelstruct::config::RunConfig;
use voxelstruct::nets::{self, watch_params};
use voxelstruct::tensor::{Tape, Tensor};
use voxelstruct::losses;

fn time<F: FnMut()>(label: &str, iters: usize, mut f: F) {
    let start = Instant::now();
    for _ in 0..iters { f(); }
    println!("{label}: {:.1} ms/iter", start.elapsed().as_secs_f64() * 1e3 / iters as f64);
}

fn main() {
    let mut cfg = RunConfig::default();
    cfg.net.grid_dim = 16;
    cfg.net.latent_dim = 16;
    let b = 8;
    let d = cfg.net.grid_dim;
    let params = nets::init_params(&cfg.net, 1).unwrap();
    let grids = Tensor::from_vec(vec![b,1,d,d,d], (0..b*d*d*d).map(|i| f64::from(i as u32 % 2)).collect()).unwrap();

    time("encode fwd", 5, || {
        let mut tape = Tape::new();
        let w = watch_params(&mut tape, &params.encoder, false);
        nets::encode(&mut tape, &w, &cfg.net, &grids).unwrap();
    });
    time("enc+gen fwd", 5, || {
        let mut tape = Tape::new();
        let ew = watch_params(&mut tape, &params.encoder, false);
        let gw = watch_params(&mut tape, &params.generator, false);
        let (mu, _) = nets::encode(&mut tape, &ew, &cfg.net, &grids).unwrap();
        nets::generate(&mut tape, &gw, &cfg.net, &mu).unwrap();
    });
    time("full vae step fwd+bwd", 5, || {
        let mut tape = Tape::new();
        let ew = watch_params(&mut tape, &params.encoder, true);
        let gw = watch_params(&mut tape, &params.generator, true);
        let (mu, lv) = nets::encode(&mut tape, &ew, &cfg.net, &grids).unwrap();
        let noise = Tensor::zeros(mu.shape().to_vec());
        let z = tape.reparameterize(&mu, &lv, &noise).unwrap();
        let out = nets::generate(&mut tape, &gw, &cfg.net, &z).unwrap();
        let lr = losses::recon_loss(&mut tape, &out, &grids).unwrap();
        let lk = losses::kl_loss(&mut tape, &mu, &lv).unwrap();
        let wk = tape.scale(&lk, 1.0);
        let total = tape.add(&lr, &wk).unwrap();
        tape.backward(&total).unwrap();
    });
    time("detector fwd", 5, || {
        let mut tape = Tape::new();
        let w = watch_params(&mut tape, &params.detector, false);
        nets::detect(&mut tape, &w, &cfg.net, &grids, None).unwrap();
    });
    time("detector fwd+bwd", 5, || {
        let mut tape = Tape::new();
        let w = watch_params(&mut tape, &params.detector, true);
        let out = nets::detect(&mut tape, &w, &cfg.net, &grids, None).unwrap();
        let loss = tape.mean(&out);
        tape.backward(&loss).unwrap();
    });
}
