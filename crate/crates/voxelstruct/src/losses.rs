//! Loss terms: reconstruction + KL for the shape model, the two-term
//! structure loss for the detector, the shape-structure consistency measure
//! and its reciprocal loss, and the weighted combination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{consistency_search, ConsistencySpec, Tape, Tensor};
use crate::voxel::{LandmarkSet, VoxelGrid, N_LANDMARKS};

/// Weights balancing the loss terms during collaborative training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight of the shape loss (reconstruction + KL) in the combined loss.
    pub alpha1: f64,
    /// Weight of the shape-structure consistency loss.
    pub alpha2: f64,
    /// Weight of the structure-correctness term (clean inputs).
    pub struct_correctness_weight: f64,
    /// Weight of the structure-robustness term (reconstructed inputs).
    pub struct_robustness_weight: f64,
    /// Weight of the KL term inside the shape loss.
    pub kl_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha1: 0.1,
            alpha2: 27.0,
            struct_correctness_weight: 1.0,
            struct_robustness_weight: 1.0,
            kl_weight: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha1,
            self.alpha2,
            self.struct_correctness_weight,
            self.struct_robustness_weight,
            self.kl_weight,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-landmark consistency measures and their sum M.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyScore {
    /// One measure in [0,1] per landmark, in the fixed landmark order.
    pub per_landmark: [f64; N_LANDMARKS],
    /// Sum across landmarks, in [0, 10].
    pub total: f64,
}

/// Gaussian width in voxel units for resolution D: two voxels at D = 64,
/// scaled proportionally with a floor of one voxel.
pub fn default_sigma(dim: usize) -> f64 {
    (2.0 * dim as f64 / 64.0).max(1.0)
}

/// Truncation radius: 2σ captures >95% of the kernel mass while keeping the
/// neighborhood scan bounded.
pub fn default_trunc(sigma: f64) -> f64 {
    2.0 * sigma
}

/// Guard added to M before the reciprocal so empty shapes stay finite.
pub const CONSISTENCY_EPS: f64 = 1e-6;

/// Fills in a [`ConsistencySpec`] with the resolution-scaled defaults.
pub fn consistency_spec(dim: usize, sigma: Option<f64>, trunc: Option<f64>) -> ConsistencySpec {
    let sigma = sigma.unwrap_or_else(|| default_sigma(dim));
    ConsistencySpec {
        dim,
        sigma,
        trunc: trunc.unwrap_or_else(|| default_trunc(sigma)),
        eps: CONSISTENCY_EPS,
    }
}

/// Binary cross-entropy summed per voxel, averaged over the batch.
///
/// `pred` must hold probabilities, `target` a binary grid batch of the same
/// shape; predictions are clamped to `[1e-7, 1 - 1e-7]` inside the op.
pub fn recon_loss(tape: &mut Tape, pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "recon_loss",
            left: pred.shape().to_vec(),
            right: target.shape().to_vec(),
        });
    }
    if let Some(v) = target.data().iter().find(|v| **v != 0.0 && **v != 1.0) {
        return Err(Error::Config(format!(
            "recon_loss target must be binary, found {v}"
        )));
    }
    tape.bce_loss(pred, target)
}

/// Closed-form KL(N(mu, exp(logvar)) || N(0,1)), summed over latent
/// dimensions and averaged over the batch.
pub fn kl_loss(tape: &mut Tape, mu: &Tensor, logvar: &Tensor) -> Result<Tensor> {
    tape.gaussian_kl(mu, logvar)
}

/// Detector loss: structure correctness on clean shapes plus structure
/// robustness on their reconstructions.
///
/// All three tensors are `[B, 30]`. Each term is the per-item mean Euclidean
/// landmark distance, averaged over the batch.
pub fn struct_loss(
    tape: &mut Tape,
    pred_clean: &Tensor,
    pred_recon: &Tensor,
    truth: &Tensor,
    weights: &LossWeights,
) -> Result<Tensor> {
    let correctness = tape.landmark_distance(pred_clean, truth)?;
    let robustness = tape.landmark_distance(pred_recon, truth)?;
    let wc = tape.scale(&correctness, weights.struct_correctness_weight);
    let wr = tape.scale(&robustness, weights.struct_robustness_weight);
    tape.add(&wc, &wr)
}

/// Consistency measure of one grid against one landmark set.
///
/// Per landmark k at voxel-space point c: the maximum over voxels v within
/// the truncation ball of `s(v) · exp(-|v-c|² / 2σ²)`; landmarks outside the
/// grid box are clamped onto it first. For binary grids this is exactly the
/// highest Gaussian weight over occupied voxels in the ball.
pub fn consistency_measure(
    grid: &VoxelGrid,
    landmarks: &LandmarkSet,
    sigma: f64,
    trunc: f64,
) -> Result<ConsistencyScore> {
    if sigma <= 0.0 || trunc <= 0.0 {
        return Err(Error::Config(format!(
            "consistency_measure: sigma {sigma} and trunc {trunc} must be positive"
        )));
    }
    let values = grid.values_f64();
    let mut per_landmark = [0.0; N_LANDMARKS];
    for (k, point) in landmarks.points().iter().enumerate() {
        if let Some(hit) = consistency_search(&values, grid.dim(), *point, sigma, trunc) {
            per_landmark[k] = hit.value * hit.weight;
        }
    }
    Ok(ConsistencyScore {
        per_landmark,
        total: per_landmark.iter().sum(),
    })
}

/// Differentiable consistency loss: mean over the batch of `1 / (M + eps)`.
///
/// Gradient flows into the grid at each landmark's argmax voxel and into the
/// landmark coordinates through the Gaussian weight there; the argmax itself
/// is held fixed during backward, exactly as in max-pooling.
pub fn consistency_loss(
    tape: &mut Tape,
    grid: &Tensor,
    landmarks: &Tensor,
    spec: ConsistencySpec,
) -> Result<Tensor> {
    tape.consistency_loss(grid, landmarks, spec)
}

/// Combined shape-phase loss: `α₁ · (recon + kl_weight · kl) + α₂ · consist`.
pub fn shape_total_loss(
    tape: &mut Tape,
    recon: &Tensor,
    kl: &Tensor,
    consist: &Tensor,
    weights: &LossWeights,
) -> Result<Tensor> {
    let weighted_kl = tape.scale(kl, weights.kl_weight);
    let shape = tape.add(recon, &weighted_kl)?;
    let shape = tape.scale(&shape, weights.alpha1);
    let consist = tape.scale(consist, weights.alpha2);
    tape.add(&shape, &consist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    use crate::tensor::gradient_check;
    use crate::util::stream_rng;

    fn tracked(tape: &mut Tape, shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        tape.watch(&Tensor::from_vec(shape, data).unwrap().tracked())
    }

    #[test]
    fn recon_loss_perfect_prediction_is_tiny() {
        let d3 = 4 * 4 * 4;
        let target: Vec<f64> = (0..2 * d3).map(|i| f64::from(u8::from(i % 3 == 0))).collect();
        let pred: Vec<f64> = target
            .iter()
            .map(|&t| if t > 0.5 { 1.0 - 1e-7 } else { 1e-7 })
            .collect();
        let mut tape = Tape::new();
        let p = tracked(&mut tape, vec![2, d3], pred);
        let t = Tensor::from_vec(vec![2, d3], target).unwrap();
        let loss = recon_loss(&mut tape, &p, &t).unwrap();
        assert!(loss.item() <= d3 as f64 * 1.1e-6, "loss {}", loss.item());
    }

    #[test]
    fn recon_loss_uniform_half_is_ln2_per_voxel() {
        let d3 = 4 * 4 * 4;
        let mut tape = Tape::new();
        let p = tracked(&mut tape, vec![3, d3], vec![0.5; 3 * d3]);
        let target: Vec<f64> = (0..3 * d3).map(|i| f64::from(u8::from(i % 2 == 0))).collect();
        let t = Tensor::from_vec(vec![3, d3], target).unwrap();
        let loss = recon_loss(&mut tape, &p, &t).unwrap();
        let expect = d3 as f64 * std::f64::consts::LN_2;
        assert!((loss.item() - expect).abs() < 1e-9);
    }

    #[test]
    fn recon_loss_matches_scalar_loop_oracle() {
        let d3 = 4 * 4 * 4;
        let mut rng = stream_rng(3, "test/bce", 0, 0);
        let pred: Vec<f64> = (0..2 * d3).map(|_| rng.gen::<f64>() * 0.98 + 0.01).collect();
        let target: Vec<f64> = (0..2 * d3).map(|_| f64::from(u8::from(rng.gen::<bool>()))).collect();

        // Independent scalar-loop oracle, written directly from the formula.
        let mut oracle = 0.0;
        for item in 0..2 {
            for v in 0..d3 {
                let p = pred[item * d3 + v].clamp(1e-7, 1.0 - 1e-7);
                let t = target[item * d3 + v];
                oracle -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
            }
        }
        oracle /= 2.0;

        let mut tape = Tape::new();
        let p = tracked(&mut tape, vec![2, d3], pred);
        let t = Tensor::from_vec(vec![2, d3], target).unwrap();
        let loss = recon_loss(&mut tape, &p, &t).unwrap();
        assert!((loss.item() - oracle).abs() <= 1e-12);
    }

    #[test]
    fn recon_loss_rejects_non_binary_target() {
        let mut tape = Tape::new();
        let p = tracked(&mut tape, vec![1, 2], vec![0.5, 0.5]);
        let t = Tensor::from_vec(vec![1, 2], vec![0.0, 0.25]).unwrap();
        assert!(recon_loss(&mut tape, &p, &t).is_err());
    }

    #[test]
    fn kl_loss_closed_forms() {
        let mut tape = Tape::new();
        let mu = tracked(&mut tape, vec![1, 3], vec![0.0; 3]);
        let lv = tracked(&mut tape, vec![1, 3], vec![0.0; 3]);
        assert_eq!(kl_loss(&mut tape, &mu, &lv).unwrap().item(), 0.0);

        let mu = tracked(&mut tape, vec![1, 1], vec![1.0]);
        let lv = tracked(&mut tape, vec![1, 1], vec![0.0]);
        assert_eq!(kl_loss(&mut tape, &mu, &lv).unwrap().item(), 0.5);
    }

    #[test]
    fn kl_loss_matches_monte_carlo_estimate() {
        let mut rng = stream_rng(4, "test/klmc", 0, 0);
        let mu: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let logvar: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() * 1.5 - 0.75).collect();

        // Monte-Carlo KL: E_{x~q}[ln q(x) - ln p(x)], 10^6 draws.
        let n = 1_000_000usize;
        let mut estimate = 0.0;
        for (m, lv) in mu.iter().zip(&logvar) {
            let sd = (0.5 * lv).exp();
            let q = Normal::new(*m, sd).unwrap();
            let mut acc = 0.0;
            for _ in 0..n {
                let x: f64 = q.sample(&mut rng);
                let ln_q = -0.5 * ((x - m) / sd).powi(2) - sd.ln();
                let ln_p = -0.5 * x.powi(2);
                acc += ln_q - ln_p;
            }
            estimate += acc / n as f64;
        }

        let mut tape = Tape::new();
        let mu_t = tracked(&mut tape, vec![1, 3], mu);
        let lv_t = tracked(&mut tape, vec![1, 3], logvar);
        let exact = kl_loss(&mut tape, &mu_t, &lv_t).unwrap().item();
        let rel = (exact - estimate).abs() / exact.abs().max(1e-9);
        assert!(rel <= 1e-2, "exact {exact} vs MC {estimate}, rel {rel}");
    }

    #[test]
    fn struct_loss_zero_at_truth_and_hand_case() {
        let w = LossWeights::default();
        let truth: Vec<f64> = (0..30).map(|i| 0.1 + 0.02 * i as f64).collect();

        let mut tape = Tape::new();
        let clean = tracked(&mut tape, vec![1, 30], truth.clone());
        let recon = tracked(&mut tape, vec![1, 30], truth.clone());
        let t = Tensor::from_vec(vec![1, 30], truth.clone()).unwrap();
        let loss = struct_loss(&mut tape, &clean, &recon, &t, &w).unwrap();
        assert_eq!(loss.item(), 0.0);

        // One landmark offset by (0.3, 0, 0.4): distance 0.5, mean over ten
        // landmarks 0.05 per term, both terms at weight one: 0.1 total.
        let mut off = truth.clone();
        off[0] += 0.3;
        off[2] += 0.4;
        let mut tape = Tape::new();
        let clean = tracked(&mut tape, vec![1, 30], off.clone());
        let recon = tracked(&mut tape, vec![1, 30], off);
        let t = Tensor::from_vec(vec![1, 30], truth).unwrap();
        let loss = struct_loss(&mut tape, &clean, &recon, &t, &w).unwrap();
        assert!((loss.item() - 0.1).abs() < 1e-12, "loss {}", loss.item());
    }

    #[test]
    fn struct_loss_gradient_matches_finite_differences() {
        let mut rng = stream_rng(5, "test/structfd", 0, 0);
        let truth: Vec<f64> = (0..30).map(|_| rng.gen::<f64>()).collect();
        let pred: Vec<f64> = (0..30).map(|_| rng.gen::<f64>()).collect();
        let truth_t = Tensor::from_vec(vec![1, 30], truth).unwrap();
        let x = Tensor::from_vec(vec![1, 30], pred).unwrap();
        let w = LossWeights::default();
        let err = gradient_check(
            |tape, x| struct_loss(tape, x, x, &truth_t, &w),
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-6, "struct_loss gradcheck error {err}");
    }

    fn random_grid(dim: usize, seed: u64) -> VoxelGrid {
        let mut rng = stream_rng(seed, "test/grid", 0, 0);
        VoxelGrid::from_values(dim, (0..dim * dim * dim).map(|_| rng.gen::<f32>()).collect())
            .unwrap()
    }

    fn random_landmarks(seed: u64) -> LandmarkSet {
        let mut rng = stream_rng(seed, "test/lms", 0, 0);
        let mut pts = [[0.0; 3]; N_LANDMARKS];
        for p in &mut pts {
            for c in p.iter_mut() {
                *c = rng.gen::<f64>();
            }
        }
        LandmarkSet::new(pts)
    }

    /// Exhaustive oracle: scans every voxel of the grid (no truncated
    /// neighborhood shortcut), applying the same truncation condition.
    fn brute_force_measure(
        grid: &VoxelGrid,
        landmarks: &LandmarkSet,
        sigma: f64,
        trunc: f64,
    ) -> ConsistencyScore {
        let dim = grid.dim();
        let d = dim as f64;
        let mut per_landmark = [0.0; N_LANDMARKS];
        for (k, p) in landmarks.points().iter().enumerate() {
            let c = [
                (p[0] * d - 0.5).clamp(0.0, d - 1.0),
                (p[1] * d - 0.5).clamp(0.0, d - 1.0),
                (p[2] * d - 0.5).clamp(0.0, d - 1.0),
            ];
            let mut best = 0.0f64;
            for z in 0..dim {
                for y in 0..dim {
                    for x in 0..dim {
                        let dist_sq = (x as f64 - c[0]).powi(2)
                            + (y as f64 - c[1]).powi(2)
                            + (z as f64 - c[2]).powi(2);
                        if dist_sq > trunc * trunc {
                            continue;
                        }
                        let m = f64::from(grid.get(x, y, z)) * (-dist_sq / (2.0 * sigma * sigma)).exp();
                        best = best.max(m);
                    }
                }
            }
            per_landmark[k] = best;
        }
        ConsistencyScore {
            per_landmark,
            total: per_landmark.iter().sum(),
        }
    }

    #[test]
    fn consistency_measure_peak_and_empty() {
        let dim = 8;
        let mut grid = VoxelGrid::new(dim);
        grid.set(3, 4, 2, 1.0);
        // Landmark exactly at the voxel center (3,4,2): p = (v + 0.5) / D.
        let mut pts = [[0.9; 3]; N_LANDMARKS];
        pts[0] = [3.5 / 8.0, 4.5 / 8.0, 2.5 / 8.0];
        let lms = LandmarkSet::new(pts);
        let sigma = default_sigma(dim);
        let score = consistency_measure(&grid, &lms, sigma, default_trunc(sigma)).unwrap();
        assert!((score.per_landmark[0] - 1.0).abs() < 1e-12);

        let empty = VoxelGrid::new(dim);
        let score = consistency_measure(&empty, &lms, sigma, default_trunc(sigma)).unwrap();
        assert_eq!(score.total, 0.0);
    }

    #[test]
    fn consistency_measure_matches_brute_force_scan() {
        let dim = 8;
        let sigma = default_sigma(dim);
        let trunc = default_trunc(sigma);
        for seed in 0..25 {
            let grid = random_grid(dim, seed);
            let lms = random_landmarks(seed + 100);
            let fast = consistency_measure(&grid, &lms, sigma, trunc).unwrap();
            let slow = brute_force_measure(&grid, &lms, sigma, trunc);
            for k in 0..N_LANDMARKS {
                assert!(
                    (fast.per_landmark[k] - slow.per_landmark[k]).abs() <= 1e-12,
                    "seed {seed} landmark {k}: {} vs {}",
                    fast.per_landmark[k],
                    slow.per_landmark[k]
                );
            }
            assert!((fast.total - slow.total).abs() <= 1e-12);
        }
    }

    #[test]
    fn consistency_measure_is_monotone_and_ball_local() {
        let dim = 8;
        let sigma = default_sigma(dim);
        let trunc = default_trunc(sigma);
        let grid = random_grid(dim, 42);
        let lms = random_landmarks(43);
        let base = consistency_measure(&grid, &lms, sigma, trunc).unwrap();

        // Raising any voxel never decreases M.
        let mut raised = grid.clone();
        for i in 0..raised.values().len() {
            let v = raised.values()[i];
            raised.values_mut()[i] = (v + 0.3).min(1.0);
        }
        let up = consistency_measure(&raised, &lms, sigma, trunc).unwrap();
        assert!(up.total >= base.total);

        // Values outside every truncation ball cannot affect M.
        let d = dim as f64;
        let mut outside = grid.clone();
        let mut changed = 0;
        for z in 0..dim {
            for y in 0..dim {
                for x in 0..dim {
                    let in_some_ball = lms.points().iter().any(|p| {
                        let c = [
                            (p[0] * d - 0.5).clamp(0.0, d - 1.0),
                            (p[1] * d - 0.5).clamp(0.0, d - 1.0),
                            (p[2] * d - 0.5).clamp(0.0, d - 1.0),
                        ];
                        (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2)
                            + (z as f64 - c[2]).powi(2)
                            <= trunc * trunc
                    });
                    if !in_some_ball {
                        outside.set(x, y, z, 1.0 - outside.get(x, y, z));
                        changed += 1;
                    }
                }
            }
        }
        assert!(changed > 0, "test needs voxels outside all balls");
        let flipped = consistency_measure(&outside, &lms, sigma, trunc).unwrap();
        assert_eq!(flipped, base);
    }

    #[test]
    fn consistency_loss_trivial_values() {
        let dim = 8;
        let spec = consistency_spec(dim, None, None);

        // All ten landmarks sit on occupied voxel centers: M = 10.
        let mut grid = VoxelGrid::new(dim);
        let mut pts = [[0.0; 3]; N_LANDMARKS];
        for (k, p) in pts.iter_mut().enumerate() {
            let v = [(k % 4) + 1, (k / 4) + 2, (k % 3) + 3];
            grid.set(v[0], v[1], v[2], 1.0);
            *p = [
                (v[0] as f64 + 0.5) / dim as f64,
                (v[1] as f64 + 0.5) / dim as f64,
                (v[2] as f64 + 0.5) / dim as f64,
            ];
        }
        let lms = LandmarkSet::new(pts);
        let mut tape = Tape::new();
        let g = tape.watch(
            &Tensor::from_vec(vec![1, dim * dim * dim], grid.values_f64())
                .unwrap()
                .tracked(),
        );
        let l = tape.watch(
            &Tensor::from_vec(vec![1, 30], lms.to_flat())
                .unwrap()
                .tracked(),
        );
        let loss = consistency_loss(&mut tape, &g, &l, spec).unwrap();
        assert!((loss.item() - 1.0 / (10.0 + CONSISTENCY_EPS)).abs() < 1e-12);

        // Empty grid: the eps guard keeps the loss finite at 1/eps.
        let mut tape = Tape::new();
        let g = tape.watch(
            &Tensor::zeros(vec![1, dim * dim * dim]).tracked(),
        );
        let l = tape.watch(
            &Tensor::from_vec(vec![1, 30], lms.to_flat())
                .unwrap()
                .tracked(),
        );
        let loss = consistency_loss(&mut tape, &g, &l, spec).unwrap();
        assert!((loss.item() - 1.0 / CONSISTENCY_EPS).abs() < 1.0);
        assert!(loss.item().is_finite());
    }

    #[test]
    fn consistency_loss_gradients_match_finite_differences() {
        let dim = 8;
        let spec = consistency_spec(dim, None, None);
        let grid = random_grid(dim, 7);
        let lms = random_landmarks(8);
        let lm_t = Tensor::from_vec(vec![1, 30], lms.to_flat()).unwrap();

        // Through the grid values (argmax fixed, so FD agrees away from ties).
        let x = Tensor::from_vec(vec![1, dim * dim * dim], grid.values_f64()).unwrap();
        let err = gradient_check(
            |tape, x| {
                let l = tape.watch(&lm_t);
                consistency_loss(tape, x, &l, spec)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "grid-side gradcheck error {err}");

        // Through the landmark coordinates.
        let g_t = Tensor::from_vec(vec![1, dim * dim * dim], grid.values_f64()).unwrap();
        let x = Tensor::from_vec(vec![1, 30], lms.to_flat()).unwrap();
        let err = gradient_check(
            |tape, x| {
                let g = tape.watch(&g_t);
                consistency_loss(tape, &g, x, spec)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-4, "landmark-side gradcheck error {err}");
    }

    #[test]
    fn shape_total_loss_combination() {
        let w = LossWeights::default();
        let mut tape = Tape::new();
        let recon = tape.watch(&Tensor::scalar(10.0).tracked());
        let kl = tape.watch(&Tensor::scalar(2.0).tracked());
        let consist = tape.watch(&Tensor::scalar(0.1).tracked());
        let total = shape_total_loss(&mut tape, &recon, &kl, &consist, &w).unwrap();
        assert!((total.item() - 3.9).abs() < 1e-12);

        // d total / d consist == alpha2 exactly.
        let grads = tape.backward(&total).unwrap();
        assert_eq!(grads.wrt(&consist).unwrap(), &[27.0]);
        assert_eq!(grads.wrt(&recon).unwrap(), &[0.1]);
        assert_eq!(grads.wrt(&kl).unwrap(), &[0.1]);
    }

    #[test]
    fn shape_total_loss_alpha2_zero_is_shape_only() {
        let w = LossWeights {
            alpha1: 1.0,
            alpha2: 0.0,
            ..LossWeights::default()
        };
        let mut tape = Tape::new();
        let recon = tape.watch(&Tensor::scalar(3.0).tracked());
        let kl = tape.watch(&Tensor::scalar(0.5).tracked());
        let consist = tape.watch(&Tensor::scalar(123.0).tracked());
        let total = shape_total_loss(&mut tape, &recon, &kl, &consist, &w).unwrap();
        assert_eq!(total.item(), 3.5);
    }
}
