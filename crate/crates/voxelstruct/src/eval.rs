//! Evaluation protocols: voxel IoU, completion under controlled degradation,
//! sparseness sweeps, latent interpolation, per-landmark consistency reports,
//! and inspectable artifact export (PGM slices, point clouds).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::dataset::{crop_box, dilate, sparsify, CropSide, Sample};
use crate::error::{Error, Result};
use crate::losses::{consistency_measure, default_sigma, default_trunc};
use crate::nets::{detect_eval, encode_eval, generate_eval, NetConfig, ParamSet};
use crate::tensor::Tensor;
use crate::util::{mean, std_dev, stream_rng, stream_seed};
use crate::voxel::{grids_to_tensor, LandmarkSet, VoxelGrid, LANDMARK_NAMES, N_LANDMARKS};

/// Intersection-over-union of thresholded grids. Both-empty pairs score 1.0
/// so the metric is total; callers can detect the degenerate case from the
/// occupancy counts.
pub fn iou(a: &VoxelGrid, b: &VoxelGrid, threshold: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            op: "iou",
            left: vec![a.dim()],
            right: vec![b.dim()],
        });
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "iou threshold {threshold} outside (0,1)"
        )));
    }
    let t = threshold as f32;
    let mut intersection = 0usize;
    let mut union = 0usize;
    for (&va, &vb) in a.values().iter().zip(b.values()) {
        let oa = va >= t;
        let ob = vb >= t;
        intersection += usize::from(oa && ob);
        union += usize::from(oa || ob);
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(intersection as f64 / union as f64)
    }
}

/// Tabular evaluation output: named metric columns, one row per sample or
/// draw, and aggregates recomputable from the rows.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub protocol: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub aggregates: BTreeMap<String, f64>,
    pub config_hash: String,
    pub seeds: Vec<u64>,
}

impl EvalReport {
    pub fn new(
        protocol: impl Into<String>,
        columns: Vec<String>,
        config_hash: impl Into<String>,
        seeds: Vec<u64>,
    ) -> EvalReport {
        EvalReport {
            protocol: protocol.into(),
            columns,
            rows: Vec::new(),
            aggregates: BTreeMap::new(),
            config_hash: config_hash.into(),
            seeds,
        }
    }

    pub fn push_row(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Computes `mean_*` and `std_*` aggregates from the stored rows.
    pub fn finalize(&mut self) {
        self.aggregates.clear();
        for (c, name) in self.columns.iter().enumerate() {
            let values: Vec<f64> = self.rows.iter().map(|r| r[c]).collect();
            self.aggregates
                .insert(format!("mean_{name}"), mean(&values));
            self.aggregates
                .insert(format!("std_{name}"), std_dev(&values));
        }
    }

    pub fn aggregate(&self, key: &str) -> Option<f64> {
        self.aggregates.get(key).copied()
    }

    /// Writes rows as CSV (header first).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Writes the aggregate view (with config hash and seeds) as JSON.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Degradation applied to completion inputs, in order: sparsify, dilate,
/// crop.
#[derive(Debug, Clone, Copy, Default)]
pub struct Degradation {
    /// Per-voxel drop probability; 0 disables.
    pub sparsify_level: f64,
    /// Binary dilation iterations; 0 disables.
    pub dilate_iters: usize,
    /// Axis-aligned crop `(axis, fraction, side)`; fraction at most 1/3.
    pub crop: Option<(usize, f64, CropSide)>,
}

impl Degradation {
    pub fn none() -> Degradation {
        Degradation::default()
    }

    pub fn apply(&self, grid: &VoxelGrid, seed: u64) -> Result<VoxelGrid> {
        let mut g = grid.clone();
        if self.sparsify_level > 0.0 {
            g = sparsify(&g, self.sparsify_level, seed)?;
        }
        if self.dilate_iters > 0 {
            g = dilate(&g, self.dilate_iters);
        }
        if let Some((axis, frac, side)) = self.crop {
            g = crop_box(&g, axis, frac, side)?;
        }
        Ok(g)
    }
}

fn batched_reconstruct(
    encoder: &ParamSet,
    generator: &ParamSet,
    cfg: &NetConfig,
    grids: &[VoxelGrid],
) -> Result<Vec<VoxelGrid>> {
    let mut out = Vec::with_capacity(grids.len());
    for chunk in grids.chunks(16) {
        let refs: Vec<&VoxelGrid> = chunk.iter().collect();
        let batch = grids_to_tensor(&refs)?;
        let (mu, _) = encode_eval(encoder, cfg, &batch)?;
        out.extend(generate_eval(generator, cfg, &mu)?);
    }
    Ok(out)
}

/// Degrades each sample, encodes through the mean branch, regenerates, and
/// scores IoU against the clean ground truth.
#[allow(clippy::too_many_arguments)]
pub fn completion_eval(
    encoder: &ParamSet,
    generator: &ParamSet,
    cfg: &NetConfig,
    samples: &[&Sample],
    degradation: &Degradation,
    threshold: f64,
    seed: u64,
    config_hash: &str,
) -> Result<EvalReport> {
    let mut report = EvalReport::new(
        "complete",
        vec!["id".into(), "iou".into(), "input_occupancy".into()],
        config_hash,
        vec![seed],
    );
    let degraded: Vec<VoxelGrid> = samples
        .iter()
        .map(|s| degradation.apply(&s.shape, stream_seed(seed, "degrade", s.id as u64, 0)))
        .collect::<Result<_>>()?;
    let recon = batched_reconstruct(encoder, generator, cfg, &degraded)?;
    for ((sample, degraded), recon) in samples.iter().zip(&degraded).zip(&recon) {
        let score = iou(recon, &sample.shape, threshold)?;
        report.push_row(vec![
            sample.id as f64,
            score,
            degraded.occupancy_fraction(),
        ]);
    }
    report.finalize();
    Ok(report)
}

/// Mean completion IoU per sparseness level for one or more labelled models;
/// the data behind the robustness-to-sparsity curve. With two models the
/// output doubles as a paired comparison table.
pub fn sparseness_sweep(
    models: &[(&str, &ParamSet, &ParamSet)],
    cfg: &NetConfig,
    samples: &[&Sample],
    levels: &[f64],
    seeds: &[u64],
    threshold: f64,
    config_hash: &str,
) -> Result<EvalReport> {
    let mut columns = vec!["level".to_string()];
    for (label, _, _) in models {
        columns.push(format!("{label}_mean_iou"));
    }
    let mut report = EvalReport::new("sweep", columns, config_hash, seeds.to_vec());
    for &level in levels {
        let mut row = vec![level];
        for (_, encoder, generator) in models {
            let mut scores = Vec::new();
            for &seed in seeds {
                let deg = Degradation {
                    sparsify_level: level,
                    ..Degradation::none()
                };
                let r = completion_eval(
                    encoder,
                    generator,
                    cfg,
                    samples,
                    &deg,
                    threshold,
                    seed,
                    config_hash,
                )?;
                scores.push(r.aggregate("mean_iou").unwrap_or(0.0));
            }
            row.push(mean(&scores));
        }
        report.push_row(row);
    }
    report.finalize();
    Ok(report)
}

/// Affine path between two samples' latent means, decoded at every step.
#[derive(Debug, Clone)]
pub struct InterpolationTrack {
    pub a_id: usize,
    pub b_id: usize,
    /// K latent codes, affine in t = i/(K-1).
    pub codes: Vec<Vec<f64>>,
    pub grids: Vec<VoxelGrid>,
    /// Landmarks detected on each step, when a detector is supplied.
    pub landmarks: Option<Vec<LandmarkSet>>,
}

/// Linear latent interpolation through the encoder means.
pub fn interpolate(
    encoder: &ParamSet,
    generator: &ParamSet,
    detector: Option<&ParamSet>,
    cfg: &NetConfig,
    a: &Sample,
    b: &Sample,
    k: usize,
) -> Result<InterpolationTrack> {
    if k < 2 {
        return Err(Error::Config(format!(
            "interpolation needs K >= 2, got {k}"
        )));
    }
    let batch = grids_to_tensor(&[&a.shape, &b.shape])?;
    let (mu, _) = encode_eval(encoder, cfg, &batch)?;
    let z = cfg.latent_dim;
    let za = &mu.data()[..z];
    let zb = &mu.data()[z..];
    let mut codes = Vec::with_capacity(k);
    for i in 0..k {
        let t = i as f64 / (k - 1) as f64;
        codes.push(
            za.iter()
                .zip(zb)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect::<Vec<f64>>(),
        );
    }
    let flat: Vec<f64> = codes.iter().flatten().copied().collect();
    let zt = Tensor::from_vec(vec![k, z], flat)?;
    let grids = generate_eval(generator, cfg, &zt)?;
    let landmarks = match detector {
        Some(det) => {
            let refs: Vec<&VoxelGrid> = grids.iter().collect();
            Some(detect_eval(det, cfg, &grids_to_tensor(&refs)?)?)
        }
        None => None,
    };
    Ok(InterpolationTrack {
        a_id: a.id,
        b_id: b.id,
        codes,
        grids,
        landmarks,
    })
}

/// Draws prior samples, generates, detects, and scores per-landmark
/// consistency. Columns follow the fixed landmark-name order plus a total.
#[allow(clippy::too_many_arguments)]
pub fn consistency_report(
    generator: &ParamSet,
    detector: &ParamSet,
    cfg: &NetConfig,
    n_samples: usize,
    seed: u64,
    sigma: Option<f64>,
    trunc: Option<f64>,
    config_hash: &str,
) -> Result<EvalReport> {
    let sigma = sigma.unwrap_or_else(|| default_sigma(cfg.grid_dim));
    let trunc = trunc.unwrap_or_else(|| default_trunc(sigma));
    let mut columns: Vec<String> = vec!["draw".into()];
    columns.extend(LANDMARK_NAMES.iter().map(|s| s.to_string()));
    columns.push("total".into());
    let mut report = EvalReport::new("consistency", columns, config_hash, vec![seed]);

    let mut rng = stream_rng(seed, "prior-eval", 0, 0);
    let mut done = 0usize;
    while done < n_samples {
        let batch = (n_samples - done).min(16);
        let mut z = Vec::with_capacity(batch * cfg.latent_dim);
        for _ in 0..batch * cfg.latent_dim {
            z.push(<StandardNormal as Distribution<f64>>::sample(
                &StandardNormal,
                &mut rng,
            ));
        }
        let zt = Tensor::from_vec(vec![batch, cfg.latent_dim], z)?;
        let grids = generate_eval(generator, cfg, &zt)?;
        let refs: Vec<&VoxelGrid> = grids.iter().collect();
        let detected = detect_eval(detector, cfg, &grids_to_tensor(&refs)?)?;
        for (i, (grid, lms)) in grids.iter().zip(&detected).enumerate() {
            let score = consistency_measure(grid, lms, sigma, trunc)?;
            let mut row = Vec::with_capacity(N_LANDMARKS + 2);
            row.push((done + i) as f64);
            row.extend(score.per_landmark);
            row.push(score.total);
            report.push_row(row);
        }
        done += batch;
    }
    report.finalize();
    Ok(report)
}

/// Mean per-landmark Euclidean distance between predictions and truth.
pub fn mean_landmark_error(pred: &[LandmarkSet], truth: &[LandmarkSet]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| p.mean_distance(t))
        .sum();
    total / pred.len() as f64
}

/// Writes three mid-axis slice images (binary PGM, pixel = value·255) and an
/// ASCII point cloud of voxels above 0.5, returning the created paths.
pub fn export_views(grid: &VoxelGrid, out_prefix: &Path) -> Result<Vec<PathBuf>> {
    let dim = grid.dim();
    let mid = dim / 2;
    let mut created = Vec::new();
    let prefix = out_prefix.to_string_lossy();
    let pixel = |v: f32| -> u8 { (f64::from(v) * 255.0).round().clamp(0.0, 255.0) as u8 };

    // One slice per axis; image columns run over the first remaining axis,
    // rows over the second.
    for (axis, name) in ["x", "y", "z"].iter().enumerate() {
        let path = PathBuf::from(format!("{prefix}_{name}.pgm"));
        let file = std::fs::File::create(&path)?;
        let mut w = std::io::BufWriter::new(file);
        write!(w, "P5\n{dim} {dim}\n255\n")?;
        for r in 0..dim {
            for c in 0..dim {
                let v = match axis {
                    0 => grid.get(mid, c, r),
                    1 => grid.get(c, mid, r),
                    _ => grid.get(c, r, mid),
                };
                w.write_all(&[pixel(v)])?;
            }
        }
        w.flush()?;
        created.push(path);
    }

    let path = PathBuf::from(format!("{prefix}_points.txt"));
    let mut out = String::new();
    for z in 0..dim {
        for y in 0..dim {
            for x in 0..dim {
                let v = grid.get(x, y, z);
                if v > 0.5 {
                    out.push_str(&format!("{x} {y} {z} {v}\n"));
                }
            }
        }
    }
    std::fs::write(&path, out)?;
    created.push(path);
    Ok(created)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_with(dim: usize, cells: &[(usize, usize, usize)]) -> VoxelGrid {
        let mut g = VoxelGrid::new(dim);
        for &(x, y, z) in cells {
            g.set(x, y, z, 1.0);
        }
        g
    }

    #[test]
    fn iou_identical_disjoint_and_hand_count() {
        let a = grid_with(8, &[(0, 0, 0), (1, 0, 0), (2, 0, 0)]);
        assert_eq!(iou(&a, &a, 0.5).unwrap(), 1.0);

        let b = grid_with(8, &[(5, 5, 5)]);
        assert_eq!(iou(&a, &b, 0.5).unwrap(), 0.0);

        // a: 8 voxels, b: 8 voxels, 4 shared -> 4 / 12.
        let a: Vec<(usize, usize, usize)> = (0..8).map(|i| (i, 0, 0)).collect();
        let b: Vec<(usize, usize, usize)> = (4..12).map(|i| (i, 0, 0)).collect();
        let a = grid_with(16, &a);
        let b = grid_with(16, &b);
        let v = iou(&a, &b, 0.5).unwrap();
        assert!((v - 4.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn iou_is_symmetric_and_total() {
        let a = grid_with(8, &[(1, 2, 3), (4, 4, 4)]);
        let b = grid_with(8, &[(1, 2, 3)]);
        assert_eq!(iou(&a, &b, 0.5).unwrap(), iou(&b, &a, 0.5).unwrap());
        let empty = VoxelGrid::new(8);
        assert_eq!(iou(&empty, &empty, 0.5).unwrap(), 1.0);
        assert!(iou(&a, &grid_with(16, &[]), 0.5).is_err());
    }

    #[test]
    fn report_aggregates_recompute_from_rows() {
        let mut r = EvalReport::new("test", vec!["id".into(), "v".into()], "h", vec![1]);
        r.push_row(vec![0.0, 1.0]);
        r.push_row(vec![1.0, 3.0]);
        r.finalize();
        assert_eq!(r.aggregate("mean_v").unwrap(), 2.0);
        let vals: Vec<f64> = r.rows.iter().map(|row| row[1]).collect();
        assert!((r.aggregate("mean_v").unwrap() - mean(&vals)).abs() <= 1e-12);
        assert!((r.aggregate("std_v").unwrap() - std_dev(&vals)).abs() <= 1e-12);
    }

    #[test]
    fn export_views_formats() {
        let dir = tempfile::tempdir().unwrap();
        let dim = 16;

        // Empty grid: all-black slices, empty point file.
        let empty = VoxelGrid::new(dim);
        let files = export_views(&empty, &dir.path().join("empty")).unwrap();
        assert_eq!(files.len(), 4);
        let header = format!("P5\n{dim} {dim}\n255\n");
        for f in &files[..3] {
            let bytes = std::fs::read(f).unwrap();
            assert!(bytes.starts_with(header.as_bytes()));
            assert_eq!(bytes.len(), header.len() + dim * dim, "{f:?}");
            assert!(bytes[header.len()..].iter().all(|&b| b == 0));
        }
        assert_eq!(std::fs::read_to_string(&files[3]).unwrap(), "");

        // Single center voxel: one bright pixel in each slice.
        let center = grid_with(dim, &[(dim / 2, dim / 2, dim / 2)]);
        let files = export_views(&center, &dir.path().join("center")).unwrap();
        for f in &files[..3] {
            let bytes = std::fs::read(f).unwrap();
            let lit: Vec<usize> = bytes[header.len()..]
                .iter()
                .enumerate()
                .filter(|(_, &b)| b == 255)
                .map(|(i, _)| i)
                .collect();
            assert_eq!(lit.len(), 1, "{f:?}");
            assert_eq!(lit[0], (dim / 2) * dim + dim / 2);
        }
        let points = std::fs::read_to_string(&files[3]).unwrap();
        assert_eq!(points.trim(), "8 8 8 1");
    }
}
