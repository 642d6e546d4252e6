//! Voxel occupancy grids and the fixed 10-landmark chair structure.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The fixed semantic order of the 10 chair landmarks. Every landmark file,
/// report column, and flat coordinate tensor uses exactly this order.
pub const LANDMARK_NAMES: [&str; 10] = [
    "back-topleft",
    "back-topright",
    "leg-frontright",
    "leg-frontleft",
    "leg-backleft",
    "leg-backright",
    "seat-backleft",
    "seat-backright",
    "seat-frontleft",
    "seat-frontright",
];

/// Number of landmarks in the chair structure.
pub const N_LANDMARKS: usize = 10;

/// D³ occupancy values in [0,1], row-major with x fastest, then y, then z.
/// z is height. Binary grids contain only {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dim: usize,
    values: Vec<f32>,
}

impl VoxelGrid {
    /// Empty grid of resolution `dim`.
    pub fn new(dim: usize) -> VoxelGrid {
        VoxelGrid {
            dim,
            values: vec![0.0; dim * dim * dim],
        }
    }

    pub fn from_values(dim: usize, values: Vec<f32>) -> Result<VoxelGrid> {
        if values.len() != dim * dim * dim {
            return Err(Error::Config(format!(
                "voxel grid dim {dim} needs {} values, got {}",
                dim * dim * dim,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!(
                "voxel value {v} outside [0,1]"
            )));
        }
        Ok(VoxelGrid { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        x + y * self.dim + z * self.dim * self.dim
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.idx(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.idx(x, y, z);
        self.values[i] = v;
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    /// True when every value is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Number of voxels with value above `threshold`.
    pub fn occupied_count(&self, threshold: f32) -> usize {
        self.values.iter().filter(|&&v| v > threshold).count()
    }

    /// Fraction of voxels above 0.5.
    pub fn occupancy_fraction(&self) -> f64 {
        self.occupied_count(0.5) as f64 / self.values.len() as f64
    }

    /// Values widened to f64, in grid order.
    pub fn values_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Builds a `[B, 1, D, D, D]` tensor from a batch of equal-resolution grids.
pub fn grids_to_tensor(grids: &[&VoxelGrid]) -> Result<Tensor> {
    let Some(first) = grids.first() else {
        return Err(Error::Data("empty grid batch".into()));
    };
    let dim = first.dim();
    let voxels = dim * dim * dim;
    let mut data = Vec::with_capacity(grids.len() * voxels);
    for g in grids {
        if g.dim() != dim {
            return Err(Error::ShapeMismatch {
                op: "grids_to_tensor",
                left: vec![dim],
                right: vec![g.dim()],
            });
        }
        data.extend(g.values().iter().map(|&v| f64::from(v)));
    }
    Tensor::from_vec(vec![grids.len(), 1, dim, dim, dim], data)
}

/// Splits a `[B, ...]` tensor with B·D³ values back into grids, clamping into
/// [0,1] (generator outputs are already inside by construction).
pub fn tensor_to_grids(t: &Tensor, dim: usize) -> Result<Vec<VoxelGrid>> {
    let voxels = dim * dim * dim;
    if t.len() % voxels != 0 {
        return Err(Error::Config(format!(
            "tensor of {} values is not a whole number of {dim}^3 grids",
            t.len()
        )));
    }
    Ok(t.data()
        .chunks(voxels)
        .map(|chunk| VoxelGrid {
            dim,
            values: chunk.iter().map(|&v| (v as f32).clamp(0.0, 1.0)).collect(),
        })
        .collect())
}

/// Ten named 3-D points in normalized [0,1]³, always in [`LANDMARK_NAMES`]
/// order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkSet {
    points: [[f64; 3]; N_LANDMARKS],
}

impl LandmarkSet {
    /// Builds a set from points given in the fixed order, clamping every
    /// coordinate into [0,1].
    pub fn new(points: [[f64; 3]; N_LANDMARKS]) -> LandmarkSet {
        let mut clamped = points;
        for p in &mut clamped {
            for c in p.iter_mut() {
                *c = c.clamp(0.0, 1.0);
            }
        }
        LandmarkSet { points: clamped }
    }

    /// Reads 30 flat values (x,y,z per landmark), clamping into [0,1].
    pub fn from_flat(flat: &[f64]) -> Result<LandmarkSet> {
        if flat.len() != 3 * N_LANDMARKS {
            return Err(Error::Config(format!(
                "landmark set needs {} values, got {}",
                3 * N_LANDMARKS,
                flat.len()
            )));
        }
        let mut points = [[0.0; 3]; N_LANDMARKS];
        for (k, chunk) in flat.chunks(3).enumerate() {
            points[k] = [chunk[0], chunk[1], chunk[2]];
        }
        Ok(LandmarkSet::new(points))
    }

    pub fn points(&self) -> &[[f64; 3]; N_LANDMARKS] {
        &self.points
    }

    pub fn point(&self, k: usize) -> [f64; 3] {
        self.points[k]
    }

    /// Flattens to 30 values in the fixed order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    /// Mean Euclidean distance to another set, over the 10 landmarks.
    pub fn mean_distance(&self, other: &LandmarkSet) -> f64 {
        let mut total = 0.0;
        for (a, b) in self.points.iter().zip(other.points.iter()) {
            total += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        }
        total / N_LANDMARKS as f64
    }
}

/// Flattens a batch of landmark sets into a `[B, 30]` tensor.
pub fn landmarks_to_tensor(sets: &[&LandmarkSet]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(sets.len() * 3 * N_LANDMARKS);
    for s in sets {
        data.extend(s.to_flat());
    }
    Tensor::from_vec(vec![sets.len(), 3 * N_LANDMARKS], data)
}

/// Normalized coordinate of a voxel-space position: voxel centers sit at
/// integer coordinates, so `v = p·D − 0.5`.
pub fn to_voxel_space(p: f64, dim: usize) -> f64 {
    p * dim as f64 - 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_roundtrip_through_tensor() {
        let mut g = VoxelGrid::new(4);
        g.set(1, 2, 3, 1.0);
        let t = grids_to_tensor(&[&g, &g]).unwrap();
        assert_eq!(t.shape(), &[2, 1, 4, 4, 4]);
        let back = tensor_to_grids(&t, 4).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], g);
    }

    #[test]
    fn landmark_flat_roundtrip_clamps() {
        let mut flat = vec![0.5; 30];
        flat[0] = -0.2;
        flat[29] = 1.7;
        let set = LandmarkSet::from_flat(&flat).unwrap();
        assert_eq!(set.point(0)[0], 0.0);
        assert_eq!(set.point(9)[2], 1.0);
        assert_eq!(set.to_flat().len(), 30);
    }

    #[test]
    fn grid_rejects_out_of_range_values() {
        assert!(VoxelGrid::from_values(2, vec![0.0; 7]).is_err());
        assert!(VoxelGrid::from_values(2, vec![2.0; 8]).is_err());
    }
}
