//! Procedural parametric chair dataset with analytic ground-truth landmarks,
//! plus the augmentation and degradation simulators used for training and
//! completion experiments.
//!
//! Chairs are unions of axis-aligned solids (four legs, a seat slab, and a
//! back in one of three styles) inside the [0.05, 0.95]³ box, rasterized by a
//! voxel-center-inside test. Every quantity derives from explicit seeds, so
//! two machines produce byte-identical dataset files.

pub mod files;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{stream_rng, stream_seed};
use crate::voxel::{LandmarkSet, VoxelGrid};

/// Lower wall of the chair bounding box (also the floor plane).
pub const BOX_MIN: f64 = 0.05;
/// Upper wall of the chair bounding box.
pub const BOX_MAX: f64 = 0.95;

/// Backrest construction style.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackStyle {
    FullPanel,
    TwoPost,
    Slatted,
}

/// Leg cross-section along the height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LegStyle {
    Straight,
    Tapered,
}

/// Parameters of one chair, in normalized units of the unit box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChairParams {
    pub seat_width: f64,
    pub seat_depth: f64,
    pub seat_thickness: f64,
    /// Height of the seat's lower surface above the box floor (absolute z).
    pub seat_height: f64,
    pub leg_thickness: f64,
    pub back_height: f64,
    pub back_thickness: f64,
    pub back_style: BackStyle,
    pub leg_style: LegStyle,
    /// 4 in the default generator; 0 (pedestal) or 5 in hard mode.
    pub leg_count: u32,
}

impl ChairParams {
    /// Checks the geometric invariants: the chair fits inside
    /// [BOX_MIN, BOX_MAX]³, legs reach the floor plane, the back rises above
    /// the seat, and all thicknesses are positive.
    pub fn validate(&self) -> Result<()> {
        let top = self.seat_height + self.seat_thickness + self.back_height;
        let half_w = self.seat_width / 2.0;
        let half_d = self.seat_depth / 2.0;
        let ok = self.seat_width > 0.0
            && self.seat_depth > 0.0
            && self.seat_thickness > 0.0
            && self.leg_thickness > 0.0
            && self.back_thickness > 0.0
            && self.back_height > 0.0
            && self.seat_height > BOX_MIN
            && top <= BOX_MAX
            && 0.5 - half_w >= BOX_MIN
            && 0.5 + half_w <= BOX_MAX
            && 0.5 - half_d >= BOX_MIN
            && 0.5 + half_d <= BOX_MAX
            && self.leg_thickness < self.seat_width.min(self.seat_depth) / 2.0
            && matches!(self.leg_count, 0 | 4 | 5);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("chair parameters out of range: {self:?}")))
        }
    }
}

/// Documented sampling ranges for [`sample_chair`]. Thickness minima sit
/// above three voxels at D = 32 so rasterization quantization stays a small
/// fraction of every part's volume.
pub mod ranges {
    pub const SEAT_WIDTH: (f64, f64) = (0.50, 0.85);
    pub const SEAT_DEPTH: (f64, f64) = (0.50, 0.85);
    pub const SEAT_THICKNESS: (f64, f64) = (0.09, 0.14);
    pub const SEAT_HEIGHT: (f64, f64) = (0.28, 0.42);
    pub const LEG_THICKNESS: (f64, f64) = (0.09, 0.16);
    pub const BACK_HEIGHT: (f64, f64) = (0.22, 0.38);
    pub const BACK_THICKNESS: (f64, f64) = (0.09, 0.14);
}

fn uniform(rng: &mut rand_chacha::ChaCha8Rng, range: (f64, f64)) -> f64 {
    range.0 + rng.gen::<f64>() * (range.1 - range.0)
}

/// Draws chair parameters from the documented uniform ranges; deterministic
/// per seed and always invariant-satisfying.
pub fn sample_chair(seed: u64) -> ChairParams {
    sample_chair_mode(seed, false)
}

/// `hard = true` admits zero-leg (pedestal) and five-leg chairs, the shapes
/// the 10-landmark structure cannot describe unambiguously.
pub fn sample_chair_mode(seed: u64, hard: bool) -> ChairParams {
    let mut rng = stream_rng(seed, "chair-params", 0, 0);
    let params = ChairParams {
        seat_width: uniform(&mut rng, ranges::SEAT_WIDTH),
        seat_depth: uniform(&mut rng, ranges::SEAT_DEPTH),
        seat_thickness: uniform(&mut rng, ranges::SEAT_THICKNESS),
        seat_height: uniform(&mut rng, ranges::SEAT_HEIGHT),
        leg_thickness: uniform(&mut rng, ranges::LEG_THICKNESS),
        back_height: uniform(&mut rng, ranges::BACK_HEIGHT),
        back_thickness: uniform(&mut rng, ranges::BACK_THICKNESS),
        back_style: match stream_rng(seed, "chair-style", 0, 0).gen_range(0..3u8) {
            0 => BackStyle::FullPanel,
            1 => BackStyle::TwoPost,
            _ => BackStyle::Slatted,
        },
        leg_style: if rng.gen::<bool>() {
            LegStyle::Straight
        } else {
            LegStyle::Tapered
        },
        leg_count: if hard {
            match rng.gen_range(0..5u8) {
                0 => 0,
                1 => 5,
                _ => 4,
            }
        } else {
            4
        },
    };
    debug_assert!(params.validate().is_ok());
    params
}

/// Cells per side of the design lattice all solids snap to before
/// rasterization. Because the lattice is fixed, resolutions that are
/// multiples of it capture exactly proportional volumes, so occupancy is
/// consistent across D = 32, 64, ...
const DESIGN_GRID: f64 = 32.0;

/// Axis-aligned box given by center and half extents.
///
/// Containment snaps the box to the design lattice first: the extent becomes
/// a whole number of design cells (and at least two voxels at the target
/// resolution, so thin parts never vanish), the position a lattice boundary.
#[derive(Debug, Clone, Copy)]
struct SolidBox {
    center: [f64; 3],
    half: [f64; 3],
}

fn axis_hit(p: f64, center: f64, half: f64, d: f64) -> bool {
    // Faces snap independently so no face moves more than half a design
    // cell; thin parts are re-centered to the minimum extent instead.
    let g = DESIGN_GRID;
    let min_cells = (2.0 * g / d).ceil(); // two voxels of material at D
    let mut lo = ((center - half) * g).round();
    let mut hi = ((center + half) * g).round();
    if hi - lo < min_cells {
        lo = (center * g - min_cells / 2.0).round();
        hi = lo + min_cells;
    }
    let scale = d / g;
    let i = (p * d - 0.5).round();
    i + 0.5 >= lo * scale && i + 0.5 < hi * scale
}

impl SolidBox {
    fn contains(&self, p: [f64; 3], d: f64) -> bool {
        (0..3).all(|a| axis_hit(p[a], self.center[a], self.half[a], d))
    }
}

/// Chair footprint corners and derived measures shared by the rasterizer and
/// the landmark formulas.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    seat_top: f64,
    back_top: f64,
    y_back: f64,
    post_w: f64,
}

fn frame(p: &ChairParams) -> Frame {
    let x0 = 0.5 - p.seat_width / 2.0;
    let x1 = 0.5 + p.seat_width / 2.0;
    let y0 = 0.5 - p.seat_depth / 2.0;
    let y1 = 0.5 + p.seat_depth / 2.0;
    let seat_top = p.seat_height + p.seat_thickness;
    Frame {
        x0,
        x1,
        y0,
        y1,
        seat_top,
        back_top: seat_top + p.back_height,
        y_back: y1 - p.back_thickness / 2.0,
        post_w: p.leg_thickness.max(p.back_thickness),
    }
}

/// Leg center positions (x, y), in landmark order front-right, front-left,
/// back-left, back-right.
fn leg_centers(p: &ChairParams) -> [[f64; 2]; 4] {
    let f = frame(p);
    let half = p.leg_thickness / 2.0;
    [
        [f.x1 - half, f.y0 + half],
        [f.x0 + half, f.y0 + half],
        [f.x0 + half, f.y1 - half],
        [f.x1 - half, f.y1 - half],
    ]
}

/// Point-in-chair test at resolution `d` (solids snap to the voxel lattice).
fn chair_contains(p: &ChairParams, point: [f64; 3], d: f64) -> bool {
    let f = frame(p);

    // Seat slab.
    let seat = SolidBox {
        center: [0.5, 0.5, p.seat_height + p.seat_thickness / 2.0],
        half: [
            p.seat_width / 2.0,
            p.seat_depth / 2.0,
            p.seat_thickness / 2.0,
        ],
    };
    if seat.contains(point, d) {
        return true;
    }

    // Legs (or pedestal).
    let leg_z_center = (BOX_MIN + p.seat_height) / 2.0;
    let leg_z_half = (p.seat_height - BOX_MIN) / 2.0;
    let width_at = |z: f64| -> f64 {
        match p.leg_style {
            LegStyle::Straight => p.leg_thickness,
            LegStyle::Tapered => {
                // Shrinks linearly toward the floor, to 75% at the tip.
                let t = ((z - BOX_MIN) / (p.seat_height - BOX_MIN)).clamp(0.0, 1.0);
                p.leg_thickness * (0.75 + 0.25 * t)
            }
        }
    };
    if p.leg_count == 0 {
        // Pedestal: central column plus a base slab on the floor.
        let column = SolidBox {
            center: [0.5, 0.5, leg_z_center],
            half: [
                p.leg_thickness * 0.75,
                p.leg_thickness * 0.75,
                leg_z_half,
            ],
        };
        let base = SolidBox {
            center: [0.5, 0.5, BOX_MIN + p.seat_thickness / 2.0],
            half: [
                p.seat_width * 0.3,
                p.seat_depth * 0.3,
                p.seat_thickness / 2.0,
            ],
        };
        if column.contains(point, d) || base.contains(point, d) {
            return true;
        }
    } else {
        let w = width_at(point[2]) / 2.0;
        for c in leg_centers(p) {
            let leg = SolidBox {
                center: [c[0], c[1], leg_z_center],
                half: [w, w, leg_z_half],
            };
            if leg.contains(point, d) {
                return true;
            }
        }
        if p.leg_count == 5 {
            let center_leg = SolidBox {
                center: [0.5, 0.5, leg_z_center],
                half: [w, w, leg_z_half],
            };
            if center_leg.contains(point, d) {
                return true;
            }
        }
    }

    // Back.
    let back_z_center = (f.seat_top + f.back_top) / 2.0;
    let back_z_half = p.back_height / 2.0;
    let posts = |point: [f64; 3]| -> bool {
        let half_post = f.post_w / 2.0;
        [f.x0 + half_post, f.x1 - half_post].iter().any(|&cx| {
            SolidBox {
                center: [cx, f.y_back, back_z_center],
                half: [half_post, p.back_thickness / 2.0, back_z_half],
            }
            .contains(point, d)
        })
    };
    match p.back_style {
        BackStyle::FullPanel => SolidBox {
            center: [0.5, f.y_back, back_z_center],
            half: [
                p.seat_width / 2.0,
                p.back_thickness / 2.0,
                back_z_half,
            ],
        }
        .contains(point, d),
        BackStyle::TwoPost => {
            if posts(point) {
                return true;
            }
            // Top rail connecting the posts.
            SolidBox {
                center: [0.5, f.y_back, f.back_top - f.post_w / 2.0],
                half: [
                    p.seat_width / 2.0,
                    p.back_thickness / 2.0,
                    f.post_w / 2.0,
                ],
            }
            .contains(point, d)
        }
        BackStyle::Slatted => {
            if posts(point) {
                return true;
            }
            // Three horizontal slats plus the top rail.
            let slat_half = (p.back_height * 0.08).max(p.back_thickness / 2.0);
            for i in 0..4 {
                let t = (i as f64 + 1.0) / 4.0;
                let cz = f.seat_top + p.back_height * t - slat_half;
                let slat = SolidBox {
                    center: [0.5, f.y_back, cz],
                    half: [
                        p.seat_width / 2.0,
                        p.back_thickness / 2.0,
                        slat_half,
                    ],
                };
                if slat.contains(point, d) {
                    return true;
                }
            }
            false
        }
    }
}

/// Rasterizes a chair by testing each voxel center against the solid union,
/// with every solid snapped to a whole number of voxels (at least two) so
/// thin parts neither vanish nor flicker with resolution.
pub fn voxelize(params: &ChairParams, dim: usize) -> Result<VoxelGrid> {
    if dim < 16 {
        return Err(Error::Config(format!("voxelize needs D >= 16, got {dim}")));
    }
    params.validate()?;
    let d = dim as f64;
    let mut grid = VoxelGrid::new(dim);
    let plane = dim * dim;
    grid.values_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(z, slab)| {
            let pz = (z as f64 + 0.5) / d;
            for y in 0..dim {
                let py = (y as f64 + 0.5) / d;
                for x in 0..dim {
                    let px = (x as f64 + 0.5) / d;
                    if chair_contains(params, [px, py, pz], d) {
                        slab[y * dim + x] = 1.0;
                    }
                }
            }
        });
    Ok(grid)
}

/// Closed-form landmark positions: leg tips at the floor-contact centers,
/// seat corners on the top surface, back tips at the top outer corners.
pub fn analytic_landmarks(params: &ChairParams) -> LandmarkSet {
    let f = frame(params);
    let legs = leg_centers(params);
    // For pedestal chairs the four leg landmarks fall back to the base slab
    // corners; the structure stays ten points by definition.
    let leg_pts: [[f64; 3]; 4] = if params.leg_count == 0 {
        let bw = params.seat_width * 0.3;
        let bd = params.seat_depth * 0.3;
        [
            [0.5 + bw, 0.5 - bd, BOX_MIN],
            [0.5 - bw, 0.5 - bd, BOX_MIN],
            [0.5 - bw, 0.5 + bd, BOX_MIN],
            [0.5 + bw, 0.5 + bd, BOX_MIN],
        ]
    } else {
        [
            [legs[0][0], legs[0][1], BOX_MIN],
            [legs[1][0], legs[1][1], BOX_MIN],
            [legs[2][0], legs[2][1], BOX_MIN],
            [legs[3][0], legs[3][1], BOX_MIN],
        ]
    };
    let (back_left_x, back_right_x) = match params.back_style {
        BackStyle::FullPanel => (f.x0, f.x1),
        _ => (f.x0 + f.post_w / 2.0, f.x1 - f.post_w / 2.0),
    };
    LandmarkSet::new([
        [back_left_x, f.y_back, f.back_top],  // back-topleft
        [back_right_x, f.y_back, f.back_top], // back-topright
        leg_pts[0],                           // leg-frontright
        leg_pts[1],                           // leg-frontleft
        leg_pts[2],                           // leg-backleft
        leg_pts[3],                           // leg-backright
        [f.x0, f.y1, f.seat_top],             // seat-backleft
        [f.x1, f.y1, f.seat_top],             // seat-backright
        [f.x0, f.y0, f.seat_top],             // seat-frontleft
        [f.x1, f.y0, f.seat_top],             // seat-frontright
    ])
}

/// One dataset element.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub shape: VoxelGrid,
    /// Analytic ground truth; absent for imported external shapes.
    pub landmarks: Option<LandmarkSet>,
    /// Generator parameters; absent for imported or file-loaded shapes.
    pub params: Option<ChairParams>,
    /// Set when augmentation pushed occupancy outside the box and clipped it.
    pub clipped: bool,
}

/// Index sets of a train/test split with annotation bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub annotated_train: Vec<usize>,
    pub annotated_test: Vec<usize>,
    pub seed: u64,
}

/// Builds a deterministic disjoint split. `test_frac` must lie in (0,1);
/// `annotated_frac` may be 0 to produce an unannotated dataset.
pub fn make_split(
    n_total: usize,
    test_frac: f64,
    annotated_frac: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::Config(format!("test_frac {test_frac} outside (0,1)")));
    }
    if !(0.0..1.0).contains(&annotated_frac) {
        return Err(Error::Config(format!(
            "annotated_frac {annotated_frac} outside [0,1)"
        )));
    }
    let n_test = (n_total as f64 * test_frac).round() as usize;
    if n_test == 0 || n_test >= n_total {
        return Err(Error::Data(format!(
            "split of {n_total} samples at test_frac {test_frac} leaves an empty side"
        )));
    }
    let mut ids: Vec<usize> = (0..n_total).collect();
    let mut rng = stream_rng(seed, "split", 0, 0);
    // Fisher-Yates.
    for i in (1..ids.len()).rev() {
        let j = rng.gen_range(0..=i);
        ids.swap(i, j);
    }
    let mut test: Vec<usize> = ids[..n_test].to_vec();
    let mut train: Vec<usize> = ids[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();

    // The training side must end up with annotations whenever a positive
    // fraction was requested; a small test split may legitimately round to
    // zero annotated samples.
    let pick_annotated = |pool: &[usize], purpose: &str, require: bool| -> Result<Vec<usize>> {
        let count = (pool.len() as f64 * annotated_frac).round() as usize;
        if require && annotated_frac > 0.0 && count == 0 {
            return Err(Error::Data(format!(
                "{purpose}: {} samples at annotated_frac {annotated_frac} rounds to zero annotations",
                pool.len()
            )));
        }
        let mut shuffled = pool.to_vec();
        let mut rng = stream_rng(seed, purpose, 0, 0);
        for i in (1..shuffled.len()).rev() {
            let j = rng.gen_range(0..=i);
            shuffled.swap(i, j);
        }
        let mut chosen = shuffled[..count].to_vec();
        chosen.sort_unstable();
        Ok(chosen)
    };
    let annotated_train = pick_annotated(&train, "annotated-train", true)?;
    let annotated_test = pick_annotated(&test, "annotated-test", false)?;

    Ok(DatasetSplit {
        train,
        test,
        annotated_train,
        annotated_test,
        seed,
    })
}

/// A fully materialized dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dim: usize,
    pub seed: u64,
    pub hard: bool,
    pub samples: Vec<Sample>,
    pub split: DatasetSplit,
}

impl Dataset {
    pub fn sample(&self, id: usize) -> &Sample {
        &self.samples[id]
    }

    pub fn train_samples(&self) -> Vec<&Sample> {
        self.split.train.iter().map(|&i| &self.samples[i]).collect()
    }

    pub fn test_samples(&self) -> Vec<&Sample> {
        self.split.test.iter().map(|&i| &self.samples[i]).collect()
    }

    pub fn annotated_train_samples(&self) -> Vec<&Sample> {
        self.split
            .annotated_train
            .iter()
            .map(|&i| &self.samples[i])
            .collect()
    }
}

/// Generates `count` chairs at resolution `dim` with a deterministic split.
pub fn generate_dataset(
    count: usize,
    dim: usize,
    seed: u64,
    test_frac: f64,
    annotated_frac: f64,
    hard: bool,
) -> Result<Dataset> {
    let split = make_split(count, test_frac, annotated_frac, seed)?;
    let samples: Vec<Sample> = (0..count)
        .into_par_iter()
        .map(|id| {
            let params = sample_chair_mode(stream_seed(seed, "chair", id as u64, 0), hard);
            let shape = voxelize(&params, dim)?;
            Ok(Sample {
                id,
                shape,
                landmarks: Some(analytic_landmarks(&params)),
                params: Some(params),
                clipped: false,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        dim,
        seed,
        hard,
        samples,
        split,
    })
}

/// Anisotropic scaling of a sample about the box center (0.5, 0.5, 0.5).
///
/// The grid is resampled by nearest neighbor under the inverse map; landmarks
/// move under the forward map and clamp to the unit box. Occupancy pushed
/// outside the box is discarded and flagged via `clipped`.
pub fn augment_scale(sample: &Sample, sx: f64, sy: f64, sz: f64) -> Result<Sample> {
    for f in [sx, sy, sz] {
        if !(0.7..1.3).contains(&f) {
            return Err(Error::Config(format!(
                "augment_scale factor {f} outside [0.7, 1.3)"
            )));
        }
    }
    let dim = sample.shape.dim();
    let d = dim as f64;
    let factors = [sx, sy, sz];
    let mut out = VoxelGrid::new(dim);
    for z in 0..dim {
        for y in 0..dim {
            for x in 0..dim {
                // Inverse map of the output voxel center.
                let q = [
                    (x as f64 + 0.5) / d,
                    (y as f64 + 0.5) / d,
                    (z as f64 + 0.5) / d,
                ];
                let mut inside = true;
                let mut src = [0usize; 3];
                for a in 0..3 {
                    let s = 0.5 + (q[a] - 0.5) / factors[a];
                    let v = (s * d - 0.5).round();
                    if v < 0.0 || v >= d {
                        inside = false;
                        break;
                    }
                    src[a] = v as usize;
                }
                if inside {
                    let v = sample.shape.get(src[0], src[1], src[2]);
                    if v != 0.0 {
                        out.set(x, y, z, v);
                    }
                }
            }
        }
    }

    // Clipping check: does any occupied voxel map outside the box?
    let mut clipped = false;
    'outer: for z in 0..dim {
        for y in 0..dim {
            for x in 0..dim {
                if sample.shape.get(x, y, z) == 0.0 {
                    continue;
                }
                let p = [
                    (x as f64 + 0.5) / d,
                    (y as f64 + 0.5) / d,
                    (z as f64 + 0.5) / d,
                ];
                for a in 0..3 {
                    let fwd = 0.5 + (p[a] - 0.5) * factors[a];
                    if !(0.0..=1.0).contains(&fwd) {
                        clipped = true;
                        break 'outer;
                    }
                }
            }
        }
    }

    let landmarks = sample.landmarks.map(|set| {
        let mut pts = *set.points();
        for p in &mut pts {
            for a in 0..3 {
                // Unit factors are the identity exactly, not merely within
                // floating-point wiggle of it.
                if factors[a] != 1.0 {
                    p[a] = (0.5 + (p[a] - 0.5) * factors[a]).clamp(0.0, 1.0);
                }
            }
        }
        LandmarkSet::new(pts)
    });

    Ok(Sample {
        id: sample.id,
        shape: out,
        landmarks,
        params: sample.params,
        clipped,
    })
}

/// Draws per-axis augmentation factors from the documented [0.7, 1.3) range.
pub fn augment_factors(rng: &mut rand_chacha::ChaCha8Rng) -> [f64; 3] {
    [
        0.7 + rng.gen::<f64>() * 0.6,
        0.7 + rng.gen::<f64>() * 0.6,
        0.7 + rng.gen::<f64>() * 0.6,
    ]
}

/// Zeroes each occupied voxel independently with probability `level`.
pub fn sparsify(grid: &VoxelGrid, level: f64, seed: u64) -> Result<VoxelGrid> {
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::Config(format!("sparsify level {level} outside [0,1]")));
    }
    let mut rng = stream_rng(seed, "sparsify", 0, 0);
    let mut out = grid.clone();
    for v in out.values_mut() {
        // One draw per voxel keeps the mask independent of geometry.
        let drop = rng.gen::<f64>() < level;
        if drop && *v != 0.0 {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Iterated 6-neighborhood binary dilation. Values above 0.5 count as
/// occupied; the output is strictly binary.
pub fn dilate(grid: &VoxelGrid, iterations: usize) -> VoxelGrid {
    let dim = grid.dim();
    let mut current = VoxelGrid::new(dim);
    for i in 0..current.values().len() {
        current.values_mut()[i] = f32::from(u8::from(grid.values()[i] > 0.5));
    }
    for _ in 0..iterations {
        let prev = current.clone();
        for z in 0..dim {
            for y in 0..dim {
                for x in 0..dim {
                    if prev.get(x, y, z) == 1.0 {
                        continue;
                    }
                    let neighbor = (x > 0 && prev.get(x - 1, y, z) == 1.0)
                        || (x + 1 < dim && prev.get(x + 1, y, z) == 1.0)
                        || (y > 0 && prev.get(x, y - 1, z) == 1.0)
                        || (y + 1 < dim && prev.get(x, y + 1, z) == 1.0)
                        || (z > 0 && prev.get(x, y, z - 1) == 1.0)
                        || (z + 1 < dim && prev.get(x, y, z + 1) == 1.0);
                    if neighbor {
                        current.set(x, y, z, 1.0);
                    }
                }
            }
        }
    }
    current
}

/// Which side of an axis a crop removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropSide {
    Low,
    High,
}

/// Axis-aligned crop: zeroes a slab covering `fraction` of the box (at most
/// one third) from the chosen side of the chosen axis (0 = x, 1 = y, 2 = z).
pub fn crop_box(grid: &VoxelGrid, axis: usize, fraction: f64, side: CropSide) -> Result<VoxelGrid> {
    if axis > 2 {
        return Err(Error::Config(format!("crop axis {axis} out of range")));
    }
    if !(0.0..=1.0 / 3.0 + 1e-12).contains(&fraction) {
        return Err(Error::Config(format!(
            "crop fraction {fraction} outside [0, 1/3]"
        )));
    }
    let dim = grid.dim();
    let layers = (dim as f64 * fraction).floor() as usize;
    let cut = |i: usize| match side {
        CropSide::Low => i < layers,
        CropSide::High => i >= dim - layers,
    };
    let mut out = grid.clone();
    for z in 0..dim {
        for y in 0..dim {
            for x in 0..dim {
                let i = [x, y, z][axis];
                if cut(i) {
                    out.set(x, y, z, 0.0);
                }
            }
        }
    }
    Ok(out)
}

/// Checks the landmark-near-surface invariant: every landmark within one
/// voxel (Chebyshev distance in voxel units) of an occupied voxel.
pub fn landmarks_near_surface(shape: &VoxelGrid, landmarks: &LandmarkSet) -> bool {
    let dim = shape.dim();
    let d = dim as f64;
    landmarks.points().iter().all(|p| {
        let c = [p[0] * d - 0.5, p[1] * d - 0.5, p[2] * d - 0.5];
        let slack = 1.0 + 1e-9;
        let lo = |a: usize| (c[a] - slack).ceil().max(0.0) as usize;
        let hi = |a: usize| (c[a] + slack).floor().min(d - 1.0) as usize;
        for z in lo(2)..=hi(2) {
            for y in lo(1)..=hi(1) {
                for x in lo(0)..=hi(0) {
                    if shape.get(x, y, z) > 0.5 {
                        return true;
                    }
                }
            }
        }
        false
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::iou;
    use crate::util::stream_rng;
    use crate::voxel::N_LANDMARKS;

    #[test]
    fn sample_chair_is_deterministic_and_valid() {
        let a = sample_chair(123);
        let b = sample_chair(123);
        assert_eq!(a, b);
        for seed in 0..1000 {
            sample_chair(seed).validate().unwrap();
        }
    }

    #[test]
    fn early_seeds_cover_multiple_back_styles() {
        let styles: std::collections::BTreeSet<String> = (0..5)
            .map(|s| format!("{:?}", sample_chair(s).back_style))
            .collect();
        assert!(styles.len() >= 2, "seeds 0..4 gave only {styles:?}");
    }

    #[test]
    fn voxelize_places_seat_at_seat_height() {
        let mut params = sample_chair(7);
        params.seat_height = 0.5;
        params.validate().unwrap();
        let dim = 32;
        let grid = voxelize(&params, dim).unwrap();
        // Occupied voxels exist on the seat footprint around z = 0.5 D.
        let z = (0.52 * dim as f64) as usize;
        let mut found = false;
        for y in 0..dim {
            for x in 0..dim {
                if grid.get(x, y, z) == 1.0 {
                    found = true;
                }
            }
        }
        assert!(found, "no seat occupancy at z ~ seat_height");
    }

    #[test]
    fn voxelize_occupancy_fraction_in_band() {
        for seed in 0..100 {
            let params = sample_chair(seed);
            let grid = voxelize(&params, 32).unwrap();
            let occ = grid.occupancy_fraction();
            assert!(
                (0.01..=0.30).contains(&occ),
                "seed {seed}: occupancy {occ} outside [0.01, 0.30]"
            );
        }
    }

    #[test]
    fn voxelize_is_resolution_consistent() {
        for seed in 0..20 {
            let params = sample_chair(seed);
            let lo = voxelize(&params, 32).unwrap().occupancy_fraction();
            let hi = voxelize(&params, 64).unwrap().occupancy_fraction();
            let rel = (lo - hi).abs() / hi;
            assert!(rel < 0.20, "seed {seed}: occupancy {lo} vs {hi}, rel {rel}");
        }
    }

    #[test]
    fn analytic_landmark_construction_heights() {
        let params = sample_chair(11);
        let lms = analytic_landmarks(&params);
        for k in 2..6 {
            assert_eq!(lms.point(k)[2], BOX_MIN, "leg tip {k} not on the floor plane");
        }
        let seat_top = params.seat_height + params.seat_thickness;
        for k in 6..10 {
            assert!((lms.point(k)[2] - seat_top).abs() < 1e-12);
        }
    }

    #[test]
    fn landmarks_lie_within_one_voxel_of_occupancy() {
        for seed in 0..500 {
            let params = sample_chair(seed);
            let grid = voxelize(&params, 32).unwrap();
            let lms = analytic_landmarks(&params);
            assert!(
                landmarks_near_surface(&grid, &lms),
                "seed {seed}: landmark further than one voxel from occupancy"
            );
        }
    }

    #[test]
    fn hard_mode_produces_unusual_leg_counts_with_valid_landmarks() {
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..60 {
            let params = sample_chair_mode(seed, true);
            params.validate().unwrap();
            seen.insert(params.leg_count);
            if params.leg_count != 4 {
                let grid = voxelize(&params, 32).unwrap();
                let lms = analytic_landmarks(&params);
                assert!(landmarks_near_surface(&grid, &lms), "seed {seed}");
            }
        }
        assert!(seen.contains(&0) && seen.contains(&5), "saw {seen:?}");
    }

    fn make_sample(seed: u64, dim: usize) -> Sample {
        let params = sample_chair(seed);
        Sample {
            id: seed as usize,
            shape: voxelize(&params, dim).unwrap(),
            landmarks: Some(analytic_landmarks(&params)),
            params: Some(params),
            clipped: false,
        }
    }

    #[test]
    fn augment_identity_is_identity() {
        let s = make_sample(3, 32);
        let out = augment_scale(&s, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(out.shape, s.shape);
        assert_eq!(out.landmarks, s.landmarks);
        assert!(!out.clipped);
    }

    #[test]
    fn augment_moves_landmarks_by_the_affine_map() {
        let mut s = make_sample(4, 32);
        let mut pts = [[0.5; 3]; N_LANDMARKS];
        pts[0] = [0.5, 0.5, 0.8];
        s.landmarks = Some(LandmarkSet::new(pts));
        let out = augment_scale(&s, 1.0, 1.0, 1.25).unwrap();
        let p = out.landmarks.unwrap().point(0);
        assert!((p[2] - 0.875).abs() < 1e-12, "z = {}", p[2]);
    }

    #[test]
    fn augment_roundtrip_keeps_most_occupancy() {
        for (seed, f) in [(5u64, 0.8f64), (6, 1.2), (7, 1.1), (8, 0.9)] {
            let s = make_sample(seed, 32);
            let fwd = augment_scale(&s, f, f, f).unwrap();
            let back = augment_scale(&fwd, 1.0 / f, 1.0 / f, 1.0 / f).unwrap();
            let overlap = iou(&back.shape, &s.shape, 0.5).unwrap();
            assert!(overlap >= 0.85, "seed {seed} factor {f}: round-trip IoU {overlap}");
        }
    }

    #[test]
    fn augment_flags_clipping() {
        let s = make_sample(9, 32);
        // Strong upscale pushes the widest chairs outside the box.
        let out = augment_scale(&s, 1.29, 1.29, 1.29).unwrap();
        let widest = s.params.unwrap().seat_width.max(s.params.unwrap().seat_depth);
        if 0.5 + (widest / 2.0 + 0.45 - 0.5) * 1.29 > 1.0 {
            assert!(out.clipped);
        }
        // Downscaling never clips.
        let out = augment_scale(&s, 0.8, 0.8, 0.8).unwrap();
        assert!(!out.clipped);
    }

    #[test]
    fn sparsify_levels_zero_and_one() {
        let s = make_sample(10, 32);
        assert_eq!(sparsify(&s.shape, 0.0, 1).unwrap(), s.shape);
        let empty = sparsify(&s.shape, 1.0, 1).unwrap();
        assert_eq!(empty.occupied_count(0.5), 0);
    }

    #[test]
    fn sparsify_survival_concentrates_at_half() {
        let mut grid = VoxelGrid::new(16);
        for v in grid.values_mut() {
            *v = 1.0;
        }
        let n = grid.occupied_count(0.5);
        assert!(n >= 1000);
        let out = sparsify(&grid, 0.5, 3).unwrap();
        let frac = out.occupied_count(0.5) as f64 / n as f64;
        assert!((0.45..=0.55).contains(&frac), "survival {frac}");
    }

    #[test]
    fn sparsify_composes_like_a_single_pass() {
        // Survival of two passes (a then b) matches one pass at
        // 1-(1-a)(1-b) in expectation, within ±0.02 over 100 grids.
        let (a, b) = (0.3, 0.4);
        let combined = 1.0 - (1.0 - a) * (1.0 - b);
        let mut two_pass = 0.0;
        let mut one_pass = 0.0;
        let mut total = 0.0;
        for seed in 0..100u64 {
            let s = make_sample(seed + 200, 16);
            let n = s.shape.occupied_count(0.5) as f64;
            let ab = sparsify(&sparsify(&s.shape, a, seed * 2).unwrap(), b, seed * 2 + 1).unwrap();
            let single = sparsify(&s.shape, combined, seed + 7_000).unwrap();
            two_pass += ab.occupied_count(0.5) as f64;
            one_pass += single.occupied_count(0.5) as f64;
            total += n;
        }
        let diff = (two_pass / total - one_pass / total).abs();
        assert!(diff <= 0.02, "survival rates differ by {diff}");
    }

    #[test]
    fn dilate_identity_kernel_and_monotonicity() {
        let mut grid = VoxelGrid::new(16);
        grid.set(8, 8, 8, 1.0);
        assert_eq!(dilate(&grid, 0), grid);
        let once = dilate(&grid, 1);
        assert_eq!(once.occupied_count(0.5), 7, "center plus six face neighbors");
        let s = make_sample(12, 16);
        let grown = dilate(&s.shape, 1);
        for i in 0..s.shape.values().len() {
            assert!(grown.values()[i] >= s.shape.values()[i]);
        }
    }

    #[test]
    fn crop_removes_a_slab() {
        let s = make_sample(13, 32);
        let cropped = crop_box(&s.shape, 2, 1.0 / 3.0, CropSide::Low).unwrap();
        let layers = (32.0 / 3.0f64).floor() as usize;
        for z in 0..layers {
            for y in 0..32 {
                for x in 0..32 {
                    assert_eq!(cropped.get(x, y, z), 0.0);
                }
            }
        }
        assert!(crop_box(&s.shape, 2, 0.5, CropSide::Low).is_err());
    }

    #[test]
    fn split_arithmetic_and_determinism() {
        let s = make_split(1000, 0.2, 0.24, 9).unwrap();
        assert_eq!(s.train.len(), 800);
        assert_eq!(s.test.len(), 200);
        assert_eq!(s.annotated_train.len(), 192);
        assert_eq!(s.annotated_test.len(), 48);
        assert!(s.annotated_train.iter().all(|i| s.train.contains(i)));
        assert!(s.test.iter().all(|i| !s.train.contains(i)));

        assert_eq!(s, make_split(1000, 0.2, 0.24, 9).unwrap());
        let other = make_split(1000, 0.2, 0.24, 10).unwrap();
        assert_eq!(other.train.len(), 800);
        assert_ne!(s.train, other.train);

        // Too small for a non-empty annotated set.
        assert!(make_split(10, 0.2, 0.01, 1).is_err());
        // Zero annotated fraction is allowed.
        let zero = make_split(100, 0.2, 0.0, 1).unwrap();
        assert!(zero.annotated_train.is_empty() && zero.annotated_test.is_empty());
    }

    #[test]
    fn generate_dataset_is_pure_in_seed_and_config() {
        let a = generate_dataset(20, 16, 5, 0.2, 0.25, false).unwrap();
        let b = generate_dataset(20, 16, 5, 0.2, 0.25, false).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.split, b.split);
        let c = generate_dataset(20, 16, 6, 0.2, 0.25, false).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn augment_factors_stay_in_range() {
        let mut rng = stream_rng(1, "test/aug", 0, 0);
        for _ in 0..1000 {
            for f in augment_factors(&mut rng) {
                assert!((0.7..1.3).contains(&f));
            }
        }
    }
}

