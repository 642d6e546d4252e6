//! Gradient tape: an ordered record of primitive operations.
//!
//! Ops are recorded in execution order; [`Tape::backward`] consumes the tape
//! (enforced by move) and visits nodes in exact reverse order, accumulating
//! gradients into every watched leaf that requires them. Constants are simply
//! tensors without a node handle; no gradient ever flows into them.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::conv::{
    conv3d_forward, conv3d_input_grad, conv3d_kernel_grad, conv_out_size,
    conv_transpose_out_size, maxpool3d_forward, ConvGeom, Dims5,
};
use super::{ensure_finite, Tensor};
use crate::error::{Error, Result};

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef {
    tape: u64,
    index: usize,
}

/// Elementwise activation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Parameters of the shape-structure consistency loss.
#[derive(Debug, Clone, Copy)]
pub struct ConsistencySpec {
    /// Grid resolution D.
    pub dim: usize,
    /// Gaussian width in voxel units.
    pub sigma: f64,
    /// Truncation radius in voxel units.
    pub trunc: f64,
    /// Guard added to M before taking the reciprocal.
    pub eps: f64,
}

/// Result of the truncated-Gaussian ball search around one landmark.
#[derive(Debug, Clone, Copy)]
pub struct ConsistencyHit {
    /// Argmax voxel (x, y, z).
    pub voxel: [usize; 3],
    /// Gaussian weight at the argmax voxel.
    pub weight: f64,
    /// Grid value at the argmax voxel.
    pub value: f64,
    /// Landmark position in voxel space after clamping to the grid box.
    pub point: [f64; 3],
    /// Per-axis flag: true when the coordinate was not clamped, so gradient
    /// may flow back into the landmark along that axis.
    pub free: [bool; 3],
}

/// Finds the highest Gaussian-weighted voxel within `trunc` of the landmark.
///
/// `point_norm` is in normalized [0,1]-ish units (values outside are clamped
/// to the grid box in voxel space first). Returns `None` only when no voxel
/// center lies within the truncation radius.
pub(crate) fn consistency_search(
    grid: &[f64],
    dim: usize,
    point_norm: [f64; 3],
    sigma: f64,
    trunc: f64,
) -> Option<ConsistencyHit> {
    let d = dim as f64;
    let mut point = [0.0f64; 3];
    let mut free = [false; 3];
    for a in 0..3 {
        let raw = point_norm[a] * d - 0.5;
        free[a] = raw > 0.0 && raw < d - 1.0;
        point[a] = raw.clamp(0.0, d - 1.0);
    }
    let lo = |a: usize| (point[a] - trunc).ceil().max(0.0) as usize;
    let hi = |a: usize| (point[a] + trunc).floor().min(d - 1.0) as usize;
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    let trunc_sq = trunc * trunc;

    let mut best: Option<ConsistencyHit> = None;
    let mut best_m = f64::NEG_INFINITY;
    for z in lo(2)..=hi(2) {
        let dz = z as f64 - point[2];
        for y in lo(1)..=hi(1) {
            let dy = y as f64 - point[1];
            for x in lo(0)..=hi(0) {
                let dx = x as f64 - point[0];
                let dist_sq = dx * dx + dy * dy + dz * dz;
                if dist_sq > trunc_sq {
                    continue;
                }
                let weight = (-dist_sq * inv_two_sigma_sq).exp();
                let value = grid[x + y * dim + z * dim * dim];
                let m = value * weight;
                if m > best_m {
                    best_m = m;
                    best = Some(ConsistencyHit {
                        voxel: [x, y, z],
                        weight,
                        value,
                        point,
                        free,
                    });
                }
            }
        }
    }
    best
}

enum Op {
    Leaf,
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    Sum(Tensor),
    Mean(Tensor),
    Reshape(Tensor),
    Relu(Tensor),
    Sigmoid(Tensor),
    Dense {
        x: Tensor,
        w: Tensor,
        b: Tensor,
    },
    BiasChannel {
        x: Tensor,
        b: Tensor,
    },
    Conv3d {
        x: Tensor,
        k: Tensor,
        geom: ConvGeom,
    },
    ConvTranspose3d {
        x: Tensor,
        k: Tensor,
        geom: ConvGeom,
    },
    MaxPool3d {
        x: Tensor,
        argmax: Vec<usize>,
    },
    Reparameterize {
        mu: Tensor,
        logvar: Tensor,
        noise: Tensor,
    },
    MulMask {
        x: Tensor,
        mask: Tensor,
    },
    ChannelNorm {
        x: Tensor,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        group: usize,
    },
    Bce {
        pred: Tensor,
        target: Tensor,
    },
    GaussianKl {
        mu: Tensor,
        logvar: Tensor,
    },
    LandmarkDistance {
        pred: Tensor,
        truth: Tensor,
    },
    Consistency {
        grid: Tensor,
        landmarks: Tensor,
        spec: ConsistencySpec,
        hits: Vec<Option<ConsistencyHit>>,
        m_per_item: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Reshape(..) => "reshape",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Dense { .. } => "dense",
            Op::BiasChannel { .. } => "bias_channel",
            Op::Conv3d { .. } => "conv3d",
            Op::ConvTranspose3d { .. } => "conv_transpose3d",
            Op::MaxPool3d { .. } => "maxpool3d",
            Op::Reparameterize { .. } => "reparameterize",
            Op::MulMask { .. } => "mul_mask",
            Op::ChannelNorm { .. } => "channel_norm",
            Op::Bce { .. } => "bce_loss",
            Op::GaussianKl { .. } => "gaussian_kl",
            Op::LandmarkDistance { .. } => "landmark_distance",
            Op::Consistency { .. } => "consistency_loss",
        }
    }
}

struct Node {
    op: Op,
    out: Tensor,
    tracked: bool,
}

/// Ordered record of primitive operations; one backward pass consumes it.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

/// Per-leaf gradient buffers produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient buffer of a watched tensor, if one was accumulated.
    pub fn wrt(&self, t: &Tensor) -> Option<&[f64]> {
        let node = t.node()?;
        if node.tape != self.tape {
            return None;
        }
        self.slots.get(node.index)?.as_deref()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            id: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a tensor as a leaf on this tape. The returned copy carries
    /// the node handle; gradients accumulate for it iff `requires_grad`.
    pub fn watch(&mut self, t: &Tensor) -> Tensor {
        let tracked = t.requires_grad();
        let mut copy = t.clone();
        copy = copy.with_node(
            NodeRef {
                tape: self.id,
                index: self.nodes.len(),
            },
            tracked,
        );
        self.nodes.push(Node {
            op: Op::Leaf,
            out: copy.clone(),
            tracked,
        });
        copy
    }

    // A node handle is meaningful only on the tape that recorded it; on any
    // other tape the tensor participates as a constant.
    fn is_tracked(&self, t: &Tensor) -> bool {
        match t.node() {
            Some(node) if node.tape == self.id => self.nodes[node.index].tracked,
            _ => false,
        }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>, tracked: bool) -> Tensor {
        let out = Tensor::from_vec(shape, data)
            .expect("op produced data inconsistent with its shape")
            .with_node(
                NodeRef {
                    tape: self.id,
                    index: self.nodes.len(),
                },
                tracked,
            );
        self.nodes.push(Node {
            op,
            out: out.clone(),
            tracked,
        });
        out
    }

    fn same_shape(&self, op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.same_shape("add", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let tracked = self.is_tracked(a) || self.is_tracked(b);
        Ok(self.push(Op::Add(a.clone(), b.clone()), a.shape().to_vec(), data, tracked))
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.same_shape("sub", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        let tracked = self.is_tracked(a) || self.is_tracked(b);
        Ok(self.push(Op::Sub(a.clone(), b.clone()), a.shape().to_vec(), data, tracked))
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.same_shape("mul", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let tracked = self.is_tracked(a) || self.is_tracked(b);
        Ok(self.push(Op::Mul(a.clone(), b.clone()), a.shape().to_vec(), data, tracked))
    }

    pub fn scale(&mut self, x: &Tensor, c: f64) -> Tensor {
        let data = x.data().iter().map(|v| v * c).collect();
        let tracked = self.is_tracked(x);
        self.push(Op::Scale(x.clone(), c), x.shape().to_vec(), data, tracked)
    }

    pub fn sum(&mut self, x: &Tensor) -> Tensor {
        let total = x.data().iter().sum();
        let tracked = self.is_tracked(x);
        self.push(Op::Sum(x.clone()), vec![1], vec![total], tracked)
    }

    pub fn mean(&mut self, x: &Tensor) -> Tensor {
        let total: f64 = x.data().iter().sum();
        let tracked = self.is_tracked(x);
        let n = x.len().max(1) as f64;
        self.push(Op::Mean(x.clone()), vec![1], vec![total / n], tracked)
    }

    pub fn reshape(&mut self, x: &Tensor, shape: Vec<usize>) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if expect != x.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: x.shape().to_vec(),
                right: shape,
            });
        }
        let tracked = self.is_tracked(x);
        Ok(self.push(Op::Reshape(x.clone()), shape, x.data().to_vec(), tracked))
    }

    pub fn activation(&mut self, x: &Tensor, kind: Activation) -> Tensor {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::Sigmoid => self.sigmoid(x),
        }
    }

    pub fn relu(&mut self, x: &Tensor) -> Tensor {
        let data = x.data().iter().map(|v| v.max(0.0)).collect();
        let tracked = self.is_tracked(x);
        self.push(Op::Relu(x.clone()), x.shape().to_vec(), data, tracked)
    }

    /// Numerically stable logistic; output clamped into the open unit interval.
    pub fn sigmoid(&mut self, x: &Tensor) -> Tensor {
        let data = x
            .data()
            .iter()
            .map(|&v| {
                let s = if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                };
                s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
            })
            .collect();
        let tracked = self.is_tracked(x);
        self.push(Op::Sigmoid(x.clone()), x.shape().to_vec(), data, tracked)
    }

    /// Fully connected layer: `y = x·w + b` with `x: [B,I]`, `w: [I,O]`, `b: [O]`.
    pub fn dense(&mut self, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || w.shape().len() != 2 || x.shape()[1] != w.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "dense",
                left: x.shape().to_vec(),
                right: w.shape().to_vec(),
            });
        }
        let (batch, inputs) = (x.shape()[0], x.shape()[1]);
        let outputs = w.shape()[1];
        if b.shape() != [outputs] {
            return Err(Error::ShapeMismatch {
                op: "dense bias",
                left: b.shape().to_vec(),
                right: vec![outputs],
            });
        }
        let xd = x.data();
        let wd = w.data();
        let bd = b.data();
        let mut data = vec![0.0; batch * outputs];
        for bi in 0..batch {
            let row = &xd[bi * inputs..(bi + 1) * inputs];
            let out_row = &mut data[bi * outputs..(bi + 1) * outputs];
            out_row.copy_from_slice(bd);
            for (i, &xv) in row.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wrow = &wd[i * outputs..(i + 1) * outputs];
                for (o, &wv) in wrow.iter().enumerate() {
                    out_row[o] += xv * wv;
                }
            }
        }
        let tracked = self.is_tracked(x) || self.is_tracked(w) || self.is_tracked(b);
        Ok(self.push(
            Op::Dense {
                x: x.clone(),
                w: w.clone(),
                b: b.clone(),
            },
            vec![batch, outputs],
            data,
            tracked,
        ))
    }

    /// Adds a per-channel bias to a `[B, C, ...]` tensor.
    pub fn bias_channel(&mut self, x: &Tensor, b: &Tensor) -> Result<Tensor> {
        if x.shape().len() < 2 || b.shape() != [x.shape()[1]] {
            return Err(Error::ShapeMismatch {
                op: "bias_channel",
                left: x.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let channels = x.shape()[1];
        let spatial: usize = x.shape()[2..].iter().product();
        let bd = b.data();
        let mut data = x.data().to_vec();
        for chunk in data.chunks_mut(channels * spatial) {
            for c in 0..channels {
                let bias = bd[c];
                for v in &mut chunk[c * spatial..(c + 1) * spatial] {
                    *v += bias;
                }
            }
        }
        let tracked = self.is_tracked(x) || self.is_tracked(b);
        Ok(self.push(
            Op::BiasChannel {
                x: x.clone(),
                b: b.clone(),
            },
            x.shape().to_vec(),
            data,
            tracked,
        ))
    }

    /// 3-D cross-correlation of `x: [B,C,D,H,W]` with `k: [F,C,K,K,K]`.
    pub fn conv3d(&mut self, x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let geom = ConvGeom { stride, pad };
        let xd = Dims5::from_shape(x.shape(), "conv3d input")?;
        let kd = Dims5::from_shape(k.shape(), "conv3d kernel")?;
        if kd.n1 != xd.n1 {
            return Err(Error::ShapeMismatch {
                op: "conv3d channels",
                left: x.shape().to_vec(),
                right: k.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::Config("conv3d: stride must be positive".into()));
        }
        let mut os = [0usize; 3];
        for a in 0..3 {
            os[a] = conv_out_size(xd.s[a], kd.s[a], geom)?;
        }
        let od = Dims5 {
            n0: xd.n0,
            n1: kd.n0,
            s: os,
        };
        let data = conv3d_forward(x.data(), xd, k.data(), kd, geom, od);
        let tracked = self.is_tracked(x) || self.is_tracked(k);
        Ok(self.push(
            Op::Conv3d {
                x: x.clone(),
                k: k.clone(),
                geom,
            },
            vec![od.n0, od.n1, od.s[0], od.s[1], od.s[2]],
            data,
            tracked,
        ))
    }

    /// Exact adjoint of [`Tape::conv3d`] with identical stride/pad.
    ///
    /// Maps `x: [B,F,D',H',W']` through `k: [F,C,K,K,K]` back to the
    /// corresponding convolution input shape.
    pub fn conv_transpose3d(
        &mut self,
        x: &Tensor,
        k: &Tensor,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        let geom = ConvGeom { stride, pad };
        let xd = Dims5::from_shape(x.shape(), "conv_transpose3d input")?;
        let kd = Dims5::from_shape(k.shape(), "conv_transpose3d kernel")?;
        if kd.n0 != xd.n1 {
            return Err(Error::ShapeMismatch {
                op: "conv_transpose3d channels",
                left: x.shape().to_vec(),
                right: k.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::Config(
                "conv_transpose3d: stride must be positive".into(),
            ));
        }
        let mut os = [0usize; 3];
        for a in 0..3 {
            os[a] = conv_transpose_out_size(xd.s[a], kd.s[a], geom)?;
        }
        let od = Dims5 {
            n0: xd.n0,
            n1: kd.n1,
            s: os,
        };
        let data = conv3d_input_grad(x.data(), xd, k.data(), kd, geom, od);
        let tracked = self.is_tracked(x) || self.is_tracked(k);
        Ok(self.push(
            Op::ConvTranspose3d {
                x: x.clone(),
                k: k.clone(),
                geom,
            },
            vec![od.n0, od.n1, od.s[0], od.s[1], od.s[2]],
            data,
            tracked,
        ))
    }

    /// Max over non-overlapping cubic windows; ties go to the lowest index.
    pub fn maxpool3d(&mut self, x: &Tensor, window: usize) -> Result<Tensor> {
        let xd = Dims5::from_shape(x.shape(), "maxpool3d input")?;
        if window == 0 || xd.s.iter().any(|s| s % window != 0) {
            return Err(Error::Config(format!(
                "maxpool3d: spatial dims {:?} not divisible by window {window}",
                xd.s
            )));
        }
        let od = Dims5 {
            n0: xd.n0,
            n1: xd.n1,
            s: [xd.s[0] / window, xd.s[1] / window, xd.s[2] / window],
        };
        let (data, argmax) = maxpool3d_forward(x.data(), xd, window, od);
        let tracked = self.is_tracked(x);
        Ok(self.push(
            Op::MaxPool3d {
                x: x.clone(),
                argmax,
            },
            vec![od.n0, od.n1, od.s[0], od.s[1], od.s[2]],
            data,
            tracked,
        ))
    }

    /// `z = mu + exp(0.5·logvar) · noise`; gradients reach mu and logvar only.
    pub fn reparameterize(
        &mut self,
        mu: &Tensor,
        logvar: &Tensor,
        noise: &Tensor,
    ) -> Result<Tensor> {
        self.same_shape("reparameterize", mu, logvar)?;
        self.same_shape("reparameterize noise", mu, noise)?;
        let data: Vec<f64> = mu
            .data()
            .iter()
            .zip(logvar.data())
            .zip(noise.data())
            .map(|((&m, &lv), &n)| m + (0.5 * lv).exp() * n)
            .collect();
        ensure_finite(&data, "reparameterize")?;
        let tracked = self.is_tracked(mu) || self.is_tracked(logvar);
        Ok(self.push(
            Op::Reparameterize {
                mu: mu.clone(),
                logvar: logvar.clone(),
                noise: noise.clone(),
            },
            mu.shape().to_vec(),
            data,
            tracked,
        ))
    }

    /// Elementwise multiply by a constant mask (dropout's deterministic core).
    pub fn apply_mask(&mut self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        self.same_shape("apply_mask", x, mask)?;
        let data = x
            .data()
            .iter()
            .zip(mask.data())
            .map(|(v, m)| v * m)
            .collect();
        let tracked = self.is_tracked(x);
        Ok(self.push(
            Op::MulMask {
                x: x.clone(),
                mask: mask.clone(),
            },
            x.shape().to_vec(),
            data,
            tracked,
        ))
    }

    /// Inverted dropout: zeroes with probability `rate`, scales survivors by
    /// `1/(1-rate)`. Draws the mask from `rng` at record time.
    pub fn dropout(&mut self, x: &Tensor, rate: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0,1)")));
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect();
        let mask = Tensor::from_vec(x.shape().to_vec(), mask)?;
        self.apply_mask(x, &mask)
    }

    /// Per-channel standardization over batch and spatial positions of a
    /// `[B, C, ...]` tensor. Stateless: statistics come from the current batch.
    pub fn channel_norm(&mut self, x: &Tensor, eps: f64) -> Result<Tensor> {
        if x.shape().len() < 2 {
            return Err(Error::Config(
                "channel_norm expects a [B, C, ...] tensor".into(),
            ));
        }
        let batch = x.shape()[0];
        let channels = x.shape()[1];
        let spatial: usize = x.shape()[2..].iter().product();
        let group = batch * spatial;
        let xd = x.data();
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; channels];
        for c in 0..channels {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for b in 0..batch {
                let base = (b * channels + c) * spatial;
                for &v in &xd[base..base + spatial] {
                    sum += v;
                    sum_sq += v * v;
                }
            }
            let mean = sum / group as f64;
            let var = (sum_sq / group as f64 - mean * mean).max(0.0);
            let r = 1.0 / (var + eps).sqrt();
            inv_std[c] = r;
            for b in 0..batch {
                let base = (b * channels + c) * spatial;
                for i in base..base + spatial {
                    xhat[i] = (xd[i] - mean) * r;
                }
            }
        }
        ensure_finite(&xhat, "channel_norm")?;
        let tracked = self.is_tracked(x);
        Ok(self.push(
            Op::ChannelNorm {
                x: x.clone(),
                xhat: xhat.clone(),
                inv_std,
                group,
            },
            x.shape().to_vec(),
            xhat,
            tracked,
        ))
    }

    /// Binary cross-entropy summed per item, averaged over the batch (first
    /// dim). Predictions are clamped to `[1e-7, 1-1e-7]`; the target receives
    /// no gradient.
    pub fn bce_loss(&mut self, pred: &Tensor, target: &Tensor) -> Result<Tensor> {
        self.same_shape("bce_loss", pred, target)?;
        let batch = pred.shape().first().copied().unwrap_or(1).max(1);
        let mut total = 0.0;
        for (&p, &t) in pred.data().iter().zip(target.data()) {
            let p = clamp_prob(p);
            total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        }
        let loss = total / batch as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric("bce_loss produced non-finite value".into()));
        }
        let tracked = self.is_tracked(pred);
        Ok(self.push(
            Op::Bce {
                pred: pred.clone(),
                target: target.clone(),
            },
            vec![1],
            vec![loss],
            tracked,
        ))
    }

    /// Closed-form KL(N(mu, exp(logvar)) || N(0, 1)), summed over latent dims
    /// and averaged over the batch (first dim).
    pub fn gaussian_kl(&mut self, mu: &Tensor, logvar: &Tensor) -> Result<Tensor> {
        self.same_shape("gaussian_kl", mu, logvar)?;
        let batch = mu.shape().first().copied().unwrap_or(1).max(1);
        let mut total = 0.0;
        for (&m, &lv) in mu.data().iter().zip(logvar.data()) {
            total += 0.5 * (m * m + lv.exp() - 1.0 - lv);
        }
        let loss = total / batch as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(
                "gaussian_kl produced non-finite value".into(),
            ));
        }
        let tracked = self.is_tracked(mu) || self.is_tracked(logvar);
        Ok(self.push(
            Op::GaussianKl {
                mu: mu.clone(),
                logvar: logvar.clone(),
            },
            vec![1],
            vec![loss],
            tracked,
        ))
    }

    /// Mean Euclidean distance between `(x,y,z)` triples of `[B, 3N]`
    /// landmark tensors, averaged over landmarks and batch.
    pub fn landmark_distance(&mut self, pred: &Tensor, truth: &Tensor) -> Result<Tensor> {
        self.same_shape("landmark_distance", pred, truth)?;
        if pred.shape().len() != 2 || pred.shape()[1] % 3 != 0 {
            return Err(Error::Config(format!(
                "landmark_distance expects [B, 3N], got {:?}",
                pred.shape()
            )));
        }
        let batch = pred.shape()[0];
        let n = pred.shape()[1] / 3;
        let mut total = 0.0;
        for (p, t) in pred.data().chunks(3).zip(truth.data().chunks(3)) {
            let d = ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2) + (p[2] - t[2]).powi(2)).sqrt();
            total += d;
        }
        let loss = total / (batch * n) as f64;
        let tracked = self.is_tracked(pred) || self.is_tracked(truth);
        Ok(self.push(
            Op::LandmarkDistance {
                pred: pred.clone(),
                truth: truth.clone(),
            },
            vec![1],
            vec![loss],
            tracked,
        ))
    }

    /// Shape-structure consistency loss: mean over the batch of
    /// `1 / (M + eps)` where `M` sums, per landmark, the highest
    /// Gaussian-weighted grid value within the truncation ball.
    ///
    /// The argmax voxel is held fixed during backward (as in max-pooling):
    /// gradient reaches the grid at that voxel and the landmark through the
    /// Gaussian weight there.
    pub fn consistency_loss(
        &mut self,
        grid: &Tensor,
        landmarks: &Tensor,
        spec: ConsistencySpec,
    ) -> Result<Tensor> {
        if landmarks.shape().len() != 2 || landmarks.shape()[1] % 3 != 0 {
            return Err(Error::Config(format!(
                "consistency_loss expects landmarks [B, 3N], got {:?}",
                landmarks.shape()
            )));
        }
        let batch = landmarks.shape()[0];
        let n_landmarks = landmarks.shape()[1] / 3;
        let voxels = spec.dim * spec.dim * spec.dim;
        if grid.len() != batch * voxels {
            return Err(Error::ShapeMismatch {
                op: "consistency_loss grid",
                left: grid.shape().to_vec(),
                right: vec![batch, voxels],
            });
        }
        if spec.sigma <= 0.0 || spec.trunc <= 0.0 || spec.eps <= 0.0 {
            return Err(Error::Config(format!(
                "consistency_loss: sigma/trunc/eps must be positive, got {}/{}/{}",
                spec.sigma, spec.trunc, spec.eps
            )));
        }

        let gd = grid.data();
        let ld = landmarks.data();
        let mut hits = Vec::with_capacity(batch * n_landmarks);
        let mut m_per_item = Vec::with_capacity(batch);
        let mut loss = 0.0;
        for b in 0..batch {
            let item = &gd[b * voxels..(b + 1) * voxels];
            let mut m = 0.0;
            for k in 0..n_landmarks {
                let p = [
                    ld[b * 3 * n_landmarks + 3 * k],
                    ld[b * 3 * n_landmarks + 3 * k + 1],
                    ld[b * 3 * n_landmarks + 3 * k + 2],
                ];
                let hit = consistency_search(item, spec.dim, p, spec.sigma, spec.trunc);
                if let Some(h) = &hit {
                    m += h.value * h.weight;
                }
                hits.push(hit);
            }
            m_per_item.push(m);
            loss += 1.0 / (m + spec.eps);
        }
        let loss = loss / batch as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(
                "consistency_loss produced non-finite value".into(),
            ));
        }
        let tracked = self.is_tracked(grid) || self.is_tracked(landmarks);
        Ok(self.push(
            Op::Consistency {
                grid: grid.clone(),
                landmarks: landmarks.clone(),
                spec,
                hits,
                m_per_item,
            },
            vec![1],
            vec![loss],
            tracked,
        ))
    }

    /// Runs reverse-mode accumulation from a scalar loss, consuming the tape.
    pub fn backward(self, loss: &Tensor) -> Result<Gradients> {
        let node = loss.node().ok_or_else(|| {
            Error::Config("backward: loss tensor was not recorded on a tape".into())
        })?;
        if node.tape != self.id {
            return Err(Error::Config(
                "backward: loss tensor belongs to a different tape".into(),
            ));
        }
        if loss.len() != 1 {
            return Err(Error::Config(format!(
                "backward: loss must be scalar, got shape {:?}",
                loss.shape()
            )));
        }

        let mut slots: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        slots[node.index] = Some(vec![1.0]);

        for idx in (0..=node.index).rev() {
            if !self.nodes[idx].tracked || matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let Some(g) = slots[idx].take() else { continue };
            self.propagate(idx, &g, &mut slots)?;
        }

        Ok(Gradients {
            tape: self.id,
            slots,
        })
    }

    fn propagate(
        &self,
        idx: usize,
        g: &[f64],
        slots: &mut Vec<Option<Vec<f64>>>,
    ) -> Result<()> {
        let node = &self.nodes[idx];
        let mut sink = |tape: &Tape, t: &Tensor, contribution: Vec<f64>| -> Result<()> {
            let Some(nr) = t.node() else { return Ok(()) };
            if nr.tape != tape.id || !tape.nodes[nr.index].tracked {
                return Ok(());
            }
            if let Some(i) = contribution.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "NaN/Inf gradient at element {i} flowing from node {idx} ({})",
                    tape.nodes[idx].op.name()
                )));
            }
            match &mut slots[nr.index] {
                Some(acc) => {
                    for (a, c) in acc.iter_mut().zip(contribution) {
                        *a += c;
                    }
                }
                slot => *slot = Some(contribution),
            }
            Ok(())
        };

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                sink(self, a, g.to_vec())?;
                sink(self, b, g.to_vec())?;
            }
            Op::Sub(a, b) => {
                sink(self, a, g.to_vec())?;
                sink(self, b, g.iter().map(|v| -v).collect())?;
            }
            Op::Mul(a, b) => {
                sink(self, a, g.iter().zip(b.data()).map(|(gv, bv)| gv * bv).collect())?;
                sink(self, b, g.iter().zip(a.data()).map(|(gv, av)| gv * av).collect())?;
            }
            Op::Scale(x, c) => {
                sink(self, x, g.iter().map(|v| v * c).collect())?;
            }
            Op::Sum(x) => {
                sink(self, x, vec![g[0]; x.len()])?;
            }
            Op::Mean(x) => {
                let n = x.len().max(1) as f64;
                sink(self, x, vec![g[0] / n; x.len()])?;
            }
            Op::Reshape(x) => {
                sink(self, x, g.to_vec())?;
            }
            Op::Relu(x) => {
                let dx = x
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                sink(self, x, dx)?;
            }
            Op::Sigmoid(x) => {
                let y = node.out.data();
                let dx = y.iter().zip(g).map(|(&yv, &gv)| gv * yv * (1.0 - yv)).collect();
                sink(self, x, dx)?;
            }
            Op::Dense { x, w, b } => {
                let (batch, inputs) = (x.shape()[0], x.shape()[1]);
                let outputs = w.shape()[1];
                let xd = x.data();
                let wd = w.data();
                if self.is_tracked(x) {
                    let mut dx = vec![0.0; batch * inputs];
                    for bi in 0..batch {
                        let grow = &g[bi * outputs..(bi + 1) * outputs];
                        for i in 0..inputs {
                            let wrow = &wd[i * outputs..(i + 1) * outputs];
                            let mut acc = 0.0;
                            for (o, &gv) in grow.iter().enumerate() {
                                acc += gv * wrow[o];
                            }
                            dx[bi * inputs + i] = acc;
                        }
                    }
                    sink(self, x, dx)?;
                }
                if self.is_tracked(w) {
                    let mut dw = vec![0.0; inputs * outputs];
                    for bi in 0..batch {
                        let grow = &g[bi * outputs..(bi + 1) * outputs];
                        let xrow = &xd[bi * inputs..(bi + 1) * inputs];
                        for (i, &xv) in xrow.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            let drow = &mut dw[i * outputs..(i + 1) * outputs];
                            for (o, &gv) in grow.iter().enumerate() {
                                drow[o] += xv * gv;
                            }
                        }
                    }
                    sink(self, w, dw)?;
                }
                if self.is_tracked(b) {
                    let mut db = vec![0.0; outputs];
                    for bi in 0..batch {
                        for (o, &gv) in g[bi * outputs..(bi + 1) * outputs].iter().enumerate() {
                            db[o] += gv;
                        }
                    }
                    sink(self, b, db)?;
                }
            }
            Op::BiasChannel { x, b } => {
                let channels = x.shape()[1];
                let spatial: usize = x.shape()[2..].iter().product();
                let mut db = vec![0.0; channels];
                for chunk in g.chunks(channels * spatial) {
                    for c in 0..channels {
                        db[c] += chunk[c * spatial..(c + 1) * spatial].iter().sum::<f64>();
                    }
                }
                sink(self, x, g.to_vec())?;
                sink(self, b, db)?;
            }
            Op::Conv3d { x, k, geom } => {
                let xd = Dims5::from_shape(x.shape(), "conv3d input")?;
                let kd = Dims5::from_shape(k.shape(), "conv3d kernel")?;
                let od = Dims5::from_shape(node.out.shape(), "conv3d output")?;
                if self.is_tracked(x) {
                    let dx = conv3d_input_grad(g, od, k.data(), kd, *geom, xd);
                    sink(self, x, dx)?;
                }
                if self.is_tracked(k) {
                    let dk = conv3d_kernel_grad(x.data(), xd, g, od, *geom, kd);
                    sink(self, k, dk)?;
                }
            }
            Op::ConvTranspose3d { x, k, geom } => {
                let xd = Dims5::from_shape(x.shape(), "conv_transpose3d input")?;
                let kd = Dims5::from_shape(k.shape(), "conv_transpose3d kernel")?;
                let od = Dims5::from_shape(node.out.shape(), "conv_transpose3d output")?;
                if self.is_tracked(x) {
                    let dx = conv3d_forward(g, od, k.data(), kd, *geom, xd);
                    sink(self, x, dx)?;
                }
                if self.is_tracked(k) {
                    // Kernel gradient with the roles of conv input/output swapped:
                    // here `g` lives on the convolution-input side and `x` on the
                    // convolution-output side.
                    let dk = conv3d_kernel_grad(g, od, x.data(), xd, *geom, kd);
                    sink(self, k, dk)?;
                }
            }
            Op::MaxPool3d { x, argmax } => {
                let mut dx = vec![0.0; x.len()];
                for (out_i, &in_i) in argmax.iter().enumerate() {
                    dx[in_i] += g[out_i];
                }
                sink(self, x, dx)?;
            }
            Op::Reparameterize { mu, logvar, noise } => {
                sink(self, mu, g.to_vec())?;
                let dlv = logvar
                    .data()
                    .iter()
                    .zip(noise.data())
                    .zip(g)
                    .map(|((&lv, &n), &gv)| gv * 0.5 * (0.5 * lv).exp() * n)
                    .collect();
                sink(self, logvar, dlv)?;
            }
            Op::MulMask { x, mask } => {
                let dx = g.iter().zip(mask.data()).map(|(gv, m)| gv * m).collect();
                sink(self, x, dx)?;
            }
            Op::ChannelNorm {
                x,
                xhat,
                inv_std,
                group,
            } => {
                let batch = x.shape()[0];
                let channels = x.shape()[1];
                let spatial: usize = x.shape()[2..].iter().product();
                let n = *group as f64;
                let mut dx = vec![0.0; x.len()];
                for c in 0..channels {
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for b in 0..batch {
                        let base = (b * channels + c) * spatial;
                        for i in base..base + spatial {
                            sum_g += g[i];
                            sum_gx += g[i] * xhat[i];
                        }
                    }
                    let mean_g = sum_g / n;
                    let mean_gx = sum_gx / n;
                    let r = inv_std[c];
                    for b in 0..batch {
                        let base = (b * channels + c) * spatial;
                        for i in base..base + spatial {
                            dx[i] = r * (g[i] - mean_g - xhat[i] * mean_gx);
                        }
                    }
                }
                sink(self, x, dx)?;
            }
            Op::Bce { pred, target } => {
                let batch = pred.shape().first().copied().unwrap_or(1).max(1) as f64;
                let scale = g[0] / batch;
                let dp = pred
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&p, &t)| {
                        if (1e-7..=1.0 - 1e-7).contains(&p) {
                            let p = clamp_prob(p);
                            scale * (p - t) / (p * (1.0 - p))
                        } else {
                            0.0
                        }
                    })
                    .collect();
                sink(self, pred, dp)?;
            }
            Op::GaussianKl { mu, logvar } => {
                let batch = mu.shape().first().copied().unwrap_or(1).max(1) as f64;
                let scale = g[0] / batch;
                let dmu = mu.data().iter().map(|&m| scale * m).collect();
                let dlv = logvar
                    .data()
                    .iter()
                    .map(|&lv| scale * 0.5 * (lv.exp() - 1.0))
                    .collect();
                sink(self, mu, dmu)?;
                sink(self, logvar, dlv)?;
            }
            Op::LandmarkDistance { pred, truth } => {
                let batch = pred.shape()[0];
                let n = pred.shape()[1] / 3;
                let scale = g[0] / (batch * n) as f64;
                let mut dp = vec![0.0; pred.len()];
                for (j, (p, t)) in pred
                    .data()
                    .chunks(3)
                    .zip(truth.data().chunks(3))
                    .enumerate()
                {
                    let dx = [p[0] - t[0], p[1] - t[1], p[2] - t[2]];
                    let d = (dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]).sqrt();
                    if d > 0.0 {
                        for a in 0..3 {
                            dp[3 * j + a] = scale * dx[a] / d;
                        }
                    }
                }
                let dt: Vec<f64> = dp.iter().map(|v| -v).collect();
                sink(self, pred, dp)?;
                sink(self, truth, dt)?;
            }
            Op::Consistency {
                grid,
                landmarks,
                spec,
                hits,
                m_per_item,
            } => {
                let batch = landmarks.shape()[0];
                let n_landmarks = landmarks.shape()[1] / 3;
                let voxels = spec.dim * spec.dim * spec.dim;
                let inv_sigma_sq = 1.0 / (spec.sigma * spec.sigma);
                let dim_f = spec.dim as f64;
                let mut dg = vec![0.0; grid.len()];
                let mut dl = vec![0.0; landmarks.len()];
                for b in 0..batch {
                    let m = m_per_item[b];
                    let coeff = -g[0] / (batch as f64 * (m + spec.eps) * (m + spec.eps));
                    for k in 0..n_landmarks {
                        let Some(hit) = &hits[b * n_landmarks + k] else { continue };
                        let flat = b * voxels
                            + hit.voxel[0]
                            + hit.voxel[1] * spec.dim
                            + hit.voxel[2] * spec.dim * spec.dim;
                        dg[flat] += coeff * hit.weight;
                        for a in 0..3 {
                            if hit.free[a] {
                                let delta = hit.voxel[a] as f64 - hit.point[a];
                                dl[b * 3 * n_landmarks + 3 * k + a] +=
                                    coeff * hit.value * hit.weight * delta * inv_sigma_sq * dim_f;
                            }
                        }
                    }
                }
                sink(self, grid, dg)?;
                sink(self, landmarks, dl)?;
            }
        }
        Ok(())
    }
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(1e-7, 1.0 - 1e-7)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn watch_tracked(tape: &mut Tape, shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        tape.watch(&Tensor::from_vec(shape, data).unwrap().tracked())
    }

    #[test]
    fn dense_identity_weights() {
        let mut tape = Tape::new();
        let x = watch_tracked(&mut tape, vec![1, 2], vec![1.0, 2.0]);
        let w = watch_tracked(&mut tape, vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = watch_tracked(&mut tape, vec![2], vec![0.0, 0.0]);
        let y = tape.dense(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn dense_hand_sum() {
        let mut tape = Tape::new();
        let x = watch_tracked(&mut tape, vec![1, 2], vec![1.0, 1.0]);
        let w = watch_tracked(&mut tape, vec![2, 1], vec![2.0, 3.0]);
        let b = watch_tracked(&mut tape, vec![1], vec![1.0]);
        let y = tape.dense(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn dense_shape_mismatch_reports_both_shapes() {
        let mut tape = Tape::new();
        let x = watch_tracked(&mut tape, vec![1, 3], vec![0.0; 3]);
        let w = watch_tracked(&mut tape, vec![2, 1], vec![0.0; 2]);
        let b = watch_tracked(&mut tape, vec![1], vec![0.0]);
        let err = tape.dense(&x, &w, &b).unwrap_err().to_string();
        assert!(err.contains("[1, 3]") && err.contains("[2, 1]"), "{err}");
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = watch_tracked(&mut tape, vec![3], vec![4.0, -1.0, 2.5]);
        let loss = tape.sum(&x);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_of_squares_is_twice_input() {
        let mut tape = Tape::new();
        let x = watch_tracked(&mut tape, vec![3], vec![1.0, -2.0, 0.5]);
        let sq = tape.mul(&x, &x).unwrap();
        let loss = tape.sum(&sq);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).unwrap(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = watch_tracked(&mut tape, vec![2], vec![1.0, 2.0]);
        let y = tape.relu(&x);
        assert!(tape.backward(&y).is_err());
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let mut tape = Tape::new();
        let x = watch_tracked(&mut tape, vec![3], vec![-1.0, 2.0, 0.0]);
        let r = tape.relu(&x);
        assert_eq!(r.data(), &[0.0, 2.0, 0.0]);
        let s = tape.sigmoid(&x);
        assert!((s.data()[2] - 0.5).abs() < 1e-15);
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn conv3d_all_ones_sums_to_27() {
        let mut tape = Tape::new();
        let x = watch_tracked(&mut tape, vec![1, 1, 3, 3, 3], vec![1.0; 27]);
        let k = watch_tracked(&mut tape, vec![1, 1, 3, 3, 3], vec![1.0; 27]);
        let y = tape.conv3d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1, 1]);
        assert_eq!(y.item(), 27.0);
    }

    #[test]
    fn conv3d_impulse_reproduces_kernel() {
        let mut tape = Tape::new();
        let mut x = vec![0.0; 125];
        x[2 * 25 + 2 * 5 + 2] = 1.0; // center of a 5^3 grid
        let x = watch_tracked(&mut tape, vec![1, 1, 5, 5, 5], x);
        let kvals: Vec<f64> = (0..27).map(|i| i as f64 + 1.0).collect();
        let k = watch_tracked(&mut tape, vec![1, 1, 3, 3, 3], kvals.clone());
        let y = tape.conv3d(&x, &k, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 5, 5, 5]);
        // Cross-correlation of a delta is the point-reflected kernel centered
        // on the impulse: y[c + d] = k[center - d].
        for a0 in 0..3 {
            for a1 in 0..3 {
                for a2 in 0..3 {
                    let out = y.data()[(a0 + 1) * 25 + (a1 + 1) * 5 + (a2 + 1)];
                    assert_eq!(out, kvals[(2 - a0) * 9 + (2 - a1) * 3 + (2 - a2)]);
                }
            }
        }

        // With a centrally symmetric kernel the reflection is invisible and
        // the output window equals the kernel itself.
        let mut tape = Tape::new();
        let mut x = vec![0.0; 125];
        x[2 * 25 + 2 * 5 + 2] = 1.0;
        let x = watch_tracked(&mut tape, vec![1, 1, 5, 5, 5], x);
        let sym: Vec<f64> = (0..27)
            .map(|i| {
                let (a0, a1, a2) = (i / 9, (i / 3) % 3, i % 3);
                ((a0 as f64 - 1.0).abs() + (a1 as f64 - 1.0).abs() + (a2 as f64 - 1.0).abs()) + 1.0
            })
            .collect();
        let k = watch_tracked(&mut tape, vec![1, 1, 3, 3, 3], sym.clone());
        let y = tape.conv3d(&x, &k, 1, 1).unwrap();
        for a0 in 0..3 {
            for a1 in 0..3 {
                for a2 in 0..3 {
                    let out = y.data()[(a0 + 1) * 25 + (a1 + 1) * 5 + (a2 + 1)];
                    assert_eq!(out, sym[a0 * 9 + a1 * 3 + a2]);
                }
            }
        }
    }

    #[test]
    fn conv3d_rejects_non_integral_output() {
        let mut tape = Tape::new();
        let x = watch_tracked(&mut tape, vec![1, 1, 4, 4, 4], vec![0.0; 64]);
        let k = watch_tracked(&mut tape, vec![1, 1, 3, 3, 3], vec![0.0; 27]);
        assert!(matches!(
            tape.conv3d(&x, &k, 2, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn conv_transpose_doubles_spatial_dims() {
        let mut tape = Tape::new();
        let x = watch_tracked(&mut tape, vec![1, 1, 3, 3, 3], vec![1.0; 27]);
        let k = watch_tracked(&mut tape, vec![1, 1, 2, 2, 2], vec![1.0; 8]);
        let y = tape.conv_transpose3d(&x, &k, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 6, 6, 6]);
        // Stride-2 with a 2^3 kernel tiles exactly: every output cell is 1.
        assert!(y.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn maxpool_takes_block_maxima_and_routes_ties_to_first() {
        let mut tape = Tape::new();
        let vals: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let x = watch_tracked(&mut tape, vec![1, 1, 4, 4, 4], vals);
        let y = tape.maxpool3d(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2, 2]);
        assert_eq!(y.data()[0], 21.0); // max of the first 2x2x2 block

        let mut tape = Tape::new();
        let x = watch_tracked(&mut tape, vec![1, 1, 2, 2, 2], vec![3.0; 8]);
        let y = tape.maxpool3d(&x, 2).unwrap();
        let loss = tape.sum(&y);
        let grads = tape.backward(&loss).unwrap();
        let gx = grads.wrt(&x).unwrap();
        assert_eq!(gx[0], 1.0, "tie must route to the lowest linear index");
        assert!(gx[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn maxpool_rejects_indivisible_dims() {
        let mut tape = Tape::new();
        let x = watch_tracked(&mut tape, vec![1, 1, 3, 3, 3], vec![0.0; 27]);
        assert!(matches!(tape.maxpool3d(&x, 2), Err(Error::Config(_))));
    }

    #[test]
    fn reparameterize_trivial_cases() {
        let mut tape = Tape::new();
        let mu = watch_tracked(&mut tape, vec![1, 2], vec![0.3, -0.7]);
        let lv = watch_tracked(&mut tape, vec![1, 2], vec![0.0, 0.0]);
        let zero_noise = Tensor::zeros(vec![1, 2]);
        let z = tape.reparameterize(&mu, &lv, &zero_noise).unwrap();
        assert_eq!(z.data(), mu.data());
        let one_noise = Tensor::full(vec![1, 2], 1.0);
        let z = tape.reparameterize(&mu, &lv, &one_noise).unwrap();
        assert!((z.data()[0] - 1.3).abs() < 1e-15);
        assert!((z.data()[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn gradients_do_not_flow_into_constants() {
        let mut tape = Tape::new();
        let x = watch_tracked(&mut tape, vec![2], vec![1.0, 2.0]);
        let c = Tensor::from_vec(vec![2], vec![5.0, 5.0]).unwrap();
        let y = tape.mul(&x, &c).unwrap();
        let loss = tape.sum(&y);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).unwrap(), &[5.0, 5.0]);
        assert!(grads.wrt(&c).is_none());
    }

    #[test]
    fn forward_values_are_deterministic() {
        let run = || {
            let mut tape = Tape::new();
            let x = watch_tracked(&mut tape, vec![1, 1, 4, 4, 4], (0..64).map(|i| (i as f64).sin()).collect());
            let k = watch_tracked(&mut tape, vec![2, 1, 3, 3, 3], (0..54).map(|i| (i as f64).cos()).collect());
            let y = tape.conv3d(&x, &k, 1, 1).unwrap();
            let s = tape.sigmoid(&y);
            let loss = tape.mean(&s);
            let grads = tape.backward(&loss).unwrap();
            (loss.item(), grads.wrt(&x).unwrap().to_vec(), grads.wrt(&k).unwrap().to_vec())
        };
        let (l1, gx1, gk1) = run();
        let (l2, gx2, gk2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(gx1, gx2);
        assert_eq!(gk1, gk2);
    }

    #[test]
    fn nan_gradient_is_reported_with_node_name() {
        let mut tape = Tape::new();
        let x = watch_tracked(&mut tape, vec![2], vec![1.0, f64::MAX]);
        let y = tape.mul(&x, &x).unwrap();
        let z = tape.mul(&y, &y).unwrap(); // overflows to inf
        let loss = tape.sum(&z);
        let err = tape.backward(&loss).unwrap_err().to_string();
        assert!(err.contains("NaN/Inf gradient"), "{err}");
    }
}
