//! Shared 3-D convolution kernels.
//!
//! `conv3d` is cross-correlation (no kernel flip). The transposed convolution
//! is its exact adjoint with identical stride/pad, so the input-gradient
//! kernel doubles as the transposed-convolution forward pass and vice versa.
//! All kernels parallelize over cells that they own exclusively, which keeps
//! results bit-identical regardless of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Stride/padding pair shared by `conv3d` and `conv_transpose3d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

/// `[B, C, S, S, S]` dims for activations, `[F, C, K, K, K]` for kernels.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Dims5 {
    pub n0: usize,
    pub n1: usize,
    pub s: [usize; 3],
}

impl Dims5 {
    pub fn from_shape(shape: &[usize], what: &'static str) -> Result<Dims5> {
        if shape.len() != 5 {
            return Err(Error::Config(format!(
                "{what} must be rank 5, got shape {shape:?}"
            )));
        }
        Ok(Dims5 {
            n0: shape[0],
            n1: shape[1],
            s: [shape[2], shape[3], shape[4]],
        })
    }

    pub fn len(&self) -> usize {
        self.n0 * self.n1 * self.s[0] * self.s[1] * self.s[2]
    }

    pub fn spatial(&self) -> usize {
        self.s[0] * self.s[1] * self.s[2]
    }
}

/// Output spatial size of conv3d, erroring when the geometry does not tile.
pub(crate) fn conv_out_size(d: usize, k: usize, geom: ConvGeom) -> Result<usize> {
    let padded = d + 2 * geom.pad;
    if padded < k {
        return Err(Error::Config(format!(
            "conv3d: kernel {k} exceeds padded input {padded}"
        )));
    }
    if (padded - k) % geom.stride != 0 {
        return Err(Error::Config(format!(
            "conv3d: non-integral output size for input {d}, kernel {k}, stride {}, pad {}",
            geom.stride, geom.pad
        )));
    }
    Ok((padded - k) / geom.stride + 1)
}

/// Input spatial size reconstructed by conv_transpose3d.
pub(crate) fn conv_transpose_out_size(o: usize, k: usize, geom: ConvGeom) -> Result<usize> {
    let grown = (o - 1) * geom.stride + k;
    if grown < 2 * geom.pad + 1 {
        return Err(Error::Config(format!(
            "conv_transpose3d: output collapses for input {o}, kernel {k}, stride {}, pad {}",
            geom.stride, geom.pad
        )));
    }
    Ok(grown - 2 * geom.pad)
}

/// y[b,f,o] = sum_c sum_a x[b,c,o*s-p+a] * k[f,c,a]
pub(crate) fn conv3d_forward(
    x: &[f64],
    xd: Dims5,
    k: &[f64],
    kd: Dims5,
    geom: ConvGeom,
    od: Dims5,
) -> Vec<f64> {
    let mut out = vec![0.0; od.len()];
    let per_pair = od.spatial();
    out.par_chunks_mut(per_pair).enumerate().for_each(|(bf, chunk)| {
        let b = bf / od.n1;
        let f = bf % od.n1;
        let x_item = &x[b * xd.n1 * xd.spatial()..(b + 1) * xd.n1 * xd.spatial()];
        let k_item = &k[f * kd.n1 * kd.spatial()..(f + 1) * kd.n1 * kd.spatial()];
        let mut oi = 0;
        for o0 in 0..od.s[0] {
            for o1 in 0..od.s[1] {
                for o2 in 0..od.s[2] {
                    let mut acc = 0.0;
                    for c in 0..xd.n1 {
                        let xc = &x_item[c * xd.spatial()..(c + 1) * xd.spatial()];
                        let kc = &k_item[c * kd.spatial()..(c + 1) * kd.spatial()];
                        acc += window_dot(xc, xd.s, kc, kd.s, [o0, o1, o2], geom);
                    }
                    chunk[oi] = acc;
                    oi += 1;
                }
            }
        }
    });
    out
}

/// Valid kernel-offset range for output cell `o`: offsets `a` with
/// `0 <= o*s - p + a < limit`, ascending.
#[inline]
fn offset_range(o: usize, k: usize, geom: ConvGeom, limit: usize) -> std::ops::Range<usize> {
    let base = o * geom.stride; // input index = base - pad + a
    let lo = geom.pad.saturating_sub(base);
    let hi = (limit + geom.pad - base).min(k); // exclusive
    lo.min(hi)..hi
}

/// Dot product of one kernel channel with the input window at output cell `o`.
#[inline]
fn window_dot(
    x: &[f64],
    xs: [usize; 3],
    k: &[f64],
    ks: [usize; 3],
    o: [usize; 3],
    geom: ConvGeom,
) -> f64 {
    let r0 = offset_range(o[0], ks[0], geom, xs[0]);
    let r1 = offset_range(o[1], ks[1], geom, xs[1]);
    let r2 = offset_range(o[2], ks[2], geom, xs[2]);
    let i2_start = o[2] * geom.stride + r2.start - geom.pad;
    let mut acc = 0.0;
    for a0 in r0 {
        let i0 = o[0] * geom.stride + a0 - geom.pad;
        for a1 in r1.clone() {
            let i1 = o[1] * geom.stride + a1 - geom.pad;
            let xrow = &x[(i0 * xs[1] + i1) * xs[2] + i2_start..];
            let krow = &k[(a0 * ks[1] + a1) * ks[2] + r2.start..];
            // The innermost axis advances the input by one per kernel offset,
            // so both sides are contiguous.
            acc += xrow
                .iter()
                .zip(&krow[..r2.len()])
                .map(|(xv, kv)| xv * kv)
                .sum::<f64>();
        }
    }
    acc
}

/// dx[b,c,i] = sum_f sum_{o,a : o*s-p+a == i} y[b,f,o] * k[f,c,a]
///
/// This is simultaneously the gradient of `conv3d_forward` with respect to its
/// input and the forward pass of the transposed convolution. The stride/pad
/// arithmetic is hoisted into per-axis tables so the hot loop is pure
/// indexing.
pub(crate) fn conv3d_input_grad(
    y: &[f64],
    yd: Dims5,
    k: &[f64],
    kd: Dims5,
    geom: ConvGeom,
    xd: Dims5,
) -> Vec<f64> {
    // table[axis][i] lists the (kernel offset, output cell) pairs feeding
    // input coordinate i along that axis.
    let table = |axis: usize| -> Vec<Vec<(usize, usize)>> {
        (0..xd.s[axis])
            .map(|i| scatter_offsets(i, kd.s[axis], geom, yd.s[axis]).collect())
            .collect()
    };
    let (t0, t1, t2) = (table(0), table(1), table(2));

    let mut dx = vec![0.0; xd.len()];
    let per_pair = xd.spatial();
    dx.par_chunks_mut(per_pair).enumerate().for_each(|(bc, chunk)| {
        let b = bc / xd.n1;
        let c = bc % xd.n1;
        for f in 0..yd.n1 {
            let y_bf = &y[(b * yd.n1 + f) * yd.spatial()..(b * yd.n1 + f + 1) * yd.spatial()];
            let k_fc = &k[(f * kd.n1 + c) * kd.spatial()..(f * kd.n1 + c + 1) * kd.spatial()];
            let mut ii = 0;
            for i0 in 0..xd.s[0] {
                for i1 in 0..xd.s[1] {
                    for i2 in 0..xd.s[2] {
                        let mut acc = 0.0;
                        for &(a0, o0) in &t0[i0] {
                            for &(a1, o1) in &t1[i1] {
                                let y_row = &y_bf[(o0 * yd.s[1] + o1) * yd.s[2]..];
                                let k_row = &k_fc[(a0 * kd.s[1] + a1) * kd.s[2]..];
                                for &(a2, o2) in &t2[i2] {
                                    acc += y_row[o2] * k_row[a2];
                                }
                            }
                        }
                        chunk[ii] += acc;
                        ii += 1;
                    }
                }
            }
        }
    });
    dx
}

/// Valid output cells `o` for a fixed kernel offset `a`: those with
/// `0 <= o*s - p + a < x_limit`, ascending and clamped to `[0, o_limit)`.
#[inline]
fn output_range(a: usize, geom: ConvGeom, x_limit: usize, o_limit: usize) -> std::ops::Range<usize> {
    let s = geom.stride;
    let lo = if geom.pad > a {
        (geom.pad - a).div_ceil(s)
    } else {
        0
    };
    let hi = match (x_limit + geom.pad).checked_sub(a + 1) {
        Some(t) => (t / s + 1).min(o_limit), // exclusive
        None => 0,
    };
    lo.min(hi)..hi
}

/// Kernel offsets `a` (ascending, stride-aligned) with a valid output cell
/// `o = (i + p - a) / s` in `[0, o_limit)`; pairs each with that `o`.
#[inline]
fn scatter_offsets(
    i: usize,
    k: usize,
    geom: ConvGeom,
    o_limit: usize,
) -> impl Iterator<Item = (usize, usize)> {
    let target = i + geom.pad; // a + o*s == target
    let s = geom.stride;
    let a_min = target.saturating_sub(s * (o_limit - 1));
    // Align upward to a ≡ target (mod s).
    let a_start = a_min + (target - a_min) % s;
    let a_end = target.min(k.saturating_sub(1)); // inclusive
    (a_start..=a_end)
        .step_by(s)
        .map(move |a| (a, (target - a) / s))
}

/// dk[f,c,a] = sum_b sum_o y[b,f,o] * x[b,c,o*s-p+a]
pub(crate) fn conv3d_kernel_grad(
    x: &[f64],
    xd: Dims5,
    y: &[f64],
    yd: Dims5,
    geom: ConvGeom,
    kd: Dims5,
) -> Vec<f64> {
    let mut dk = vec![0.0; kd.len()];
    let per_pair = kd.spatial();
    dk.par_chunks_mut(per_pair).enumerate().for_each(|(fc, chunk)| {
        let f = fc / kd.n1;
        let c = fc % kd.n1;
        for b in 0..xd.n0 {
            let x_bc = &x[(b * xd.n1 + c) * xd.spatial()..(b * xd.n1 + c + 1) * xd.spatial()];
            let y_bf = &y[(b * yd.n1 + f) * yd.spatial()..(b * yd.n1 + f + 1) * yd.spatial()];
            let mut ai = 0;
            for a0 in 0..kd.s[0] {
                let r0 = output_range(a0, geom, xd.s[0], yd.s[0]);
                for a1 in 0..kd.s[1] {
                    let r1 = output_range(a1, geom, xd.s[1], yd.s[1]);
                    for a2 in 0..kd.s[2] {
                        let r2 = output_range(a2, geom, xd.s[2], yd.s[2]);
                        if r2.is_empty() {
                            ai += 1;
                            continue;
                        }
                        let i2_start = r2.start * geom.stride + a2 - geom.pad;
                        let mut acc = 0.0;
                        for o0 in r0.clone() {
                            let i0 = o0 * geom.stride + a0 - geom.pad;
                            for o1 in r1.clone() {
                                let i1 = o1 * geom.stride + a1 - geom.pad;
                                let y_row = &y_bf[(o0 * yd.s[1] + o1) * yd.s[2]..][r2.clone()];
                                let x_row = &x_bc[(i0 * xd.s[1] + i1) * xd.s[2] + i2_start..];
                                // Input advances `stride` per output cell.
                                acc += y_row
                                    .iter()
                                    .zip(x_row.iter().step_by(geom.stride))
                                    .map(|(yv, xv)| yv * xv)
                                    .sum::<f64>();
                            }
                        }
                        chunk[ai] += acc;
                        ai += 1;
                    }
                }
            }
        }
    });
    dk
}

/// Max over non-overlapping cubic windows; returns (values, argmax flat index
/// into the input). Ties resolve to the lowest linear index because the scan
/// order is canonical and comparisons are strict.
pub(crate) fn maxpool3d_forward(
    x: &[f64],
    xd: Dims5,
    window: usize,
    od: Dims5,
) -> (Vec<f64>, Vec<usize>) {
    let n_out = od.len();
    let mut out = vec![0.0; n_out];
    let mut arg = vec![0usize; n_out];
    let per_pair = od.spatial();
    out.par_chunks_mut(per_pair)
        .zip(arg.par_chunks_mut(per_pair))
        .enumerate()
        .for_each(|(bc, (ochunk, achunk))| {
            let base = bc * xd.spatial();
            let mut oi = 0;
            for o0 in 0..od.s[0] {
                for o1 in 0..od.s[1] {
                    for o2 in 0..od.s[2] {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for a0 in 0..window {
                            for a1 in 0..window {
                                for a2 in 0..window {
                                    let i0 = o0 * window + a0;
                                    let i1 = o1 * window + a1;
                                    let i2 = o2 * window + a2;
                                    let idx = base + (i0 * xd.s[1] + i1) * xd.s[2] + i2;
                                    if x[idx] > best {
                                        best = x[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                        }
                        ochunk[oi] = best;
                        achunk[oi] = best_idx;
                        oi += 1;
                    }
                }
            }
        });
    (out, arg)
}
