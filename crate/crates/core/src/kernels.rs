//! Convolution and pooling kernels on `[batch, channel, depth, height, width]`
//! buffers. Two-dimensional variants run through the same code with a depth
//! extent of one.
//!
//! Convolutions are lowered to matrix products: each sample's receptive
//! fields are gathered into a `(C·kd·kh·kw) × (Do·Ho·Wo)` column matrix and
//! multiplied by the `(Cout) × (C·kd·kh·kw)` weight matrix. The naive
//! direct-summation kernels at the bottom of this file are kept as test
//! oracles.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Scalar};

static DETERMINISTIC: AtomicBool = AtomicBool::new(false);

/// Forces single-threaded kernels. Results are bitwise identical in both
/// modes; per-sample partial reductions are always combined in sample order.
pub fn set_deterministic(on: bool) {
    DETERMINISTIC.store(on, Ordering::SeqCst);
}

pub fn is_deterministic() -> bool {
    DETERMINISTIC.load(Ordering::SeqCst)
}

pub(crate) fn map_samples<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if is_deterministic() || n < 2 {
        (0..n).map(f).collect()
    } else {
        (0..n).into_par_iter().map(f).collect()
    }
}

/// Spatial extents in `(depth, height, width)` order.
pub type Extent3 = [usize; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Extent3,
    pub pad_lo: Extent3,
    pub pad_hi: Extent3,
}

impl ConvGeometry {
    pub fn output_extent(&self, input: Extent3) -> Result<Extent3> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + self.pad_lo[a] + self.pad_hi[a];
            if self.kernel[a] == 0 || self.kernel[a] > padded {
                return Err(Error::ShapeMismatch(format!(
                    "kernel {:?} larger than padded input {:?}",
                    self.kernel,
                    [
                        input[0] + self.pad_lo[0] + self.pad_hi[0],
                        input[1] + self.pad_lo[1] + self.pad_hi[1],
                        input[2] + self.pad_lo[2] + self.pad_hi[2],
                    ]
                )));
            }
            out[a] = padded - self.kernel[a] + 1;
        }
        Ok(out)
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.pad_lo == [0; 3] && self.pad_hi == [0; 3]
    }
}

/// Gathers receptive fields of one sample `(C, D, H, W)` into columns.
fn im2col<F: Scalar>(x: &[F], input: Extent3, out: Extent3, g: &ConvGeometry, cols: &mut [F]) {
    let [d_in, h_in, w_in] = input;
    let [d_out, h_out, w_out] = out;
    let [kd, kh, kw] = g.kernel;
    let n = d_out * h_out * w_out;
    let mut row = 0;
    for c in 0..g.in_channels {
        let xc = &x[c * d_in * h_in * w_in..(c + 1) * d_in * h_in * w_in];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let dst = &mut cols[row * n..(row + 1) * n];
                    // valid output columns for this kernel offset along width
                    let w_lo = g.pad_lo[2].saturating_sub(e).min(w_out);
                    let w_hi = (w_in + g.pad_lo[2]).saturating_sub(e).min(w_out).max(w_lo);
                    for od in 0..d_out {
                        let sd = od + a;
                        for oh in 0..h_out {
                            let sh = oh + b;
                            let base = (od * h_out + oh) * w_out;
                            let line = &mut dst[base..base + w_out];
                            if sd < g.pad_lo[0]
                                || sd - g.pad_lo[0] >= d_in
                                || sh < g.pad_lo[1]
                                || sh - g.pad_lo[1] >= h_in
                            {
                                line.fill(F::zero());
                                continue;
                            }
                            let src_row = ((sd - g.pad_lo[0]) * h_in + (sh - g.pad_lo[1])) * w_in;
                            line[..w_lo].fill(F::zero());
                            line[w_hi..].fill(F::zero());
                            if w_hi > w_lo {
                                let s0 = src_row + w_lo + e - g.pad_lo[2];
                                line[w_lo..w_hi].copy_from_slice(&xc[s0..s0 + (w_hi - w_lo)]);
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Scatter-adds column gradients back onto one sample's input gradient.
fn col2im<F: Scalar>(cols: &[F], input: Extent3, out: Extent3, g: &ConvGeometry, dx: &mut [F]) {
    let [d_in, h_in, w_in] = input;
    let [d_out, h_out, w_out] = out;
    let [kd, kh, kw] = g.kernel;
    let n = d_out * h_out * w_out;
    let mut row = 0;
    for c in 0..g.in_channels {
        let dxc = &mut dx[c * d_in * h_in * w_in..(c + 1) * d_in * h_in * w_in];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let src = &cols[row * n..(row + 1) * n];
                    let w_lo = g.pad_lo[2].saturating_sub(e).min(w_out);
                    let w_hi = (w_in + g.pad_lo[2]).saturating_sub(e).min(w_out).max(w_lo);
                    for od in 0..d_out {
                        let sd = od + a;
                        if sd < g.pad_lo[0] || sd - g.pad_lo[0] >= d_in {
                            continue;
                        }
                        for oh in 0..h_out {
                            let sh = oh + b;
                            if sh < g.pad_lo[1] || sh - g.pad_lo[1] >= h_in {
                                continue;
                            }
                            let dst_row = ((sd - g.pad_lo[0]) * h_in + (sh - g.pad_lo[1])) * w_in;
                            let base = (od * h_out + oh) * w_out;
                            if w_hi > w_lo {
                                let d0 = dst_row + w_lo + e - g.pad_lo[2];
                                for (dv, &sv) in dxc[d0..d0 + (w_hi - w_lo)]
                                    .iter_mut()
                                    .zip(&src[base + w_lo..base + w_hi])
                                {
                                    *dv += sv;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Forward convolution. `x` is `[batch, Cin, D, H, W]`, `w` is
/// `[Cout, Cin, kd, kh, kw]`, `bias` is `[Cout]`. Returns `[batch, Cout, Do, Ho, Wo]`.
pub fn conv_forward<F: Scalar>(
    x: &[F],
    batch: usize,
    input: Extent3,
    w: &[F],
    bias: &[F],
    g: &ConvGeometry,
) -> Result<(Vec<F>, Extent3)> {
    let out = g.output_extent(input)?;
    let n = out.iter().product::<usize>();
    let in_len = g.in_channels * input.iter().product::<usize>();
    let k = g.patch_len();
    let per_sample = map_samples(batch, |s| {
        let xs = &x[s * in_len..(s + 1) * in_len];
        let mut y = vec![F::zero(); g.out_channels * n];
        for (j, chunk) in y.chunks_mut(n).enumerate() {
            chunk.fill(bias[j]);
        }
        if g.is_pointwise() {
            gemm_nn(g.out_channels, n, k, w, xs, &mut y);
        } else {
            let mut cols = vec![F::zero(); k * n];
            im2col(xs, input, out, g, &mut cols);
            gemm_nn(g.out_channels, n, k, w, &cols, &mut y);
        }
        y
    });
    Ok((per_sample.concat(), out))
}

pub struct ConvGrads<F> {
    pub dx: Option<Vec<F>>,
    pub dw: Vec<F>,
    pub db: Vec<F>,
}

/// Backward convolution given the output gradient `dy` (`[batch, Cout, Do, Ho, Wo]`).
pub fn conv_backward<F: Scalar>(
    x: &[F],
    batch: usize,
    input: Extent3,
    w: &[F],
    dy: &[F],
    g: &ConvGeometry,
    need_dx: bool,
) -> Result<ConvGrads<F>> {
    let out = g.output_extent(input)?;
    let n = out.iter().product::<usize>();
    let in_len = g.in_channels * input.iter().product::<usize>();
    let k = g.patch_len();
    let out_len = g.out_channels * n;
    let per_sample = map_samples(batch, |s| {
        let xs = &x[s * in_len..(s + 1) * in_len];
        let dys = &dy[s * out_len..(s + 1) * out_len];
        let mut dw = vec![F::zero(); g.out_channels * k];
        let db: Vec<F> = dys.chunks(n).map(|c| c.iter().copied().sum()).collect();
        let pointwise = g.is_pointwise();
        let cols_owned;
        let cols: &[F] = if pointwise {
            xs
        } else {
            let mut c = vec![F::zero(); k * n];
            im2col(xs, input, out, g, &mut c);
            cols_owned = c;
            &cols_owned
        };
        gemm_nt(g.out_channels, k, n, dys, cols, &mut dw);
        let dx = need_dx.then(|| {
            let mut dcols = vec![F::zero(); k * n];
            gemm_tn(k, n, g.out_channels, w, dys, &mut dcols);
            if pointwise {
                dcols
            } else {
                let mut dxs = vec![F::zero(); in_len];
                col2im(&dcols, input, out, g, &mut dxs);
                dxs
            }
        });
        (dx, dw, db)
    });

    let mut dw = vec![F::zero(); g.out_channels * k];
    let mut db = vec![F::zero(); g.out_channels];
    let mut dx = need_dx.then(|| Vec::with_capacity(batch * in_len));
    for (sdx, sdw, sdb) in per_sample {
        for (a, b) in dw.iter_mut().zip(&sdw) {
            *a += *b;
        }
        for (a, b) in db.iter_mut().zip(&sdb) {
            *a += *b;
        }
        if let (Some(all), Some(part)) = (dx.as_mut(), sdx) {
            all.extend_from_slice(&part);
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub kernel: Extent3,
    pub stride: Extent3,
}

impl PoolGeometry {
    pub fn output_extent(&self, input: Extent3) -> Result<Extent3> {
        let mut out = [0; 3];
        for a in 0..3 {
            if self.stride[a] == 0 || self.kernel[a] == 0 {
                return Err(Error::InvalidArgument(
                    "pool kernel and stride must be positive".into(),
                ));
            }
            if self.kernel[a] > input[a] {
                return Err(Error::ShapeMismatch(format!(
                    "pool kernel {:?} exceeds input {:?}",
                    self.kernel, input
                )));
            }
            out[a] = (input[a] - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }
}

/// Max pooling over `[batch·channels, D, H, W]`. Returns the pooled values and,
/// for each output, the flat input index of the selected element. Ties select
/// the lowest index in the window.
pub fn maxpool_forward<F: Scalar>(
    x: &[F],
    planes: usize,
    input: Extent3,
    g: &PoolGeometry,
) -> Result<(Vec<F>, Vec<usize>, Extent3)> {
    let out = g.output_extent(input)?;
    let [d_in, h_in, w_in] = input;
    let [d_out, h_out, w_out] = out;
    let in_len = d_in * h_in * w_in;
    let out_len = d_out * h_out * w_out;
    let mut values = Vec::with_capacity(planes * out_len);
    let mut argmax = Vec::with_capacity(planes * out_len);
    for p in 0..planes {
        let base = p * in_len;
        for od in 0..d_out {
            for oh in 0..h_out {
                for ow in 0..w_out {
                    let mut best_idx = usize::MAX;
                    let mut best = F::neg_infinity();
                    for a in 0..g.kernel[0] {
                        for b in 0..g.kernel[1] {
                            for e in 0..g.kernel[2] {
                                let d = od * g.stride[0] + a;
                                let h = oh * g.stride[1] + b;
                                let w = ow * g.stride[2] + e;
                                let idx = base + (d * h_in + h) * w_in + w;
                                let v = x[idx];
                                if best_idx == usize::MAX
                                    || v > best
                                    || (v.is_nan() && !best.is_nan())
                                {
                                    best = v;
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    values.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    Ok((values, argmax, out))
}

pub fn maxpool_backward<F: Scalar>(dy: &[F], argmax: &[usize], input_len: usize) -> Vec<F> {
    let mut dx = vec![F::zero(); input_len];
    for (&g, &i) in dy.iter().zip(argmax) {
        dx[i] += g;
    }
    dx
}

/// Direct-summation 3D convolution used as a test oracle.
#[doc(hidden)]
pub fn conv3d_reference(
    x: &[f64],
    batch: usize,
    input: Extent3,
    w: &[f64],
    bias: &[f64],
    g: &ConvGeometry,
) -> Vec<f64> {
    let [d_in, h_in, w_in] = input;
    let out = g.output_extent(input).expect("valid geometry");
    let [d_out, h_out, w_out] = out;
    let [kd, kh, kw] = g.kernel;
    let mut y = vec![0.0; batch * g.out_channels * d_out * h_out * w_out];
    let at = |s: usize, c: usize, d: isize, h: isize, ww: isize| -> f64 {
        if d < 0
            || h < 0
            || ww < 0
            || d >= d_in as isize
            || h >= h_in as isize
            || ww >= w_in as isize
        {
            0.0
        } else {
            x[(((s * g.in_channels + c) * d_in + d as usize) * h_in + h as usize) * w_in
                + ww as usize]
        }
    };
    let mut o = 0;
    for s in 0..batch {
        for j in 0..g.out_channels {
            for z in 0..d_out {
                for r in 0..h_out {
                    for q in 0..w_out {
                        let mut acc = bias[j];
                        for m in 0..g.in_channels {
                            for a in 0..kd {
                                for b in 0..kh {
                                    for e in 0..kw {
                                        let wv = w[(((j * g.in_channels + m) * kd + a) * kh + b)
                                            * kw
                                            + e];
                                        acc += wv
                                            * at(
                                                s,
                                                m,
                                                (z + a) as isize - g.pad_lo[0] as isize,
                                                (r + b) as isize - g.pad_lo[1] as isize,
                                                (q + e) as isize - g.pad_lo[2] as isize,
                                            );
                                    }
                                }
                            }
                        }
                        y[o] = acc;
                        o += 1;
                    }
                }
            }
        }
    }
    y
}

/// Direct-summation 2D convolution on `[batch, C, H, W]`, independent of the
/// 3D code path; used as a test oracle.
#[doc(hidden)]
#[allow(clippy::too_many_arguments)]
pub fn conv2d_reference(
    x: &[f64],
    batch: usize,
    cin: usize,
    hw: [usize; 2],
    w: &[f64],
    bias: &[f64],
    cout: usize,
    kernel: [usize; 2],
    pad_lo: [usize; 2],
    pad_hi: [usize; 2],
) -> Vec<f64> {
    let [h_in, w_in] = hw;
    let h_out = h_in + pad_lo[0] + pad_hi[0] + 1 - kernel[0];
    let w_out = w_in + pad_lo[1] + pad_hi[1] + 1 - kernel[1];
    let mut y = Vec::with_capacity(batch * cout * h_out * w_out);
    for s in 0..batch {
        for j in 0..cout {
            for r in 0..h_out {
                for q in 0..w_out {
                    let mut acc = bias[j];
                    for m in 0..cin {
                        for p in 0..kernel[0] {
                            for t in 0..kernel[1] {
                                let h = (r + p) as isize - pad_lo[0] as isize;
                                let ww = (q + t) as isize - pad_lo[1] as isize;
                                if h < 0 || ww < 0 || h >= h_in as isize || ww >= w_in as isize {
                                    continue;
                                }
                                let xv =
                                    x[((s * cin + m) * h_in + h as usize) * w_in + ww as usize];
                                acc += w[((j * cin + m) * kernel[0] + p) * kernel[1] + t] * xv;
                            }
                        }
                    }
                    y.push(acc);
                }
            }
        }
    }
    y
}
