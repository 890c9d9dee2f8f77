//! Raw forward/backward kernels over flat NCHW buffers. Shape validation happens
//! in the graph layer; these functions assume consistent extents.

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};

/// Geometry of one 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

/// Output extent of a sliding window; `None` if the window does not fit or the
/// stride does not divide the span exactly.
pub fn window_extent(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if stride == 0 || k == 0 || k > padded || (padded - k) % stride != 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (&[batch, c_in, h, w], &[c_out, wc_in, kh, kw]) = (input, weight) else {
            return Err(Error::shape(
                "conv2d",
                format!("input {input:?} and weight {weight:?} must both be rank 4"),
            ));
        };
        if wc_in != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c_in} channels but weight expects {wc_in}"),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be positive"));
        }
        let ext = |size, k, axis| {
            window_extent(size, k, stride, pad).ok_or_else(|| {
                Error::shape(
                    "conv2d",
                    format!(
                        "{axis}: extent {size} with kernel {k}, pad {pad}, stride {stride} \
                         does not give an exact output size"
                    ),
                )
            })
        };
        let h_out = ext(h, kh, "height")?;
        let w_out = ext(w, kw, "width")?;
        Ok(Self { batch, c_in, h, w, c_out, kh, kw, stride, pad, h_out, w_out })
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Output column range `[lo, hi)` whose input index `o*stride + k - pad` is in bounds.
    fn valid_range(&self, k: usize, size: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= size-1
        let hi_incl = (size as isize - 1 - off).div_euclid(s);
        let hi = (hi_incl + 1).clamp(0, out as isize);
        (lo.min(out as isize) as usize, hi.max(lo) as usize)
    }

    /// Unfolds one image `[c_in, h, w]` into `[c_in*kh*kw, h_out*w_out]`.
    fn im2col<T: Scalar>(&self, img: &[T], cols: &mut [T]) {
        let p = self.positions();
        for c in 0..self.c_in {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                let (oh_lo, oh_hi) = self.valid_range(ki, self.h, self.h_out);
                for kj in 0..self.kw {
                    let (ow_lo, ow_hi) = self.valid_range(kj, self.w, self.w_out);
                    let row = ((c * self.kh + ki) * self.kw + kj) * p;
                    let dst = &mut cols[row..row + p];
                    dst.fill(T::zero());
                    for oh in oh_lo..oh_hi {
                        let ih = oh * self.stride + ki - self.pad;
                        let src = &plane[ih * self.w..(ih + 1) * self.w];
                        let out_row = &mut dst[oh * self.w_out..(oh + 1) * self.w_out];
                        if self.stride == 1 {
                            let iw0 = ow_lo + kj - self.pad;
                            out_row[ow_lo..ow_hi].copy_from_slice(&src[iw0..iw0 + (ow_hi - ow_lo)]);
                        } else {
                            for ow in ow_lo..ow_hi {
                                out_row[ow] = src[ow * self.stride + kj - self.pad];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Folds `[c_in*kh*kw, h_out*w_out]` back onto one image, accumulating.
    fn col2im_add<T: Scalar>(&self, cols: &[T], img: &mut [T]) {
        let p = self.positions();
        for c in 0..self.c_in {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                let (oh_lo, oh_hi) = self.valid_range(ki, self.h, self.h_out);
                for kj in 0..self.kw {
                    let (ow_lo, ow_hi) = self.valid_range(kj, self.w, self.w_out);
                    let row = ((c * self.kh + ki) * self.kw + kj) * p;
                    let src = &cols[row..row + p];
                    for oh in oh_lo..oh_hi {
                        let ih = oh * self.stride + ki - self.pad;
                        let dst = &mut plane[ih * self.w..(ih + 1) * self.w];
                        let in_row = &src[oh * self.w_out..(oh + 1) * self.w_out];
                        for ow in ow_lo..ow_hi {
                            dst[ow * self.stride + kj - self.pad] += in_row[ow];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(g: &ConvGeom, input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let (k, p) = (g.patch_len(), g.positions());
    let in_stride = g.c_in * g.h * g.w;
    let out_stride = g.c_out * p;
    let mut out = vec![T::zero(); g.batch * out_stride];
    let mut cols = vec![T::zero(); k * p];
    let wmat = MatRef::row_major(weight, g.c_out, k);
    for n in 0..g.batch {
        let dst = &mut out[n * out_stride..(n + 1) * out_stride];
        for (co, &b) in bias.iter().enumerate() {
            dst[co * p..(co + 1) * p].fill(b);
        }
        g.im2col(&input[n * in_stride..(n + 1) * in_stride], &mut cols);
        gemm(wmat, MatRef::row_major(&cols, k, p), T::one(), dst);
    }
    out
}

/// Gradients of a convolution. Each requested buffer is accumulated into (not overwritten).
pub struct ConvGrads<'a, T> {
    pub input: Option<&'a mut [T]>,
    pub weight: Option<&'a mut [T]>,
    pub bias: Option<&'a mut [T]>,
}

pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    grads: ConvGrads<'_, T>,
) {
    let (k, p) = (g.patch_len(), g.positions());
    let in_stride = g.c_in * g.h * g.w;
    let out_stride = g.c_out * p;
    let ConvGrads { input: mut d_input, weight: mut d_weight, bias: d_bias } = grads;

    if let Some(db) = d_bias {
        for n in 0..g.batch {
            let gy = &grad_out[n * out_stride..(n + 1) * out_stride];
            for (co, acc) in db.iter_mut().enumerate() {
                *acc += gy[co * p..(co + 1) * p].iter().fold(T::zero(), |s, &v| s + v);
            }
        }
    }
    if d_input.is_none() && d_weight.is_none() {
        return;
    }
    let mut cols = vec![T::zero(); k * p];
    for n in 0..g.batch {
        let gy = MatRef::row_major(&grad_out[n * out_stride..(n + 1) * out_stride], g.c_out, p);
        if let Some(dw) = d_weight.as_deref_mut() {
            g.im2col(&input[n * in_stride..(n + 1) * in_stride], &mut cols);
            // dW[c_out, k] += dY[c_out, p] · cols[k, p]^T
            gemm(gy, MatRef::transposed(&cols, k, p), T::one(), dw);
        }
        if let Some(dx) = d_input.as_deref_mut() {
            // dcols[k, p] = W[c_out, k]^T · dY[c_out, p]
            gemm(MatRef::transposed(weight, g.c_out, k), gy, T::zero(), &mut cols);
            g.col2im_add(&cols, &mut dx[n * in_stride..(n + 1) * in_stride]);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeom {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl PoolGeom {
    pub fn new(shape: &[usize], k: usize, stride: usize) -> Result<Self> {
        let &[n, c, h, w] = shape else {
            return Err(Error::shape("pool2d", format!("expected rank 4, got {shape:?}")));
        };
        let ext = |size| {
            window_extent(size, k, stride, 0).ok_or_else(|| {
                Error::shape(
                    "pool2d",
                    format!("extent {size} is not tiled exactly by window {k} at stride {stride}"),
                )
            })
        };
        Ok(Self { planes: n * c, h, w, k, stride, h_out: ext(h)?, w_out: ext(w)? })
    }
}

/// Returns pooled values and, for max pooling, the flat input index of each winner.
pub fn pool2d_forward<T: Scalar>(g: &PoolGeom, kind: PoolKind, input: &[T]) -> (Vec<T>, Vec<usize>) {
    let out_len = g.planes * g.h_out * g.w_out;
    let mut out = Vec::with_capacity(out_len);
    let mut winners = Vec::with_capacity(if kind == PoolKind::Max { out_len } else { 0 });
    let inv = T::one() / T::from_usize(g.k * g.k).unwrap();
    for pl in 0..g.planes {
        let base = pl * g.h * g.w;
        for oh in 0..g.h_out {
            for ow in 0..g.w_out {
                let (h0, w0) = (oh * g.stride, ow * g.stride);
                match kind {
                    PoolKind::Max => {
                        let mut best = base + h0 * g.w + w0;
                        for i in h0..h0 + g.k {
                            for j in w0..w0 + g.k {
                                let idx = base + i * g.w + j;
                                if input[idx] > input[best] {
                                    best = idx;
                                }
                            }
                        }
                        out.push(input[best]);
                        winners.push(best);
                    }
                    PoolKind::Avg => {
                        let mut s = T::zero();
                        for i in h0..h0 + g.k {
                            for j in w0..w0 + g.k {
                                s += input[base + i * g.w + j];
                            }
                        }
                        out.push(s * inv);
                    }
                }
            }
        }
    }
    (out, winners)
}

pub fn pool2d_backward<T: Scalar>(
    g: &PoolGeom,
    kind: PoolKind,
    winners: &[usize],
    grad_out: &[T],
    grad_in: &mut [T],
) {
    match kind {
        PoolKind::Max => {
            for (&idx, &gy) in winners.iter().zip(grad_out) {
                grad_in[idx] += gy;
            }
        }
        PoolKind::Avg => {
            let inv = T::one() / T::from_usize(g.k * g.k).unwrap();
            let mut o = 0;
            for pl in 0..g.planes {
                let base = pl * g.h * g.w;
                for oh in 0..g.h_out {
                    for ow in 0..g.w_out {
                        let share = grad_out[o] * inv;
                        o += 1;
                        for i in oh * g.stride..oh * g.stride + g.k {
                            for j in ow * g.stride..ow * g.stride + g.k {
                                grad_in[base + i * g.w + j] += share;
                            }
                        }
                    }
                }
            }
        }
    }
}
