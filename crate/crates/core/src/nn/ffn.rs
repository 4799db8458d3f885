//! Sequence layout shared by the sequence layers, and the gated
//! convolution feed-forward network.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::layers::Linear;
use super::param::{fan_in_bound, impl_parameters, Param};
use crate::real::{sigmoid, Real};

/// Maps a batch of sequences onto rows of a `rows x D` buffer:
/// element `i` of sequence `b` lives at row `b * stride_b + i * stride_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqLayout {
    pub batch: usize,
    pub len: usize,
    pub stride_b: usize,
    pub stride_i: usize,
}

impl SeqLayout {
    /// Rows are `s * bands + k`; sequences run over bands.
    pub fn over_bands(seq: usize, bands: usize) -> Self {
        Self { batch: seq, len: bands, stride_b: bands, stride_i: 1 }
    }

    /// Rows are `s * bands + k`; sequences run over `s`.
    pub fn over_time(seq: usize, bands: usize) -> Self {
        Self { batch: bands, len: seq, stride_b: 1, stride_i: bands }
    }

    #[inline]
    pub fn row(&self, b: usize, i: usize) -> usize {
        b * self.stride_b + i * self.stride_i
    }

    pub fn rows(&self) -> usize {
        self.batch * self.len
    }
}

/// `Conv1d(D -> 2C, k)` followed by SwiGLU and `ConvTranspose1d(C -> D, k)`,
/// stride 1. Sequences shorter than the kernel behave as if zero-padded to
/// the kernel length, with the output cropped back.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFfn<T> {
    /// Weight `[k * D, 2C]`, tap-major input columns.
    pub conv: Linear<T>,
    /// Weight `[C, k * D]`, tap-major output columns.
    pub deconv: Linear<T>,
    pub out_bias: Param<T>,
    kernel: usize,
}

impl_parameters!(ConvFfn { conv, deconv, out_bias });

#[derive(Debug, Clone)]
pub struct FfnCache<T> {
    /// Pre-activation conv output, `(batch * J) x 2C`.
    h: Vec<T>,
}

impl<T: Real> ConvFfn<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, hidden: usize, kernel: usize, rng: &mut R) -> Self {
        assert!(kernel >= 1);
        let conv = Linear::new(kernel * dim, 2 * hidden, true, rng);
        let deconv = Linear::new(hidden, kernel * dim, false, rng);
        let out_bias = Param::uniform(&[dim], fan_in_bound(hidden * kernel), rng);
        Self { conv, deconv, out_bias, kernel }
    }

    pub fn dim(&self) -> usize {
        self.out_bias.len()
    }

    pub fn hidden(&self) -> usize {
        self.deconv.in_dim()
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    fn positions(&self, len: usize) -> usize {
        len.max(self.kernel) - self.kernel + 1
    }

    fn im2col(&self, x: &[T], layout: SeqLayout) -> Vec<T> {
        let (d, k) = (self.dim(), self.kernel);
        let j = self.positions(layout.len);
        let w = k * d;
        let mut cols = vec![T::zero(); layout.batch * j * w];
        for b in 0..layout.batch {
            for p in 0..j {
                let dst = &mut cols[(b * j + p) * w..(b * j + p + 1) * w];
                for m in 0..k {
                    let i = p + m;
                    if i < layout.len {
                        let r = layout.row(b, i);
                        dst[m * d..(m + 1) * d].copy_from_slice(&x[r * d..(r + 1) * d]);
                    }
                }
            }
        }
        cols
    }

    fn gate(&self, h: &[T], rows: usize) -> Vec<T> {
        let c = self.hidden();
        let mut g = vec![T::zero(); rows * c];
        for r in 0..rows {
            for i in 0..c {
                let a = h[r * 2 * c + i];
                g[r * c + i] = a * sigmoid(a) * h[r * 2 * c + c + i];
            }
        }
        g
    }

    pub fn forward(&self, x: &[T], layout: SeqLayout) -> (Vec<T>, FfnCache<T>) {
        let (d, k) = (self.dim(), self.kernel);
        let j = self.positions(layout.len);
        let rows = layout.batch * j;
        let cols = self.im2col(x, layout);
        let h = self.conv.forward(&cols, rows);
        let g = self.gate(&h, rows);
        let u = self.deconv.forward(&g, rows);
        let mut y = vec![T::zero(); x.len()];
        for b in 0..layout.batch {
            for i in 0..layout.len {
                let r = layout.row(b, i);
                let dst = &mut y[r * d..(r + 1) * d];
                dst.copy_from_slice(&self.out_bias.data);
                for m in 0..k.min(i + 1) {
                    let p = i - m;
                    if p < j {
                        let src = &u[(b * j + p) * k * d + m * d..][..d];
                        for (o, s) in dst.iter_mut().zip(src) {
                            *o += *s;
                        }
                    }
                }
            }
        }
        (y, FfnCache { h })
    }

    /// Accumulates parameter gradients into `grad` and the input gradient into `dx`.
    pub fn backward(&self, x: &[T], cache: &FfnCache<T>, dy: &[T], layout: SeqLayout, grad: &mut Self, dx: &mut [T]) {
        let (d, k, c) = (self.dim(), self.kernel, self.hidden());
        let j = self.positions(layout.len);
        let rows = layout.batch * j;
        let w = k * d;

        let mut du = vec![T::zero(); rows * w];
        for b in 0..layout.batch {
            for i in 0..layout.len {
                let r = layout.row(b, i);
                let src = &dy[r * d..(r + 1) * d];
                for (g, s) in grad.out_bias.data.iter_mut().zip(src) {
                    *g += *s;
                }
                for m in 0..k.min(i + 1) {
                    let p = i - m;
                    if p < j {
                        du[(b * j + p) * w + m * d..][..d].copy_from_slice(src);
                    }
                }
            }
        }

        let g = self.gate(&cache.h, rows);
        let mut dg = vec![T::zero(); rows * c];
        self.deconv.backward(&g, &du, rows, &mut grad.deconv, Some(&mut dg));

        let mut dh = vec![T::zero(); rows * 2 * c];
        for r in 0..rows {
            for i in 0..c {
                let a = cache.h[r * 2 * c + i];
                let bgate = cache.h[r * 2 * c + c + i];
                let s = sigmoid(a);
                let silu = a * s;
                let dgi = dg[r * c + i];
                dh[r * 2 * c + i] = dgi * bgate * s * (T::one() + a * (T::one() - s));
                dh[r * 2 * c + c + i] = dgi * silu;
            }
        }

        let cols = self.im2col(x, layout);
        let mut dcols = vec![T::zero(); rows * w];
        self.conv.backward(&cols, &dh, rows, &mut grad.conv, Some(&mut dcols));

        for b in 0..layout.batch {
            for p in 0..j {
                let src = &dcols[(b * j + p) * w..(b * j + p + 1) * w];
                for m in 0..k {
                    let i = p + m;
                    if i < layout.len {
                        let r = layout.row(b, i);
                        for (o, s) in dx[r * d..(r + 1) * d].iter_mut().zip(&src[m * d..(m + 1) * d]) {
                            *o += *s;
                        }
                    }
                }
            }
        }
    }
}
