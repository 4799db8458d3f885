//! Position-wise layers: affine maps and group-wise RMS normalization.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::param::{fan_in_bound, impl_parameters, Param};
use crate::real::{gemm, MatMut, MatRef, Real};

/// Row-wise affine map `y = x W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

impl_parameters!(Linear { weight, bias });

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, bias: bool, rng: &mut R) -> Self {
        let bound = fan_in_bound(in_dim);
        Self {
            weight: Param::uniform(&[in_dim, out_dim], bound, rng),
            bias: bias.then(|| Param::uniform(&[out_dim], bound, rng)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn forward(&self, x: &[T], rows: usize) -> Vec<T> {
        let mut y = vec![T::zero(); rows * self.out_dim()];
        self.forward_into(x, rows, &mut y);
        y
    }

    /// Writes `x W + b` into `y` (overwriting).
    pub fn forward_into(&self, x: &[T], rows: usize, y: &mut [T]) {
        let (i, o) = (self.in_dim(), self.out_dim());
        debug_assert_eq!(x.len(), rows * i);
        debug_assert_eq!(y.len(), rows * o);
        match &self.bias {
            Some(b) => {
                for r in 0..rows {
                    y[r * o..(r + 1) * o].copy_from_slice(&b.data);
                }
                gemm(rows, i, o, T::one(), MatRef::dense(x, i), MatRef::dense(&self.weight.data, o), T::one(), MatMut::dense(y, o));
            }
            None => {
                gemm(rows, i, o, T::one(), MatRef::dense(x, i), MatRef::dense(&self.weight.data, o), T::zero(), MatMut::dense(y, o));
            }
        }
    }

    /// Accumulates parameter gradients into `grad` and, when given, the
    /// input gradient into `dx`.
    pub fn backward(&self, x: &[T], dy: &[T], rows: usize, grad: &mut Self, dx: Option<&mut [T]>) {
        let (i, o) = (self.in_dim(), self.out_dim());
        gemm(i, rows, o, T::one(), MatRef::dense_t(x, i), MatRef::dense(dy, o), T::one(), MatMut::dense(&mut grad.weight.data, o));
        if let Some(gb) = &mut grad.bias {
            for r in 0..rows {
                for (g, d) in gb.data.iter_mut().zip(&dy[r * o..(r + 1) * o]) {
                    *g += *d;
                }
            }
        }
        if let Some(dx) = dx {
            gemm(rows, o, i, T::one(), MatRef::dense(dy, o), MatRef::dense_t(&self.weight.data, o), T::one(), MatMut::dense(dx, i));
        }
    }
}

/// RMS normalization over `groups` equal channel groups, with a per-channel
/// scale and optional per-channel shift.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRmsNorm<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    groups: usize,
    eps: f64,
}

impl_parameters!(GroupRmsNorm { weight, bias });

impl<T: Real> GroupRmsNorm<T> {
    pub fn new(dim: usize, groups: usize, bias: bool, eps: f64) -> Self {
        assert!(groups > 0 && dim.is_multiple_of(groups), "dim {dim} not divisible by {groups} groups");
        Self {
            weight: Param::filled(&[dim], T::one()),
            bias: bias.then(|| Param::zeros(&[dim])),
            groups,
            eps,
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.len()
    }

    /// Returns the normalized rows and the per-(row, group) inverse RMS.
    pub fn forward(&self, x: &[T], rows: usize) -> (Vec<T>, Vec<T>) {
        let d = self.dim();
        let gsize = d / self.groups;
        let eps = T::lit(self.eps);
        let inv_n = T::one() / T::lit(gsize as f64);
        let mut y = vec![T::zero(); rows * d];
        let mut inv = vec![T::zero(); rows * self.groups];
        for r in 0..rows {
            for g in 0..self.groups {
                let s = r * d + g * gsize;
                let ms = x[s..s + gsize].iter().fold(T::zero(), |a, v| a + *v * *v) * inv_n;
                let ir = T::one() / (ms + eps).sqrt();
                inv[r * self.groups + g] = ir;
                for c in 0..gsize {
                    let ch = g * gsize + c;
                    let mut v = x[s + c] * ir * self.weight.data[ch];
                    if let Some(b) = &self.bias {
                        v += b.data[ch];
                    }
                    y[s + c] = v;
                }
            }
        }
        (y, inv)
    }

    /// Accumulates into `grad` and `dx`.
    pub fn backward(&self, x: &[T], inv: &[T], dy: &[T], rows: usize, grad: &mut Self, dx: &mut [T]) {
        let d = self.dim();
        let gsize = d / self.groups;
        let inv_n = T::one() / T::lit(gsize as f64);
        for r in 0..rows {
            for g in 0..self.groups {
                let s = r * d + g * gsize;
                let ir = inv[r * self.groups + g];
                let mut dot = T::zero();
                for c in 0..gsize {
                    let ch = g * gsize + c;
                    let xhat = x[s + c] * ir;
                    grad.weight.data[ch] += dy[s + c] * xhat;
                    if let Some(gb) = &mut grad.bias {
                        gb.data[ch] += dy[s + c];
                    }
                    dot += dy[s + c] * self.weight.data[ch] * x[s + c];
                }
                let coef = ir * ir * ir * inv_n * dot;
                for c in 0..gsize {
                    let ch = g * gsize + c;
                    dx[s + c] += ir * self.weight.data[ch] * dy[s + c] - coef * x[s + c];
                }
            }
        }
    }
}

/// Fails with the stage name when any value is NaN or infinite.
pub(crate) fn ensure_finite<T: Real>(values: &[T], stage: impl FnOnce() -> alloc::string::String) -> crate::Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(crate::Error::NonFiniteStage(stage()))
    }
}

pub(crate) fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

pub(crate) fn add_scaled_into<T: Real>(dst: &mut [T], src: &[T], scale: T) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s * scale;
    }
}
