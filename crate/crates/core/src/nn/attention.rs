//! Multi-head self-attention with optional rotary position encoding.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::ffn::SeqLayout;
use super::layers::Linear;
use super::param::impl_parameters;
use crate::real::{gemm, MatMut, MatRef, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    /// `D -> 3 * H * E`, columns ordered `[q heads | k heads | v heads]`.
    pub qkv: Linear<T>,
    /// `H * E -> D`.
    pub out: Linear<T>,
    heads: usize,
    head_dim: usize,
    rope: bool,
    rope_base: f64,
}

impl_parameters!(Attention { qkv, out });

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    /// Projected queries, keys and values after rotation.
    qkv: Vec<T>,
    /// Concatenated head outputs.
    o: Vec<T>,
}

struct Rope<T> {
    cos: Vec<T>,
    sin: Vec<T>,
    half: usize,
}

impl<T: Real> Rope<T> {
    fn new(len: usize, head_dim: usize, base: f64) -> Self {
        let half = head_dim / 2;
        let mut cos = vec![T::zero(); len * half];
        let mut sin = vec![T::zero(); len * half];
        for i in 0..len {
            for p in 0..half {
                let freq = libm::pow(base, -(2.0 * p as f64) / head_dim as f64);
                let a = i as f64 * freq;
                cos[i * half + p] = T::lit(libm::cos(a));
                sin[i * half + p] = T::lit(libm::sin(a));
            }
        }
        Self { cos, sin, half }
    }

    /// Rotates pairs `(2p, 2p + 1)` of `v`, the head vector at position `i`.
    /// `inverse` applies the transpose rotation.
    fn apply(&self, v: &mut [T], i: usize, inverse: bool) {
        for p in 0..self.half {
            let (c, mut s) = (self.cos[i * self.half + p], self.sin[i * self.half + p]);
            if inverse {
                s = -s;
            }
            let (a, b) = (v[2 * p], v[2 * p + 1]);
            v[2 * p] = a * c - b * s;
            v[2 * p + 1] = a * s + b * c;
        }
    }
}

impl<T: Real> Attention<T> {
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        heads: usize,
        head_dim: usize,
        rope: bool,
        rope_base: f64,
        rng: &mut R,
    ) -> Self {
        assert!(!rope || head_dim.is_multiple_of(2), "rotary encoding needs an even head width");
        Self {
            qkv: Linear::new(dim, 3 * heads * head_dim, false, rng),
            out: Linear::new(heads * head_dim, dim, false, rng),
            heads,
            head_dim,
            rope,
            rope_base,
        }
    }

    fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    fn rotate(&self, qkv: &mut [T], layout: SeqLayout, rope: &Rope<T>, inverse: bool) {
        let (he, e) = (self.width(), self.head_dim);
        for b in 0..layout.batch {
            for i in 0..layout.len {
                let r = layout.row(b, i);
                for h in 0..self.heads {
                    for part in 0..2 {
                        let s = r * 3 * he + part * he + h * e;
                        rope.apply(&mut qkv[s..s + e], i, inverse);
                    }
                }
            }
        }
    }

    /// Softmax of scaled scores for sequence `b`, head `h`, into `p` (`L x L`).
    fn probs(&self, qkv: &[T], layout: SeqLayout, b: usize, h: usize, p: &mut [T]) {
        let (he, e, l) = (self.width(), self.head_dim, layout.len);
        let row0 = layout.row(b, 0);
        let rs = layout.stride_i * 3 * he;
        let scale = T::one() / T::lit(e as f64).sqrt();
        let q = MatRef::strided(qkv, row0 * 3 * he + h * e, rs, 1);
        let kt = MatRef::strided(qkv, row0 * 3 * he + he + h * e, 1, rs);
        gemm(l, e, l, scale, q, kt, T::zero(), MatMut::dense(p, l));
        for i in 0..l {
            let row = &mut p[i * l..(i + 1) * l];
            let m = row.iter().fold(T::neg_infinity(), |a, v| a.max(*v));
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                sum += *v;
            }
            let inv = T::one() / sum;
            row.iter_mut().for_each(|v| *v *= inv);
        }
    }

    pub fn forward(&self, x: &[T], layout: SeqLayout) -> (Vec<T>, AttentionCache<T>) {
        let rows = layout.rows();
        let (he, e, l) = (self.width(), self.head_dim, layout.len);
        let mut qkv = self.qkv.forward(x, rows);
        if self.rope {
            let rope = Rope::new(l, e, self.rope_base);
            self.rotate(&mut qkv, layout, &rope, false);
        }
        let mut o = vec![T::zero(); rows * he];
        let mut p = vec![T::zero(); l * l];
        let rs = layout.stride_i * 3 * he;
        for b in 0..layout.batch {
            let row0 = layout.row(b, 0);
            for h in 0..self.heads {
                self.probs(&qkv, layout, b, h, &mut p);
                let v = MatRef::strided(&qkv, row0 * 3 * he + 2 * he + h * e, rs, 1);
                let dst = MatMut::strided(&mut o, row0 * he + h * e, layout.stride_i * he, 1);
                gemm(l, l, e, T::one(), MatRef::dense(&p, l), v, T::zero(), dst);
            }
        }
        let y = self.out.forward(&o, rows);
        (y, AttentionCache { qkv, o })
    }

    /// Accumulates into `grad` and `dx`.
    pub fn backward(&self, x: &[T], cache: &AttentionCache<T>, dy: &[T], layout: SeqLayout, grad: &mut Self, dx: &mut [T]) {
        let rows = layout.rows();
        let (he, e, l) = (self.width(), self.head_dim, layout.len);
        let mut d_o = vec![T::zero(); rows * he];
        self.out.backward(&cache.o, dy, rows, &mut grad.out, Some(&mut d_o));

        let qkv = &cache.qkv;
        let mut dqkv = vec![T::zero(); rows * 3 * he];
        let mut p = vec![T::zero(); l * l];
        let mut dp = vec![T::zero(); l * l];
        let rs = layout.stride_i * 3 * he;
        let ors = layout.stride_i * he;
        let scale = T::one() / T::lit(e as f64).sqrt();
        for b in 0..layout.batch {
            let row0 = layout.row(b, 0);
            let qo = row0 * 3 * he;
            for h in 0..self.heads {
                self.probs(qkv, layout, b, h, &mut p);
                let dout = MatRef::strided(&d_o, row0 * he + h * e, ors, 1);
                // dV = P^T dO
                gemm(l, l, e, T::one(), MatRef::dense_t(&p, l), dout, T::zero(), MatMut::strided(&mut dqkv, qo + 2 * he + h * e, rs, 1));
                // dP = dO V^T
                let vt = MatRef::strided(qkv, qo + 2 * he + h * e, 1, rs);
                gemm(l, e, l, T::one(), dout, vt, T::zero(), MatMut::dense(&mut dp, l));
                // dS = P * (dP - rowsum(dP * P))
                for i in 0..l {
                    let pr = &p[i * l..(i + 1) * l];
                    let dr = &mut dp[i * l..(i + 1) * l];
                    let dot = pr.iter().zip(dr.iter()).fold(T::zero(), |a, (x, y)| a + *x * *y);
                    for (d, pv) in dr.iter_mut().zip(pr) {
                        *d = *pv * (*d - dot);
                    }
                }
                // dQ = scale dS K, dK = scale dS^T Q
                let kmat = MatRef::strided(qkv, qo + he + h * e, rs, 1);
                gemm(l, l, e, scale, MatRef::dense(&dp, l), kmat, T::zero(), MatMut::strided(&mut dqkv, qo + h * e, rs, 1));
                let qmat = MatRef::strided(qkv, qo + h * e, rs, 1);
                gemm(l, l, e, scale, MatRef::dense_t(&dp, l), qmat, T::zero(), MatMut::strided(&mut dqkv, qo + he + h * e, rs, 1));
            }
        }
        if self.rope {
            let rope = Rope::new(l, e, self.rope_base);
            self.rotate(&mut dqkv, layout, &rope, true);
        }
        self.qkv.backward(x, &dqkv, rows, &mut grad.qkv, Some(dx));
    }
}
