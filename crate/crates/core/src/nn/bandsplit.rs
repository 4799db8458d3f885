//! Per-band projection of a complex spectrogram into a `T x K x D` feature
//! grid, and the matching per-band mask decoder.
//!
//! Band `k` of a frame is flattened as `[re_0 .. re_{b-1}, im_0 .. im_{b-1}]`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::layers::{GroupRmsNorm, Linear};
use super::param::impl_parameters;
use crate::dsp::{BandSplitSpec, Spectrogram};
use crate::real::{sigmoid, Real};

fn gather_band<T: Real>(spec: &Spectrogram<T>, off: usize, width: usize) -> Vec<T> {
    let f = spec.num_bins;
    let mut out = vec![T::zero(); spec.num_frames * 2 * width];
    for t in 0..spec.num_frames {
        let row = &mut out[t * 2 * width..(t + 1) * 2 * width];
        row[..width].copy_from_slice(&spec.re[t * f + off..t * f + off + width]);
        row[width..].copy_from_slice(&spec.im[t * f + off..t * f + off + width]);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandEncoder<T> {
    /// Scale-only RMS norm over the `2 b_k` values of each band.
    pub norms: Vec<GroupRmsNorm<T>>,
    /// `2 b_k -> D`.
    pub proj: Vec<Linear<T>>,
    bands: BandSplitSpec,
}

impl_parameters!(BandEncoder { norms, proj });

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    frames: usize,
    normed: Vec<Vec<T>>,
}

impl<T: Real> BandEncoder<T> {
    pub fn new<R: Rng + ?Sized>(bands: &BandSplitSpec, dim: usize, eps: f64, rng: &mut R) -> Self {
        let norms = bands.widths().iter().map(|&b| GroupRmsNorm::new(2 * b, 1, false, eps)).collect();
        let proj = bands.widths().iter().map(|&b| Linear::new(2 * b, dim, true, rng)).collect();
        Self { norms, proj, bands: bands.clone() }
    }

    pub fn dim(&self) -> usize {
        self.proj[0].out_dim()
    }

    /// Writes the `T x K x D` grid (rows `t * K + k`).
    pub fn forward(&self, spec: &Spectrogram<T>) -> (Vec<T>, EncoderCache<T>) {
        let (frames, k_all, d) = (spec.num_frames, self.bands.num_bands(), self.dim());
        let mut grid = vec![T::zero(); frames * k_all * d];
        let mut normed = Vec::with_capacity(k_all);
        for (k, (&width, off)) in self.bands.widths().iter().zip(self.bands.offsets()).enumerate() {
            let x = gather_band(spec, off, width);
            let (n, _) = self.norms[k].forward(&x, frames);
            let y = self.proj[k].forward(&n, frames);
            for t in 0..frames {
                grid[(t * k_all + k) * d..(t * k_all + k + 1) * d].copy_from_slice(&y[t * d..(t + 1) * d]);
            }
            normed.push(n);
        }
        (grid, EncoderCache { frames, normed })
    }

    /// Accumulates parameter gradients. The spectrogram is an input, so no
    /// input gradient is produced. The norm has a scale only, and its
    /// gradient needs the raw band values, so `spec` is passed again.
    pub fn backward(&self, spec: &Spectrogram<T>, cache: &EncoderCache<T>, dgrid: &[T], grad: &mut Self) {
        let (frames, k_all, d) = (cache.frames, self.bands.num_bands(), self.dim());
        for (k, (&width, off)) in self.bands.widths().iter().zip(self.bands.offsets()).enumerate() {
            let mut dy = vec![T::zero(); frames * d];
            for t in 0..frames {
                dy[t * d..(t + 1) * d].copy_from_slice(&dgrid[(t * k_all + k) * d..(t * k_all + k + 1) * d]);
            }
            let mut dn = vec![T::zero(); frames * 2 * width];
            self.proj[k].backward(&cache.normed[k], &dy, frames, &mut grad.proj[k], Some(&mut dn));
            // d(weight) = sum dn * x * inv_rms, i.e. dn * normed / weight.
            let x = gather_band(spec, off, width);
            let (_, inv) = self.norms[k].forward(&x, frames);
            let c = 2 * width;
            for t in 0..frames {
                for i in 0..c {
                    grad.norms[k].weight.data[i] += dn[t * c + i] * x[t * c + i] * inv[t];
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandDecoder<T> {
    pub norms: Vec<GroupRmsNorm<T>>,
    /// `D -> 4D`, tanh.
    pub fc1: Vec<Linear<T>>,
    /// `4D -> 4 b_k`, gated linear unit down to `2 b_k` mask values.
    pub fc2: Vec<Linear<T>>,
    bands: BandSplitSpec,
}

impl_parameters!(BandDecoder { norms, fc1, fc2 });

#[derive(Debug, Clone)]
struct BandState<T> {
    x: Vec<T>,
    n: Vec<T>,
    inv: Vec<T>,
    a1: Vec<T>,
    z: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct DecoderCache<T> {
    frames: usize,
    bands: Vec<BandState<T>>,
}

impl<T: Real> BandDecoder<T> {
    pub fn new<R: Rng + ?Sized>(bands: &BandSplitSpec, dim: usize, eps: f64, rng: &mut R) -> Self {
        let w = bands.widths();
        Self {
            norms: w.iter().map(|_| GroupRmsNorm::new(dim, 1, true, eps)).collect(),
            fc1: w.iter().map(|_| Linear::new(dim, 4 * dim, true, rng)).collect(),
            fc2: w.iter().map(|&b| Linear::new(4 * dim, 4 * b, true, rng)).collect(),
            bands: bands.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.fc1[0].in_dim()
    }

    /// Estimates a spectrogram by masking `mix` with per-band complex masks
    /// computed from `grid` (`frames x K x D`).
    pub fn forward(&self, grid: &[T], mix: &Spectrogram<T>) -> (Spectrogram<T>, DecoderCache<T>) {
        let (frames, k_all, d) = (mix.num_frames, self.bands.num_bands(), self.dim());
        let f = mix.num_bins;
        let mut est = Spectrogram::zeros(frames, mix.config, mix.sample_rate_hz);
        let mut states = Vec::with_capacity(k_all);
        for (k, (&width, off)) in self.bands.widths().iter().zip(self.bands.offsets()).enumerate() {
            let mut x = vec![T::zero(); frames * d];
            for t in 0..frames {
                x[t * d..(t + 1) * d].copy_from_slice(&grid[(t * k_all + k) * d..(t * k_all + k + 1) * d]);
            }
            let (n, inv) = self.norms[k].forward(&x, frames);
            let mut a1 = self.fc1[k].forward(&n, frames);
            a1.iter_mut().for_each(|v| *v = v.tanh());
            let z = self.fc2[k].forward(&a1, frames);
            let zw = 4 * width;
            for t in 0..frames {
                let zr = &z[t * zw..(t + 1) * zw];
                for b in 0..width {
                    let mr = zr[b] * sigmoid(zr[2 * width + b]);
                    let mi = zr[width + b] * sigmoid(zr[3 * width + b]);
                    let idx = t * f + off + b;
                    let (xr, xi) = (mix.re[idx], mix.im[idx]);
                    est.re[idx] = mr * xr - mi * xi;
                    est.im[idx] = mr * xi + mi * xr;
                }
            }
            states.push(BandState { x, n, inv, a1, z });
        }
        (est, DecoderCache { frames, bands: states })
    }

    /// Returns the grid gradient for an upstream gradient on the estimate.
    pub fn backward(
        &self,
        cache: &DecoderCache<T>,
        mix: &Spectrogram<T>,
        d_re: &[T],
        d_im: &[T],
        grad: &mut Self,
    ) -> Vec<T> {
        let (frames, k_all, d) = (cache.frames, self.bands.num_bands(), self.dim());
        let f = mix.num_bins;
        let mut dgrid = vec![T::zero(); frames * k_all * d];
        for (k, (&width, off)) in self.bands.widths().iter().zip(self.bands.offsets()).enumerate() {
            let st = &cache.bands[k];
            let zw = 4 * width;
            let mut dz = vec![T::zero(); frames * zw];
            for t in 0..frames {
                let zr = &st.z[t * zw..(t + 1) * zw];
                let dzr = &mut dz[t * zw..(t + 1) * zw];
                for b in 0..width {
                    let idx = t * f + off + b;
                    let (xr, xi) = (mix.re[idx], mix.im[idx]);
                    let (gr, gi) = (d_re[idx], d_im[idx]);
                    let dmr = gr * xr + gi * xi;
                    let dmi = gi * xr - gr * xi;
                    for (val, gate, dm) in [(b, 2 * width + b, dmr), (width + b, 3 * width + b, dmi)] {
                        let s = sigmoid(zr[gate]);
                        dzr[val] = dm * s;
                        dzr[gate] = dm * zr[val] * s * (T::one() - s);
                    }
                }
            }
            let mut da1 = vec![T::zero(); frames * 4 * d];
            self.fc2[k].backward(&st.a1, &dz, frames, &mut grad.fc2[k], Some(&mut da1));
            for (g, a) in da1.iter_mut().zip(&st.a1) {
                *g *= T::one() - *a * *a;
            }
            let mut dn = vec![T::zero(); frames * d];
            self.fc1[k].backward(&st.n, &da1, frames, &mut grad.fc1[k], Some(&mut dn));
            let mut dx = vec![T::zero(); frames * d];
            self.norms[k].backward(&st.x, &st.inv, &dn, frames, &mut grad.norms[k], &mut dx);
            for t in 0..frames {
                dgrid[(t * k_all + k) * d..(t * k_all + k + 1) * d].copy_from_slice(&dx[t * d..(t + 1) * d]);
            }
        }
        dgrid
    }

    /// Makes every band emit the constant mask `re + j im`, independent of
    /// the features (the gates saturate at one).
    pub fn force_mask(&mut self, re: T, im: T) {
        for (k, &width) in self.bands.widths().iter().enumerate() {
            let fc2 = &mut self.fc2[k];
            fc2.weight.data.iter_mut().for_each(|v| *v = T::zero());
            let bias = &mut fc2.bias.as_mut().expect("decoder output has a bias").data;
            for b in 0..width {
                bias[b] = re;
                bias[width + b] = im;
                bias[2 * width + b] = T::lit(100.0);
                bias[3 * width + b] = T::lit(100.0);
            }
        }
    }
}
