//! Centered STFT / inverse STFT with window-normalized overlap-add.
//!
//! Frames start at `t * hop` on the signal padded with `fft_length / 2` zeros
//! on both sides, so `T = 1 + len / hop`. Synthesis divides the overlap-added
//! frames by the overlap-added squared window, which makes `istft(stft(x))`
//! the identity on the original support for every config that passes
//! [`StftConfig::validate`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::audio::AudioBuffer;
use super::fft::FftPlan;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    /// Square root of the periodic Hann window.
    SqrtHann,
    /// Periodic Hann window.
    Hann,
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_length: usize,
    pub hop_length: usize,
    pub fft_length: usize,
    pub window_kind: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { window_length: 2048, hop_length: 480, fft_length: 2048, window_kind: WindowKind::SqrtHann }
    }
}

impl StftConfig {
    pub fn new(window_length: usize, hop_length: usize) -> Self {
        Self { window_length, hop_length, fft_length: window_length, window_kind: WindowKind::SqrtHann }
    }

    /// Default config with window and hop scaled to `sample_rate_hz` (10 ms hop).
    pub fn for_sample_rate(sample_rate_hz: u32) -> Self {
        let scale = sample_rate_hz as f64 / 48_000.0;
        let window = ((2048.0 * scale / 2.0) as usize).max(1) * 2;
        let hop = ((480.0 * scale) as usize).clamp(1, window / 2);
        Self::new(window, hop)
    }

    /// Number of frequency bins, `fft_length / 2 + 1`.
    pub fn num_bins(&self) -> usize {
        self.fft_length / 2 + 1
    }

    pub fn num_frames(&self, num_samples: usize) -> usize {
        1 + num_samples / self.hop_length
    }

    /// Window of `fft_length` samples with the analysis window centered in it.
    pub fn window<T: Real>(&self) -> Vec<T> {
        let n = self.window_length;
        let offset = (self.fft_length - n) / 2;
        let mut w = vec![T::zero(); self.fft_length];
        for i in 0..n {
            let hann = 0.5 - 0.5 * libm::cos(2.0 * core::f64::consts::PI * i as f64 / n as f64);
            let v = match self.window_kind {
                WindowKind::SqrtHann => libm::sqrt(hann),
                WindowKind::Hann => hann,
                WindowKind::Rectangular => 1.0,
            };
            w[offset + i] = T::lit(v);
        }
        w
    }

    /// Checks `0 < hop <= window <= fft` and that the squared window
    /// overlap-adds to a strictly positive sum at every phase.
    pub fn validate(&self) -> Result<()> {
        let StftConfig { window_length: win, hop_length: hop, fft_length: fft, .. } = *self;
        if hop == 0 || hop > win || win > fft {
            return Err(Error::InvalidStftConfig(format!(
                "require 0 < hop ({hop}) <= window ({win}) <= fft ({fft})"
            )));
        }
        let w: Vec<f64> = self.window();
        let peak = w.iter().fold(0.0f64, |a, b| a.max(b * b));
        let mut min_sum = f64::INFINITY;
        for phase in 0..hop {
            let s: f64 = (phase..fft).step_by(hop).map(|i| w[i] * w[i]).sum();
            min_sum = min_sum.min(s);
        }
        if !(min_sum > 1e-6 * peak) {
            return Err(Error::OverlapAdd(format!(
                "squared window overlap-adds to {min_sum:e} at some phase (window {win}, hop {hop})"
            )));
        }
        Ok(())
    }
}

/// Complex spectrogram stored as separate `T x F` real and imaginary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T = f32> {
    pub num_frames: usize,
    pub num_bins: usize,
    pub re: Vec<T>,
    pub im: Vec<T>,
    pub config: StftConfig,
    pub sample_rate_hz: u32,
}

impl<T: Real> Spectrogram<T> {
    pub fn zeros(num_frames: usize, config: StftConfig, sample_rate_hz: u32) -> Self {
        let num_bins = config.num_bins();
        Self {
            num_frames,
            num_bins,
            re: vec![T::zero(); num_frames * num_bins],
            im: vec![T::zero(); num_frames * num_bins],
            config,
            sample_rate_hz,
        }
    }

    pub fn magnitude(&self, frame: usize, bin: usize) -> T {
        let i = frame * self.num_bins + bin;
        (self.re[i] * self.re[i] + self.im[i] * self.im[i]).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }
}

/// Precomputed STFT engine for one config.
#[derive(Debug, Clone)]
pub struct Stft<T> {
    config: StftConfig,
    window: Vec<T>,
    plan: FftPlan<T>,
}

impl<T: Real> Stft<T> {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, window: config.window(), plan: FftPlan::new(config.fft_length) })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    fn pad(&self) -> usize {
        self.config.fft_length / 2
    }

    pub fn forward(&self, samples: &[T], sample_rate_hz: u32) -> Result<Spectrogram<T>> {
        if samples.is_empty() {
            return Err(Error::EmptySignal);
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let n = self.config.fft_length;
        let hop = self.config.hop_length;
        let pad = self.pad() as isize;
        let frames = self.config.num_frames(samples.len());
        let mut spec = Spectrogram::zeros(frames, self.config, sample_rate_hz);
        let bins = spec.num_bins;
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for t in 0..frames {
            let start = (t * hop) as isize - pad;
            for (i, b) in buf.iter_mut().enumerate() {
                let idx = start + i as isize;
                let v = if idx >= 0 && (idx as usize) < samples.len() { samples[idx as usize] } else { T::zero() };
                *b = Complex::new(v * self.window[i], T::zero());
            }
            self.plan.forward(&mut buf);
            for k in 0..bins {
                spec.re[t * bins + k] = buf[k].re;
                spec.im[t * bins + k] = buf[k].im;
            }
        }
        Ok(spec)
    }

    /// Overlap-added squared window over the padded timeline.
    fn window_sum(&self, frames: usize) -> Vec<T> {
        let n = self.config.fft_length;
        let hop = self.config.hop_length;
        let mut norm = vec![T::zero(); (frames - 1) * hop + n];
        for t in 0..frames {
            for i in 0..n {
                norm[t * hop + i] += self.window[i] * self.window[i];
            }
        }
        norm
    }

    fn check_spec(&self, spec: &Spectrogram<T>, target_length: usize) -> Result<()> {
        if spec.config != self.config {
            return Err(Error::Shape("spectrogram config differs from STFT engine".into()));
        }
        if spec.num_frames == 0 || spec.re.len() != spec.num_frames * spec.num_bins || spec.im.len() != spec.re.len() {
            return Err(Error::Shape("spectrogram planes do not match T x F".into()));
        }
        let implied = (spec.num_frames - 1) * self.config.hop_length;
        if target_length.abs_diff(implied) > self.config.window_length {
            return Err(Error::Shape(format!(
                "target length {target_length} is inconsistent with {} frames",
                spec.num_frames
            )));
        }
        Ok(())
    }

    /// Window-normalized overlap-add synthesis trimmed to `target_length`.
    pub fn inverse(&self, spec: &Spectrogram<T>, target_length: usize) -> Result<Vec<T>> {
        self.check_spec(spec, target_length)?;
        let n = self.config.fft_length;
        let hop = self.config.hop_length;
        let bins = spec.num_bins;
        let frames = spec.num_frames;
        let mut acc = vec![T::zero(); (frames - 1) * hop + n];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for t in 0..frames {
            self.fill_hermitian(&spec.re[t * bins..(t + 1) * bins], &spec.im[t * bins..(t + 1) * bins], &mut buf);
            self.plan.inverse(&mut buf);
            for i in 0..n {
                acc[t * hop + i] += buf[i].re * self.window[i];
            }
        }
        let norm = self.window_sum(frames);
        let floor = self.norm_floor();
        let pad = self.pad();
        Ok((0..target_length)
            .map(|i| {
                let p = i + pad;
                if p < acc.len() && norm[p] > floor { acc[p] / norm[p] } else { T::zero() }
            })
            .collect())
    }

    /// Adjoint of [`Stft::inverse`]: maps a waveform gradient to gradients
    /// with respect to the real and imaginary planes.
    pub fn inverse_adjoint(&self, grad: &[T], num_frames: usize) -> (Vec<T>, Vec<T>) {
        let n = self.config.fft_length;
        let hop = self.config.hop_length;
        let bins = self.config.num_bins();
        let norm = self.window_sum(num_frames);
        let floor = self.norm_floor();
        let pad = self.pad();
        let mut g_pad = vec![T::zero(); norm.len()];
        for (i, g) in grad.iter().enumerate() {
            let p = i + pad;
            if p < norm.len() && norm[p] > floor {
                g_pad[p] = *g / norm[p];
            }
        }
        let mut re = vec![T::zero(); num_frames * bins];
        let mut im = vec![T::zero(); num_frames * bins];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        let inv_n = T::one() / T::lit(n as f64);
        for t in 0..num_frames {
            for i in 0..n {
                buf[i] = Complex::new(g_pad[t * hop + i] * self.window[i], T::zero());
            }
            self.plan.forward(&mut buf);
            for k in 0..bins {
                let single = k == 0 || (n.is_multiple_of(2) && k == n / 2);
                let c = if single { inv_n } else { inv_n + inv_n };
                re[t * bins + k] = buf[k].re * c;
                im[t * bins + k] = buf[k].im * c;
            }
        }
        (re, im)
    }

    fn norm_floor(&self) -> T {
        let peak = self.window.iter().fold(T::zero(), |a, w| a.max(*w * *w));
        peak * T::lit(1e-6)
    }

    fn fill_hermitian(&self, re: &[T], im: &[T], buf: &mut [Complex<T>]) {
        let n = self.config.fft_length;
        let bins = re.len();
        for k in 0..bins {
            buf[k] = Complex::new(re[k], im[k]);
        }
        for k in 1..bins {
            if n - k >= bins {
                buf[n - k] = Complex::new(re[k], -im[k]);
            }
        }
    }
}

/// One-shot STFT of an audio buffer.
pub fn stft<T: Real>(audio: &AudioBuffer<T>, config: StftConfig) -> Result<Spectrogram<T>> {
    Stft::new(config)?.forward(&audio.samples, audio.sample_rate_hz)
}

/// One-shot inverse STFT.
pub fn istft<T: Real>(spec: &Spectrogram<T>, target_length: usize) -> Result<AudioBuffer<T>> {
    let samples = Stft::new(spec.config)?.inverse(spec, target_length)?;
    Ok(AudioBuffer { samples, sample_rate_hz: spec.sample_rate_hz })
}
