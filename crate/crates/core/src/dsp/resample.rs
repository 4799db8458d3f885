//! Band-limited resampling with a Blackman-windowed sinc kernel.
//!
//! The conversion ratio is reduced to `up / down`; each output sample sits at
//! source position `j * down / up`, so the kernel is needed at only `up`
//! fractional phases. Those are tabulated when `up` is small and evaluated on
//! the fly otherwise.

use alloc::vec;
use alloc::vec::Vec;

use super::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::real::Real;

/// Fraction of the lower Nyquist frequency kept by the anti-aliasing filter.
pub const CUTOFF: f64 = 0.9;
/// Number of sinc zero crossings on each side of the kernel center.
const ZERO_CROSSINGS: f64 = 48.0;
const MAX_TABLE_PHASES: u64 = 2048;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Output length `round(len * target / source)`.
pub fn resampled_len(len: usize, source_rate: u32, target_rate: u32) -> usize {
    ((len as u128 * target_rate as u128 * 2 + source_rate as u128) / (2 * source_rate as u128)) as usize
}

struct Kernel {
    /// Cutoff in cycles per source sample, doubled (`2 fc`).
    two_fc: f64,
    half_width: f64,
}

impl Kernel {
    fn new(source_rate: u32, target_rate: u32) -> Self {
        let ratio = (target_rate as f64 / source_rate as f64).min(1.0);
        let two_fc = CUTOFF * ratio;
        Self { two_fc, half_width: ZERO_CROSSINGS / two_fc }
    }

    fn eval(&self, t: f64) -> f64 {
        if libm::fabs(t) >= self.half_width {
            return 0.0;
        }
        let x = self.two_fc * t;
        let sinc = if libm::fabs(x) < 1e-12 {
            1.0
        } else {
            let px = core::f64::consts::PI * x;
            libm::sin(px) / px
        };
        let u = (t / self.half_width + 1.0) * 0.5; // 0..1 across the support
        let tau = 2.0 * core::f64::consts::PI * u;
        let window = 0.42 - 0.5 * libm::cos(tau) + 0.08 * libm::cos(2.0 * tau);
        self.two_fc * sinc * window
    }
}

/// Resamples to `target_rate_hz`; equal rates return an exact copy.
pub fn resample<T: Real>(audio: &AudioBuffer<T>, target_rate_hz: i64) -> Result<AudioBuffer<T>> {
    if target_rate_hz <= 0 || target_rate_hz > u32::MAX as i64 {
        return Err(Error::InvalidRate(target_rate_hz));
    }
    let target = target_rate_hz as u32;
    let source = audio.sample_rate_hz;
    if source == 0 {
        return Err(Error::InvalidRate(0));
    }
    if source == target {
        return Ok(audio.clone());
    }
    let g = gcd(source as u64, target as u64);
    let up = target as u64 / g;
    let down = source as u64 / g;
    let out_len = resampled_len(audio.samples.len(), source, target);
    let kernel = Kernel::new(source, target);
    let reach = libm::ceil(kernel.half_width) as i64;
    let taps = (2 * reach + 1) as usize;
    let x: Vec<f64> = audio.samples.iter().map(|v| v.as_f64()).collect();

    // Output j sits at source position (j*down)/up = base + phase/up.
    let table: Option<Vec<f64>> = (up <= MAX_TABLE_PHASES).then(|| {
        let mut tab = vec![0.0; up as usize * taps];
        for phase in 0..up {
            let frac = phase as f64 / up as f64;
            for k in 0..taps {
                let i = k as i64 - reach;
                tab[phase as usize * taps + k] = kernel.eval(frac - i as f64);
            }
        }
        tab
    });

    let mut out = Vec::with_capacity(out_len);
    let n = x.len() as i64;
    for j in 0..out_len as u64 {
        let pos = j * down;
        let base = (pos / up) as i64;
        let phase = pos % up;
        let frac = phase as f64 / up as f64;
        let mut acc = 0.0;
        for k in 0..taps {
            let idx = base + k as i64 - reach;
            if idx < 0 || idx >= n {
                continue;
            }
            let h = match &table {
                Some(tab) => tab[phase as usize * taps + k],
                None => kernel.eval(frac - (k as i64 - reach) as f64),
            };
            acc += h * x[idx as usize];
        }
        out.push(T::lit(acc));
    }
    Ok(AudioBuffer { samples: out, sample_rate_hz: target })
}
