//! Contiguous partition of the frequency axis into subbands.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::stft::Spectrogram;
use crate::error::{Error, Result};
use crate::real::Real;

/// 62-band table for 1025 bins (2048-point FFT): 24x2, 12x4, 8x12, 8x24, 8x48, 128, 129.
pub const TABLE_62_FOR_1025: [usize; 62] = {
    let mut t = [0usize; 62];
    let mut i = 0;
    while i < 62 {
        t[i] = if i < 24 {
            2
        } else if i < 36 {
            4
        } else if i < 44 {
            12
        } else if i < 52 {
            24
        } else if i < 60 {
            48
        } else if i == 60 {
            128
        } else {
            129
        };
        i += 1;
    }
    t
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct BandSplitSpec {
    widths: Vec<usize>,
}

impl BandSplitSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::InvalidConfig("band widths must be positive and non-empty".into()));
        }
        Ok(Self { widths })
    }

    /// Default 62-band layout scaled to `num_bins`: narrow bands at low
    /// frequencies widening toward Nyquist, summing exactly to `num_bins`.
    pub fn default_for(num_bins: usize) -> Self {
        Self::scaled(&TABLE_62_FOR_1025, num_bins)
    }

    /// `num_bands` bands of near-equal width.
    pub fn uniform(num_bins: usize, num_bands: usize) -> Self {
        assert!(num_bands >= 1 && num_bands <= num_bins);
        let base = num_bins / num_bands;
        let extra = num_bins % num_bands;
        // Wider bands go to the top of the spectrum.
        let widths = (0..num_bands).map(|k| base + usize::from(k >= num_bands - extra)).collect();
        Self { widths }
    }

    /// Proportionally rescales a reference table to `num_bins`, keeping the
    /// band count where possible (each band keeps at least one bin).
    pub fn scaled(reference: &[usize], num_bins: usize) -> Self {
        let k = reference.len().min(num_bins);
        if k < reference.len() {
            return Self::uniform(num_bins, k);
        }
        let total: usize = reference.iter().sum();
        if total == num_bins {
            return Self { widths: reference.to_vec() };
        }
        // Largest-remainder allocation of the bins above the one-per-band floor.
        let spare = num_bins - k;
        let ideal: Vec<f64> = reference
            .iter()
            .map(|&w| (w as f64 / total as f64) * num_bins as f64 - 1.0)
            .map(|v| v.max(0.0))
            .collect();
        let ideal_sum: f64 = ideal.iter().sum();
        let share: Vec<f64> = ideal.iter().map(|v| v / ideal_sum * spare as f64).collect();
        let mut widths: Vec<usize> = share.iter().map(|v| 1 + libm::floor(*v) as usize).collect();
        let mut left = num_bins - widths.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            let fa = share[a] - libm::floor(share[a]);
            let fb = share[b] - libm::floor(share[b]);
            fb.partial_cmp(&fa).unwrap().then(b.cmp(&a))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            widths[i] += 1;
            left -= 1;
        }
        Self { widths }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn num_bands(&self) -> usize {
        self.widths.len()
    }

    pub fn num_bins(&self) -> usize {
        self.widths.iter().sum()
    }

    /// First bin of each band.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.widths
            .iter()
            .map(|w| {
                let o = acc;
                acc += w;
                o
            })
            .collect()
    }

    pub fn check_bins(&self, num_bins: usize) -> Result<()> {
        let sum = self.num_bins();
        if sum != num_bins {
            return Err(Error::BandWidths { sum, bins: num_bins });
        }
        Ok(())
    }
}

impl TryFrom<Vec<usize>> for BandSplitSpec {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BandSplitSpec> for Vec<usize> {
    fn from(b: BandSplitSpec) -> Self {
        b.widths
    }
}

/// One subband: `T x width x 2` with real and imaginary parts interleaved
/// per bin (`data[(t * width + b) * 2 + {0, 1}]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Subband<T> {
    pub num_frames: usize,
    pub width: usize,
    pub data: Vec<T>,
}

pub fn band_partition<T: Real>(spec: &Spectrogram<T>, bands: &BandSplitSpec) -> Result<Vec<Subband<T>>> {
    bands.check_bins(spec.num_bins)?;
    let f = spec.num_bins;
    Ok(bands
        .widths()
        .iter()
        .zip(bands.offsets())
        .map(|(&width, off)| {
            let mut data = vec![T::zero(); spec.num_frames * width * 2];
            for t in 0..spec.num_frames {
                for b in 0..width {
                    data[(t * width + b) * 2] = spec.re[t * f + off + b];
                    data[(t * width + b) * 2 + 1] = spec.im[t * f + off + b];
                }
            }
            Subband { num_frames: spec.num_frames, width, data }
        })
        .collect())
}

/// Frequency-axis concatenation; inverse of [`band_partition`].
pub fn band_concat<T: Real>(
    bands: &[Subband<T>],
    template: &Spectrogram<T>,
) -> Result<Spectrogram<T>> {
    let f: usize = bands.iter().map(|b| b.width).sum();
    if f != template.num_bins || bands.iter().any(|b| b.num_frames != template.num_frames) {
        return Err(Error::Shape("subbands do not tile the spectrogram".into()));
    }
    let mut out = Spectrogram::zeros(template.num_frames, template.config, template.sample_rate_hz);
    let mut off = 0;
    for band in bands {
        for t in 0..band.num_frames {
            for b in 0..band.width {
                out.re[t * f + off + b] = band.data[(t * band.width + b) * 2];
                out.im[t * f + off + b] = band.data[(t * band.width + b) * 2 + 1];
            }
        }
        off += band.width;
    }
    Ok(out)
}
