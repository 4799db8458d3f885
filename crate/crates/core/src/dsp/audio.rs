use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer<T = f32> {
    pub samples: Vec<T>,
    pub sample_rate_hz: u32,
}

impl<T: Real> AudioBuffer<T> {
    /// Builds a buffer, rejecting a zero rate or non-finite samples.
    pub fn new(samples: Vec<T>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidRate(0));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn zeros(len: usize, sample_rate_hz: u32) -> Self {
        Self { samples: alloc::vec![T::zero(); len], sample_rate_hz }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn scale(&mut self, gain: T) {
        for s in &mut self.samples {
            *s *= gain;
        }
    }

    pub fn cast<U: Real>(&self) -> AudioBuffer<U> {
        AudioBuffer {
            samples: self.samples.iter().map(|s| U::lit(s.as_f64())).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

/// Root-mean-square value, 0 for an empty slice.
pub fn rms<T: Real>(x: &[T]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    libm::sqrt(crate::real::energy(x) / x.len() as f64)
}

#[inline]
pub fn db_to_gain(db: f64) -> f64 {
    libm::pow(10.0, db / 20.0)
}
