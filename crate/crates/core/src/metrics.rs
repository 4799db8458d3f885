//! Evaluation metrics. All accumulation happens in `f64`.

use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Numerical floor added to both energies in SNR-type ratios.
pub const EPS: f64 = 1e-8;

pub(crate) fn check_lengths<T>(reference: &[T], estimate: &[T]) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::LengthMismatch { expected: reference.len(), actual: estimate.len() });
    }
    if reference.is_empty() {
        return Err(Error::EmptySignal);
    }
    Ok(())
}

/// `(||s||^2, ||s - s_hat||^2)`.
pub(crate) fn energies<T: Real>(reference: &[T], estimate: &[T]) -> (f64, f64) {
    reference.iter().zip(estimate).fold((0.0, 0.0), |(s, e), (r, x)| {
        let (r, x) = (r.as_f64(), x.as_f64());
        (s + r * r, e + (r - x) * (r - x))
    })
}

pub fn snr_db<T: Real>(reference: &[T], estimate: &[T]) -> Result<f64> {
    check_lengths(reference, estimate)?;
    let (s, e) = energies(reference, estimate);
    if s == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(10.0 * libm::log10((s + EPS) / (e + EPS)))
}

pub fn si_snr_db<T: Real>(reference: &[T], estimate: &[T]) -> Result<f64> {
    check_lengths(reference, estimate)?;
    let n = reference.len() as f64;
    let ms = reference.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let me = estimate.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let (mut ss, mut dot, mut ee) = (0.0, 0.0, 0.0);
    for (r, x) in reference.iter().zip(estimate) {
        let (r, x) = (r.as_f64() - ms, x.as_f64() - me);
        ss += r * r;
        dot += r * x;
        ee += x * x;
    }
    if ss == 0.0 {
        return Err(Error::ZeroReference);
    }
    if ee == 0.0 {
        return Err(Error::ZeroEstimate);
    }
    // The estimate is first rescaled to the reference's norm, so the floor
    // sits at a fixed level relative to the reference and the metric is
    // exactly invariant to estimate gain. Off the floor this is the usual
    // projection formula.
    let g = libm::sqrt(ss / ee);
    let alpha = g * dot / ss;
    let target = alpha * alpha * ss;
    let mut resid = 0.0;
    for (r, x) in reference.iter().zip(estimate) {
        let d = g * (x.as_f64() - me) - alpha * (r.as_f64() - ms);
        resid += d * d;
    }
    Ok(10.0 * libm::log10((target + EPS) / (resid + EPS)))
}

/// Which metric a dataset reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricConvention {
    Snr,
    SiSnr,
}

impl MetricConvention {
    pub fn name(self) -> &'static str {
        match self {
            Self::Snr => "snr",
            Self::SiSnr => "si-snr",
        }
    }
}

impl fmt::Display for MetricConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            // Music stems are scored with plain SNR.
            "snr" | "mss-default" => Ok(Self::Snr),
            "si-snr" | "sisnr" | "default" => Ok(Self::SiSnr),
            other => Err(Error::UnknownConvention(other.into())),
        }
    }
}

pub fn evaluate_pair<T: Real>(reference: &[T], estimate: &[T], convention: MetricConvention) -> Result<f64> {
    match convention {
        MetricConvention::Snr => snr_db(reference, estimate),
        MetricConvention::SiSnr => si_snr_db(reference, estimate),
    }
}

/// [`evaluate_pair`] with the convention given by name.
pub fn evaluate_pair_named<T: Real>(reference: &[T], estimate: &[T], convention: &str) -> Result<f64> {
    evaluate_pair(reference, estimate, convention.parse()?)
}
