//! Complex FFT for arbitrary lengths.
//!
//! Powers of two use an iterative radix-2 transform; every other length goes
//! through Bluestein's chirp-z algorithm on a padded power-of-two transform.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex;

use crate::real::Real;

#[derive(Debug, Clone)]
pub struct FftPlan<T> {
    len: usize,
    kind: PlanKind<T>,
}

#[derive(Debug, Clone)]
enum PlanKind<T> {
    Radix2(Radix2<T>),
    Bluestein {
        inner: Radix2<T>,
        /// `exp(-i pi n^2 / len)` for n in 0..len.
        chirp: Vec<Complex<T>>,
        /// Forward transform of the conjugate chirp, zero-padded to the inner length.
        kernel: Vec<Complex<T>>,
    },
}

#[derive(Debug, Clone)]
struct Radix2<T> {
    len: usize,
    twiddles: Vec<Complex<T>>,
    bitrev: Vec<usize>,
}

impl<T: Real> Radix2<T> {
    fn new(len: usize) -> Self {
        debug_assert!(len.is_power_of_two());
        let bits = len.trailing_zeros();
        let bitrev = (0..len)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let twiddles = (0..len / 2)
            .map(|k| {
                let angle = -2.0 * core::f64::consts::PI * k as f64 / len as f64;
                Complex::new(T::lit(libm::cos(angle)), T::lit(libm::sin(angle)))
            })
            .collect();
        Self { len, twiddles, bitrev }
    }

    /// In-place forward transform (negative exponent), unnormalized.
    fn forward(&self, data: &mut [Complex<T>]) {
        let n = self.len;
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                data.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let step = n / size;
            for start in (0..n).step_by(size) {
                for k in 0..half {
                    let w = self.twiddles[k * step];
                    let a = data[start + k];
                    let b = data[start + k + half] * w;
                    data[start + k] = a + b;
                    data[start + k + half] = a - b;
                }
            }
            size *= 2;
        }
    }
}

impl<T: Real> FftPlan<T> {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "FFT length must be positive");
        if len.is_power_of_two() {
            return Self { len, kind: PlanKind::Radix2(Radix2::new(len)) };
        }
        let inner_len = (2 * len - 1).next_power_of_two();
        let inner = Radix2::new(inner_len);
        let chirp: Vec<Complex<T>> = (0..len)
            .map(|n| {
                // n^2 mod 2len keeps the angle argument small for long transforms.
                let sq = (n as u128 * n as u128 % (2 * len as u128)) as f64;
                let angle = -core::f64::consts::PI * sq / len as f64;
                Complex::new(T::lit(libm::cos(angle)), T::lit(libm::sin(angle)))
            })
            .collect();
        let mut kernel = vec![Complex::new(T::zero(), T::zero()); inner_len];
        kernel[0] = chirp[0].conj();
        for n in 1..len {
            kernel[n] = chirp[n].conj();
            kernel[inner_len - n] = chirp[n].conj();
        }
        inner.forward(&mut kernel);
        Self { len, kind: PlanKind::Bluestein { inner, chirp, kernel } }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// In-place forward DFT: `X[k] = sum_n x[n] exp(-2 pi i k n / N)`.
    pub fn forward(&self, data: &mut [Complex<T>]) {
        assert_eq!(data.len(), self.len);
        match &self.kind {
            PlanKind::Radix2(r) => r.forward(data),
            PlanKind::Bluestein { inner, chirp, kernel } => {
                let m = inner.len;
                let mut buf = vec![Complex::new(T::zero(), T::zero()); m];
                for n in 0..self.len {
                    buf[n] = data[n] * chirp[n];
                }
                inner.forward(&mut buf);
                for (b, k) in buf.iter_mut().zip(kernel) {
                    *b *= *k;
                }
                // Inverse via conjugation.
                for b in buf.iter_mut() {
                    *b = b.conj();
                }
                inner.forward(&mut buf);
                let scale = T::one() / T::lit(m as f64);
                for n in 0..self.len {
                    data[n] = buf[n].conj() * scale * chirp[n];
                }
            }
        }
    }

    /// In-place inverse DFT including the `1/N` factor.
    pub fn inverse(&self, data: &mut [Complex<T>]) {
        for d in data.iter_mut() {
            *d = d.conj();
        }
        self.forward(data);
        let scale = T::one() / T::lit(self.len as f64);
        for d in data.iter_mut() {
            *d = d.conj() * scale;
        }
    }
}
