//! Learnable tensors and the visitor used by optimizers and checkpoints.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::real::Real;

/// A named-by-position learnable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect();
        Self { shape: shape.to_vec(), data }
    }

    /// I.i.d. normal with the given standard deviation (Box-Muller).
    pub fn normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::lit(std * standard_normal(rng))).collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// Uniform bound used for weights feeding `fan_in` inputs.
pub fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / libm::sqrt(fan_in.max(1) as f64)
}

/// Structured parameter containers. The same type doubles as its own
/// gradient accumulator, so visiting a model and its gradient visits
/// corresponding tensors in the same order.
pub trait Parameters<T: Real> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>));

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.len());
        n
    }

    fn zero_(&mut self) {
        self.visit_mut("", &mut |_, p| p.data.iter_mut().for_each(|v| *v = T::zero()));
    }

    /// A structurally identical copy filled with zeros.
    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut g = self.clone();
        g.zero_();
        g
    }

    /// Copies of every tensor in visiting order.
    fn named_params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, p| out.push((name, p)));
        out
    }

    fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_parameters());
        self.visit("", &mut |_, p| out.extend_from_slice(&p.data));
        out
    }

    /// Overwrites every tensor from a flat buffer produced by [`Parameters::flatten`].
    fn unflatten(&mut self, flat: &[T]) {
        let mut off = 0;
        self.visit_mut("", &mut |_, p| {
            let n = p.data.len();
            p.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        });
        assert_eq!(off, flat.len(), "flat buffer length does not match parameter count");
    }

    /// `self += other`, tensor by tensor.
    fn add_assign_from(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let flat = other.flatten();
        let mut off = 0;
        self.visit_mut("", &mut |_, p| {
            for v in p.data.iter_mut() {
                *v += flat[off];
                off += 1;
            }
        });
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.into()
    } else {
        let mut s = String::with_capacity(prefix.len() + name.len() + 1);
        s.push_str(prefix);
        s.push('.');
        s.push_str(name);
        s
    }
}

impl<T: Real> Parameters<T> for Param<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        f(prefix.into(), self);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(prefix.into(), self);
    }
}

impl<T: Real, P: Parameters<T>> Parameters<T> for Vec<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &alloc::format!("{i}")), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &alloc::format!("{i}")), f);
        }
    }
}

/// Implements [`Parameters`] for a struct by listing its parameter fields.
macro_rules! impl_parameters {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl<T: $crate::real::Real> $crate::nn::param::Parameters<T> for $ty<T> {
            fn visit<'a>(
                &'a self,
                prefix: &str,
                f: &mut dyn FnMut(alloc::string::String, &'a $crate::nn::param::Param<T>),
            ) {
                $( self.$field.visit(&$crate::nn::param::join(prefix, stringify!($field)), f); )*
            }
            fn visit_mut(
                &mut self,
                prefix: &str,
                f: &mut dyn FnMut(alloc::string::String, &mut $crate::nn::param::Param<T>),
            ) {
                $( self.$field.visit_mut(&$crate::nn::param::join(prefix, stringify!($field)), f); )*
            }
        }
    };
}
pub(crate) use impl_parameters;

impl<T: Real, P: Parameters<T>> Parameters<T> for Option<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        if let Some(p) = self {
            p.visit(prefix, f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        if let Some(p) = self {
            p.visit_mut(prefix, f);
        }
    }
}
