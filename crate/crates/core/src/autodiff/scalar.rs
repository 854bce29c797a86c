use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Numeric type that the network, the ansatz and the residual are written against.
///
/// Implemented by plain `f64`, by taped reverse-mode variables ([`super::Var`]) and by
/// second-order forward jets ([`super::Dual2`]), which nest: `Dual2<Var>` carries input
/// derivatives whose values are themselves recorded on a tape.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    /// Primal value.
    fn value(&self) -> f64;
    /// A constant living in the same context as `self` (same tape, same jet seed).
    fn lift(&self, c: f64) -> Self;
    fn tanh(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn powi(self, n: i32) -> Self;

    /// True if this value, or any derivative it carries, is non-finite.
    fn is_non_finite(&self) -> bool {
        !self.value().is_finite()
    }
}

impl Scalar for f64 {
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn lift(&self, c: f64) -> Self {
        c
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// Multiplication and addition by a network weight of possibly different type.
///
/// Lets a forward pass over `Dual2<S>` inputs consume plain `S` weights without lifting
/// every weight into a jet first.
pub trait Weighted<W>: Scalar {
    fn mul_weight(self, w: W) -> Self;
    fn add_weight(self, w: W) -> Self;
}

impl<S: Scalar> Weighted<S> for S {
    #[inline]
    fn mul_weight(self, w: S) -> Self {
        self * w
    }
    #[inline]
    fn add_weight(self, w: S) -> Self {
        self + w
    }
}

/// Sum of a slice; `None` for an empty slice since there is no context to lift zero into.
pub fn sum<S: Scalar>(xs: &[S]) -> Option<S> {
    let (first, rest) = xs.split_first()?;
    Some(rest.iter().fold(*first, |acc, &x| acc + x))
}

pub fn mean<S: Scalar>(xs: &[S]) -> Option<S> {
    sum(xs).map(|s| s * (1.0 / xs.len() as f64))
}
