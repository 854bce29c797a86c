use std::ops::{Add, Div, Mul, Neg, Sub};

use super::scalar::{Scalar, Weighted};

/// Truncated second-order Taylor jet along one seed direction.
///
/// Composition follows `(g∘f)'' = g''(f)·f'² + g'(f)·f''`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual2<S> {
    pub value: S,
    pub d_first: S,
    pub d_second: S,
}

impl<S: Scalar> Dual2<S> {
    /// Independent variable: `(x, 1, 0)`.
    pub fn seed(x: S) -> Self {
        Self {
            value: x,
            d_first: x.lift(1.0),
            d_second: x.lift(0.0),
        }
    }

    /// Quantity that does not depend on the seed direction: `(c, 0, 0)`.
    pub fn constant(c: S) -> Self {
        Self {
            value: c,
            d_first: c.lift(0.0),
            d_second: c.lift(0.0),
        }
    }

    /// Applies a scalar function given its value and first two derivatives at `self.value`.
    #[inline]
    fn chain(self, f: S, df: S, d2f: S) -> Self {
        Self {
            value: f,
            d_first: df * self.d_first,
            d_second: d2f * self.d_first * self.d_first + df * self.d_second,
        }
    }
}

impl<S: Scalar> Add for Dual2<S> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self {
            value: self.value + rhs.value,
            d_first: self.d_first + rhs.d_first,
            d_second: self.d_second + rhs.d_second,
        }
    }
}

impl<S: Scalar> Sub for Dual2<S> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Self {
            value: self.value - rhs.value,
            d_first: self.d_first - rhs.d_first,
            d_second: self.d_second - rhs.d_second,
        }
    }
}

impl<S: Scalar> Mul for Dual2<S> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Self {
            value: self.value * rhs.value,
            d_first: self.d_first * rhs.value + self.value * rhs.d_first,
            d_second: self.d_second * rhs.value
                + self.d_first * rhs.d_first * 2.0
                + self.value * rhs.d_second,
        }
    }
}

impl<S: Scalar> Div for Dual2<S> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let inv = rhs.value.lift(1.0) / rhs.value;
        let inv2 = inv * inv;
        let recip = rhs.chain(inv, -inv2, inv2 * inv * 2.0);
        self * recip
    }
}

impl<S: Scalar> Neg for Dual2<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self {
            value: -self.value,
            d_first: -self.d_first,
            d_second: -self.d_second,
        }
    }
}

impl<S: Scalar> Add<f64> for Dual2<S> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: f64) -> Self {
        Self {
            value: self.value + rhs,
            ..self
        }
    }
}

impl<S: Scalar> Sub<f64> for Dual2<S> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: f64) -> Self {
        Self {
            value: self.value - rhs,
            ..self
        }
    }
}

impl<S: Scalar> Mul<f64> for Dual2<S> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        Self {
            value: self.value * rhs,
            d_first: self.d_first * rhs,
            d_second: self.d_second * rhs,
        }
    }
}

impl<S: Scalar> Scalar for Dual2<S> {
    fn value(&self) -> f64 {
        self.value.value()
    }

    fn lift(&self, c: f64) -> Self {
        Self::constant(self.value.lift(c))
    }

    fn tanh(self) -> Self {
        let s = self.value.tanh();
        let ds = (s * s - 1.0) * -1.0;
        let d2s = s * ds * -2.0;
        self.chain(s, ds, d2s)
    }

    fn sin(self) -> Self {
        let s = self.value.sin();
        let c = self.value.cos();
        self.chain(s, c, -s)
    }

    fn cos(self) -> Self {
        let s = self.value.sin();
        let c = self.value.cos();
        self.chain(c, -s, -c)
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e, e)
    }

    fn powi(self, n: i32) -> Self {
        let x = self.value;
        let zero = x.lift(0.0);
        let f = x.powi(n);
        let df = if n == 0 {
            zero
        } else {
            x.powi(n - 1) * f64::from(n)
        };
        let d2f = if n == 0 || n == 1 {
            zero
        } else {
            x.powi(n - 2) * f64::from(n * (n - 1))
        };
        self.chain(f, df, d2f)
    }

    fn is_non_finite(&self) -> bool {
        self.value.is_non_finite() || self.d_first.is_non_finite() || self.d_second.is_non_finite()
    }
}

impl<S: Scalar> Weighted<S> for Dual2<S> {
    #[inline]
    fn mul_weight(self, w: S) -> Self {
        Self {
            value: self.value * w,
            d_first: self.d_first * w,
            d_second: self.d_second * w,
        }
    }
    #[inline]
    fn add_weight(self, w: S) -> Self {
        Self {
            value: self.value + w,
            ..self
        }
    }
}
