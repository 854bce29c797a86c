//! Exact derivatives.
//!
//! Two mechanisms compose here. [`Tape`]/[`Var`] record scalar operations for reverse-mode
//! gradients with respect to parameters, and [`Dual2`] propagates second-order jets along
//! one input direction. Since `Dual2<Var>` is itself a [`Scalar`], a residual containing
//! `∂ₜu` and `∂ₓₓu` is an ordinary taped expression and its parameter gradient comes out
//! of one reverse sweep.
//!
//! Production training does not go through the tape; see [`crate::network::jet`] for the
//! batched propagation it uses, which is tested against this module.

mod dual;
mod scalar;
mod tape;

pub use dual::Dual2;
pub use scalar::{mean, sum, Scalar, Weighted};
pub use tape::{grad, AutodiffError, OpKind, Tape, Var};

/// A scalar field `f(x, t)` evaluated on jets built over `S`.
pub trait BivariateFn<S: Scalar> {
    fn eval(&self, x: Dual2<S>, t: Dual2<S>) -> Dual2<S>;
}

impl<S, F> BivariateFn<S> for F
where
    S: Scalar,
    F: Fn(Dual2<S>, Dual2<S>) -> Dual2<S>,
{
    fn eval(&self, x: Dual2<S>, t: Dual2<S>) -> Dual2<S> {
        self(x, t)
    }
}

/// Pins a closure's argument types so it can be passed as a [`BivariateFn`].
pub fn bivariate<S, F>(f: F) -> F
where
    S: Scalar,
    F: Fn(Dual2<S>, Dual2<S>) -> Dual2<S>,
{
    f
}

/// Value and the input derivatives the heat residual needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputDerivatives<S> {
    pub u: S,
    pub du_dt: S,
    pub du_dx: S,
    pub d2u_dx2: S,
}

/// Evaluates `f` at `(x, t)` with `∂ₜf` from a pass seeded on `t` and `∂ₓf`, `∂ₓₓf` from a
/// second-order pass seeded on `x`.
pub fn input_derivatives<S, F>(f: &F, x: S, t: S) -> Result<InputDerivatives<S>, AutodiffError>
where
    S: Scalar,
    F: BivariateFn<S> + ?Sized,
{
    let along_t = f.eval(Dual2::constant(x), Dual2::seed(t));
    let along_x = f.eval(Dual2::seed(x), Dual2::constant(t));
    let out = InputDerivatives {
        u: along_x.value,
        du_dt: along_t.d_first,
        du_dx: along_x.d_first,
        d2u_dx2: along_x.d_second,
    };
    for (quantity, v) in [
        ("u", out.u),
        ("du_dt", out.du_dt),
        ("du_dx", out.du_dx),
        ("d2u_dx2", out.d2u_dx2),
    ] {
        if v.is_non_finite() {
            return Err(AutodiffError::NonFiniteDerivative { quantity });
        }
    }
    Ok(out)
}
