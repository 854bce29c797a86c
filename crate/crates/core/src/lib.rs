//! Hard-constrained physics-informed networks for the heat equation, and the local
//! learning coefficient of their trained parameters.

// Validation is written as `!(x > 0.0)` so that NaN is rejected along with the rest.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
mod error;
pub mod experiment;
pub mod io;
pub mod llc;
pub mod network;
pub mod problem;
pub mod sampler;
pub mod stats;
pub mod train;

pub use error::{Error, Result};

// The guide's snippets run as doctests of this crate.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/problem.md")]
    mod problem {}
    #[doc = include_str!("../../../book/src/derivatives.md")]
    mod derivatives {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/sampler.md")]
    mod sampler {}
    #[doc = include_str!("../../../book/src/llc.md")]
    mod llc {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/reproduction.md")]
    mod reproduction {}
}
