//! Self-supervised k-space reconstruction laboratory.
//!
//! The crate simulates undersampled multi-coil dynamic MRI, re-undersamples
//! the acquired k-space into input and supervision subsets, trains a small
//! unrolled reconstruction network with masked losses, and checks the
//! statistical claims behind that training scheme against closed-form or
//! brute-force references.

// `!(x > 0.0)` style guards are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod recon;
pub mod sampling;
pub mod seed;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/operators.md")]
    mod operators {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    mod objectives {}
    #[doc = include_str!("../../../book/src/theory.md")]
    mod theory {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
}
