//! Speed of coming down from infinity for Λ-coalescents.
//!
//! The library evaluates `ψ`, tabulates `u(q) = ∫_q^∞ dq/ψ` and its inverse
//! `v`, computes merger rates and the two coming-down criteria, simulates the
//! block-counting chain exactly, and runs Monte Carlo checks of `N(t)/v(t) → 1`.

pub mod appendix;
pub mod error;
pub mod harness;
pub mod measure;
pub mod numeric;
pub mod quad;
pub mod rates;
pub mod simulate;
pub mod speed;
pub mod stats;

pub use error::{Error, Result};
