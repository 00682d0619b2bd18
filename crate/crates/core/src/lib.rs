//! Wiener chaos expansion surrogates for stochastic partial differential
//! equations: Fourier time basis, Wick polynomials, propagator networks,
//! chaos models with supervised and Euler-residual training, problem
//! definitions with reference solutions, and truncation diagnostics.
//!
//! The crate is `no_std` (with `alloc`) so the numerics can run anywhere;
//! file formats and the command-line interface live in the companion crate.

#![no_std]

extern crate alloc;

pub mod basis;
pub mod chaos;
pub mod error;
pub mod nets;
pub mod rates;
pub mod rng;
pub mod spde;
pub mod wick;

pub use error::{Error, Result};
