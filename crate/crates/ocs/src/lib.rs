//! Numerical toolkit for one-channel operators: block-tridiagonal Hermitian
//! operators whose inter-shell couplings have rank one.
//!
//! The eigenvalue equation of such an operator reduces to a 2×2 transfer
//! recursion. On top of that recursion the crate provides Green's-function
//! identities, Weyl-circle diagnostics, spectral-measure estimates and
//! Monte-Carlo tooling for Anderson models on antitree graphs.

pub mod anderson_lab;
pub mod cli_runner;
pub mod error;
pub mod greens_weyl;
pub mod io;
pub mod model_core;
pub mod rng;
pub mod spectral_estimator;
pub mod transfer_engine;

pub use error::{OcsError, Result};

/// Double precision complex scalar used throughout.
pub type C64 = num_complex::Complex64;
/// Dense complex column vector.
pub type CVec = nalgebra::DVector<C64>;
/// Dense complex matrix.
pub type CMat = nalgebra::DMatrix<C64>;

/// Shorthand for building a complex number.
#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}
