//! Random inner-product kernel matrices in the polynomial regime N ~ d^ell:
//! sampling, spectra, the limiting law (free convolution of semicircle and
//! Marchenko-Pastur components weighted by Hermite coefficients), and
//! machine-precision verification of the exact matrix identities behind it.
//!
//! Modules map onto the pipeline:
//! - [`hermite`]: Hermite basis, coefficient extraction, truncation.
//! - [`theory`]: limit-law constants, the self-consistent equation solver,
//!   stability bound, density inversion.
//! - [`models`]: data sampling and the kernel matrices A, A-tilde, B, B-full
//!   plus the linearization (U, T, D) and H(z).
//! - [`spectra`]: eigendecomposition, empirical Stieltjes transforms,
//!   measures and distances.
//! - [`verify`]: resolvent-identity, Ward-ratio, error-norm, and
//!   Gaussian-moment checks.
//! - [`harness`]: experiment orchestration with reproducible configs and
//!   machine-readable outputs.

// `!(x > 0.0)` is used deliberately in input guards so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
mod fmt;
pub mod harness;
pub mod hermite;
pub mod models;
pub mod rng;
pub mod spectra;
pub mod theory;
pub mod verify;

pub use error::{Error, Result};
