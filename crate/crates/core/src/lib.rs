//! Optimal linear filtering of a finite-dimensional state observed through a
//! continuum of correlated measurements (a random field over `R^d`).
//!
//! The building blocks are usable on their own:
//!
//! * [`grid`] and [`fourier`]: uniform grids, trapezoidal quadrature and the
//!   continuous Fourier transform approximated with FFTs.
//! * [`random_field`]: stationary kernels, their spectra and exact Gaussian
//!   field sampling.
//! * [`gain`]: the time-invariant gain kernel `f`, information matrix `S` and
//!   its root `G`.
//! * [`filter`] and [`riccati`]: the time recursion and its steady state.
//! * [`pinhole`]: a moving camera looking at a patterned wall, with
//!   Monte-Carlo error studies.
//! * [`oracle`]: a brute-force finite-dimensional Kalman filter on a
//!   subsampled grid, for cross-checking.
//! * [`experiment`]: JSON configuration, CSV output and the command drivers
//!   behind the `fieldkalman` binary.

// `!(x > 0.0)` is used on purpose: it rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod filter;
pub mod fourier;
pub mod gain;
pub mod grid;
pub mod linalg;
pub mod oracle;
pub mod pinhole;
pub mod random_field;
pub mod riccati;

pub use error::{Assumption, Error, Result};
