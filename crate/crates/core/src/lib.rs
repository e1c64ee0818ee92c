//! Intrinsic Bayesian optimisation on constrained domains and embedded manifolds.
//!
//! The surrogate is a sparse Gaussian process whose covariance is the heat
//! kernel of the domain, estimated as the transition density of Brownian
//! motion simulated in chart coordinates with reflection at the boundary.
//! A Euclidean RBF Gaussian process serves as the baseline.
//!
//! Module map:
//! * [`geometry`]: charts, metric tensors, SDE coefficients, membership, cell volumes.
//! * [`bm_sim`]: Euler–Maruyama path ensembles with reject-and-resample reflection.
//! * [`heat_kernel`]: transition-density estimates and kernel matrices.
//! * [`sparse_gp`]: the sparse intrinsic GP and the exact RBF GP.
//! * [`bo`]: probability-of-improvement acquisition and the optimisation loop.
//! * [`bench`]: benchmark problems, experiment runner, configuration and reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod bm_sim;
pub mod bo;
pub mod error;
pub mod geometry;
pub mod heat_kernel;
pub mod sparse_gp;

pub use error::{Error, Result};
