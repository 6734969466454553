//! Gaussian-process regression with exact (Cholesky) and iterative
//! (preconditioned conjugate gradients + Lanczos) inference.
//!
//! The iterative path never needs the dense kernel: solves go through
//! [`solvers::pcg_solve`], log-determinants through [`solvers::slq_logdet`],
//! and test-time variances through a low-rank Lanczos root of the inverse
//! kernel ([`gp::build_caches`]). The Cholesky path is kept as the reference
//! every iterative quantity is checked against.

pub mod error;
pub mod gp;
pub mod kernels;
pub mod linop;
pub mod optimizers;
pub mod rng;
pub mod solvers;

pub use error::{Error, Result};
pub use faer;
