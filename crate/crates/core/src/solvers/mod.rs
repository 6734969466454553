//! Iterative numerical core: pivoted-Cholesky preconditioning, batched
//! preconditioned conjugate gradients, Lanczos tridiagonalization, and the
//! stochastic estimators built on top of them.

mod cg;
mod estimators;
mod lanczos;
mod pivoted_cholesky;
mod preconditioner;

pub use cg::{pcg_solve, SolveReport, DEFAULT_MAX_CG_ITERS};
pub use estimators::{hutchinson_trace, slq_logdet, slq_logdet_with_probes, Estimate};
pub use lanczos::{lanczos, lanczos_many, LanczosFactors, TridiagonalEigen};
pub use pivoted_cholesky::{pivoted_cholesky, PivotedCholesky};
pub use preconditioner::Preconditioner;

/// Number of probe vectors used when the caller does not choose.
pub const DEFAULT_NUM_PROBES: usize = 10;
