use faer::linalg::solvers::Llt;
use faer::{Mat, MatRef, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{cross_covariance, HyperParams, ScaledInputs};
use crate::linop::{Precision, ShiftedKernelOperator, DEFAULT_DENSE_CAP};
use crate::solvers::{Preconditioner, SolveReport, DEFAULT_MAX_CG_ITERS, DEFAULT_NUM_PROBES};

/// Knobs of the iterative backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterativeSettings {
    /// Relative residual at which CG stops.
    pub cg_tol: f64,
    /// Rank of the pivoted-Cholesky preconditioner; 0 disables it.
    pub precond_rank: usize,
    pub max_cg_iters: usize,
    /// Rademacher probes for the trace and log-determinant estimators.
    pub num_probes: usize,
    /// Lanczos steps per probe in the log-determinant estimate.
    pub logdet_rank: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Cache the dense kernel when it fits under [`DEFAULT_DENSE_CAP`].
    /// Changes speed only, never results.
    pub materialize: bool,
    /// Keep per-probe trace samples so gradients carry standard errors.
    pub gradient_std_errors: bool,
}

impl Default for IterativeSettings {
    fn default() -> Self {
        Self {
            cg_tol: 1e-3,
            precond_rank: 50,
            max_cg_iters: DEFAULT_MAX_CG_ITERS,
            num_probes: DEFAULT_NUM_PROBES,
            logdet_rank: 50,
            seed: 0,
            precision: Precision::F64,
            materialize: true,
            gradient_std_errors: false,
        }
    }
}

impl IterativeSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.cg_tol > 0.0) || !self.cg_tol.is_finite() {
            return Err(Error::contract(format!("CG tolerance must be positive, got {}", self.cg_tol)));
        }
        if self.max_cg_iters == 0 {
            return Err(Error::contract("max_cg_iters must be at least 1"));
        }
        if self.num_probes == 0 {
            return Err(Error::contract("num_probes must be at least 1"));
        }
        if self.logdet_rank == 0 {
            return Err(Error::contract("logdet_rank must be at least 1"));
        }
        Ok(())
    }
}

/// How solves and log-determinants are computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Backend {
    /// Dense Cholesky factorization; exact up to rounding.
    Cholesky,
    Iterative(IterativeSettings),
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Cholesky => "cholesky",
            Backend::Iterative(_) => "iterative",
        }
    }
}

/// CG statistics of one batched solve.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CgStats {
    pub mean_iterations: f64,
    pub max_iterations: usize,
    pub unconverged: usize,
    pub matvecs: usize,
}

impl From<&SolveReport> for CgStats {
    fn from(rep: &SolveReport) -> Self {
        Self {
            mean_iterations: rep.mean_iterations(),
            max_iterations: rep.max_iterations(),
            unconverged: rep.converged.iter().filter(|c| !**c).count(),
            matvecs: rep.matvecs,
        }
    }
}

/// A GP with a constant mean and Matern-5/2 ARD kernel, bound to its
/// training data and inference backend. Immutable; derive variants with
/// [`GpModel::with_hyperparams`] and [`GpModel::with_backend`].
#[derive(Clone, Debug)]
pub struct GpModel {
    theta: HyperParams,
    x: Mat<f64>,
    y: Vec<f64>,
    backend: Backend,
}

impl GpModel {
    pub fn new(x: Mat<f64>, y: Vec<f64>, theta: HyperParams, backend: Backend) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::contract("a GP needs at least one training point"));
        }
        Error::check_len(x.nrows(), y.len())?;
        Error::check_len(theta.input_dim(), x.ncols())?;
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite target at index {i}")));
        }
        check_theta(&theta)?;
        if let Backend::Iterative(s) = &backend {
            s.validate()?;
        }
        Ok(Self { theta, x, y, backend })
    }

    pub fn with_hyperparams(&self, theta: HyperParams) -> Result<Self> {
        Error::check_len(self.theta.input_dim(), theta.input_dim())?;
        check_theta(&theta)?;
        Ok(Self { theta, ..self.clone() })
    }

    pub fn with_backend(&self, backend: Backend) -> Result<Self> {
        if let Backend::Iterative(s) = &backend {
            s.validate()?;
        }
        Ok(Self { backend, ..self.clone() })
    }

    pub fn hyperparams(&self) -> &HyperParams {
        &self.theta
    }

    pub fn inputs(&self) -> MatRef<'_, f64> {
        self.x.as_ref()
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    /// `y - mean`.
    pub fn residual(&self) -> Vec<f64> {
        self.y.iter().map(|v| v - self.theta.mean_constant).collect()
    }

    pub(crate) fn scaled_inputs(&self) -> Result<ScaledInputs> {
        ScaledInputs::new(self.x.as_ref(), &self.theta.lengthscales())
    }

    /// `K_hat = K + noise * I` as an operator, dense-backed when the
    /// iterative settings ask for it and `n` fits under the cap.
    pub fn operator(&self) -> Result<ShiftedKernelOperator> {
        let (precision, materialize) = match &self.backend {
            Backend::Iterative(s) => (s.precision, s.materialize),
            Backend::Cholesky => (Precision::F64, true),
        };
        let op = ShiftedKernelOperator::new(self.x.as_ref(), &self.theta, precision)?;
        if materialize && self.len() <= DEFAULT_DENSE_CAP {
            op.materialize()
        } else {
            Ok(op)
        }
    }

    pub(crate) fn preconditioner(
        &self,
        op: &ShiftedKernelOperator,
        settings: &IterativeSettings,
    ) -> Result<Preconditioner> {
        if settings.precond_rank == 0 {
            Ok(Preconditioner::identity(self.len()))
        } else {
            Preconditioner::for_kernel(op, settings.precond_rank)
        }
    }

    /// Dense `K_hat` in float64.
    pub fn dense_shifted_kernel(&self) -> Result<Mat<f64>> {
        let xs = self.scaled_inputs()?;
        let mut k = cross_covariance(&xs, &xs, self.theta.outputscale());
        let noise = self.theta.noise();
        for i in 0..self.len() {
            k[(i, i)] += noise;
        }
        Ok(k)
    }

    /// Cholesky factor of `K_hat`, escalating diagonal jitter on failure.
    pub fn cholesky(&self) -> Result<JitteredCholesky> {
        cholesky_with_jitter(self.dense_shifted_kernel()?, Precision::F64)
    }
}

fn check_theta(theta: &HyperParams) -> Result<()> {
    if theta.to_vector().iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("hyperparameters must be finite"));
    }
    if theta.noise() <= 0.0 || theta.outputscale() <= 0.0 {
        return Err(Error::contract("noise and outputscale underflowed to zero"));
    }
    Ok(())
}

/// Cholesky factorization together with the diagonal jitter it needed.
pub struct JitteredCholesky {
    pub factor: Llt<f64>,
    pub jitter: f64,
}

impl JitteredCholesky {
    pub fn lower(&self) -> MatRef<'_, f64> {
        self.factor.L()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.factor.L();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }
}

const MAX_JITTER_ATTEMPTS: usize = 6;

/// Factor `a`, adding `1e-6` (float64) or `1e-4` (float32) to the diagonal
/// on failure and growing it tenfold per retry.
pub fn cholesky_with_jitter(mut a: Mat<f64>, precision: Precision) -> Result<JitteredCholesky> {
    if let Ok(factor) = a.llt(Side::Lower) {
        return Ok(JitteredCholesky { factor, jitter: 0.0 });
    }
    let mut jitter = match precision {
        Precision::F64 => 1e-6,
        Precision::F32 => 1e-4,
    };
    let mut added = 0.0;
    for _ in 0..MAX_JITTER_ATTEMPTS {
        for i in 0..a.nrows() {
            a[(i, i)] += jitter - added;
        }
        added = jitter;
        if let Ok(factor) = a.llt(Side::Lower) {
            return Ok(JitteredCholesky { factor, jitter });
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite { jitter: added })
}
