use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};

use crate::error::{Error, Result};
use crate::linop::{dot, norm, LinearOperator};

/// Relative size of an off-diagonal below which the Krylov space is treated
/// as invariant.
const BREAKDOWN_TOL: f64 = 1e-10;

/// `A Q ~ Q T` with orthonormal `Q` and symmetric tridiagonal `T`.
#[derive(Clone, Debug)]
pub struct LanczosFactors {
    /// `n x rank` orthonormal basis of the Krylov space.
    pub q: Mat<f64>,
    /// Diagonal of `T`.
    pub alpha: Vec<f64>,
    /// Off-diagonal of `T` (`rank - 1` entries).
    pub beta: Vec<f64>,
    /// Residual norm after the last step: `A Q - Q T = beta_last q_next e_k^T`.
    pub last_beta: f64,
    pub requested: usize,
    /// Stopped before `requested` because the Krylov space became invariant.
    pub breakdown: bool,
}

/// Eigenpairs of a tridiagonal matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct TridiagonalEigen {
    pub values: Vec<f64>,
    pub vectors: Mat<f64>,
}

impl LanczosFactors {
    pub fn rank(&self) -> usize {
        self.alpha.len()
    }

    pub fn tridiagonal(&self) -> Mat<f64> {
        let k = self.rank();
        Mat::from_fn(k, k, |i, j| {
            if i == j {
                self.alpha[i]
            } else if i == j + 1 {
                self.beta[j]
            } else if j == i + 1 {
                self.beta[i]
            } else {
                0.0
            }
        })
    }

    /// Leading rank-`k` factors. Lanczos bases are nested, so this is exactly
    /// what a rank-`k` run from the same start vector would produce.
    pub fn truncate(&self, k: usize) -> Self {
        let k = k.min(self.rank());
        if k == self.rank() {
            return self.clone();
        }
        Self {
            q: self.q.subcols(0, k).to_owned(),
            alpha: self.alpha[..k].to_vec(),
            beta: self.beta[..k.saturating_sub(1)].to_vec(),
            last_beta: self.beta[k - 1],
            requested: k,
            breakdown: false,
        }
    }

    pub fn eigen(&self) -> Result<TridiagonalEigen> {
        let t = self.tridiagonal();
        let evd = t
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Breakdown(format!("tridiagonal eigensolver failed: {e:?}")))?;
        let values: Vec<f64> = evd.S().column_vector().iter().copied().collect();
        Ok(TridiagonalEigen { values, vectors: evd.U().to_owned() })
    }
}

/// Symmetric Lanczos started from `start / ||start||`, for at most `k`
/// steps. With `reorthogonalize` every new direction is Gram-Schmidt'ed
/// against all previous ones (a second pass runs when the first removes
/// most of the vector). Stops early when the next off-diagonal drops below
/// `1e-10` times the running estimate of `||A||`.
pub fn lanczos(
    op: &dyn LinearOperator,
    start: &[f64],
    k: usize,
    reorthogonalize: bool,
) -> Result<LanczosFactors> {
    let n = op.dim();
    Error::check_len(n, start.len())?;
    let starts = MatRef::from_column_major_slice(start, n, 1);
    lanczos_many(op, starts, k, reorthogonalize)?.pop().expect("one run")
}

/// Independent Lanczos runs, one per column of `starts`, advanced in
/// lockstep so each step costs one batched operator product. Each run's
/// factors equal what [`lanczos`] returns for that column alone.
pub fn lanczos_many(
    op: &dyn LinearOperator,
    starts: MatRef<'_, f64>,
    k: usize,
    reorthogonalize: bool,
) -> Result<Vec<Result<LanczosFactors>>> {
    let n = op.dim();
    Error::check_len(n, starts.nrows())?;
    if k == 0 || k > n {
        return Err(Error::contract(format!("Lanczos rank {k} must lie in 1..={n}")));
    }
    let mut runs: Vec<Result<Run>> = (0..starts.ncols())
        .map(|c| {
            let v: Vec<f64> = (0..n).map(|i| starts[(i, c)]).collect();
            Run::new(&v, k)
        })
        .collect();

    for j in 0..k {
        let active: Vec<usize> = (0..runs.len())
            .filter(|&c| matches!(&runs[c], Ok(r) if !r.finished))
            .collect();
        if active.is_empty() {
            break;
        }
        let block = Mat::from_fn(n, active.len(), |i, a| match &runs[active[a]] {
            Ok(r) => r.q[(i, j)],
            Err(_) => unreachable!(),
        });
        let products = op.multiply(block.as_ref());
        for (a, &c) in active.iter().enumerate() {
            let run = runs[c].as_mut().expect("active run");
            let w = products.col_as_slice(a).to_vec();
            if let Err(e) = run.step(j, w, reorthogonalize) {
                runs[c] = Err(e);
            }
        }
    }
    Ok(runs.into_iter().map(|r| r.map(Run::finish)).collect())
}

struct Run {
    q: Mat<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    last_beta: f64,
    norm_estimate: f64,
    requested: usize,
    breakdown: bool,
    finished: bool,
    coeffs: Mat<f64>,
}

impl Run {
    fn new(start: &[f64], k: usize) -> Result<Self> {
        let start_norm = norm(start);
        if !(start_norm > 0.0) || !start_norm.is_finite() {
            return Err(Error::contract("Lanczos start vector must be nonzero and finite"));
        }
        let n = start.len();
        let mut q = Mat::<f64>::zeros(n, k);
        for (dst, s) in q.col_as_slice_mut(0).iter_mut().zip(start) {
            *dst = s / start_norm;
        }
        Ok(Self {
            q,
            alpha: Vec::with_capacity(k),
            beta: Vec::with_capacity(k),
            last_beta: 0.0,
            norm_estimate: 0.0,
            requested: k,
            breakdown: false,
            finished: false,
            coeffs: Mat::zeros(k, 1),
        })
    }

    /// Consumes `w = A q_j` and prepares `q_{j+1}`.
    fn step(&mut self, j: usize, mut w: Vec<f64>, reorthogonalize: bool) -> Result<()> {
        let n = self.q.nrows();
        let k = self.requested;
        let a = dot(self.q.col_as_slice(j), &w);
        if !a.is_finite() {
            return Err(Error::Breakdown(format!("non-finite Lanczos coefficient at step {j}")));
        }
        let qj = self.q.col_as_slice(j);
        for i in 0..n {
            w[i] -= a * qj[i];
        }
        if j > 0 {
            let b = self.beta[j - 1];
            let qp = self.q.col_as_slice(j - 1);
            for i in 0..n {
                w[i] -= b * qp[i];
            }
        }
        if reorthogonalize {
            let basis = self.q.subcols(0, j + 1);
            let mut before = norm(&w);
            for _ in 0..2 {
                let wm = MatRef::from_column_major_slice(&w, n, 1);
                let mut h = self.coeffs.subrows_mut(0, j + 1);
                matmul(h.as_mut(), Accum::Replace, basis.transpose(), wm, 1.0, Par::Seq);
                let mut wm = faer::MatMut::from_column_major_slice_mut(&mut w, n, 1);
                matmul(wm.as_mut(), Accum::Add, basis, h.as_ref(), -1.0, Par::Seq);
                let after = norm(&w);
                if after > 0.7 * before {
                    break;
                }
                before = after;
            }
        }
        self.alpha.push(a);
        let b = norm(&w);
        let prev = if j > 0 { self.beta[j - 1] } else { 0.0 };
        self.norm_estimate = self.norm_estimate.max(a.abs() + prev + b);
        self.last_beta = b;
        if j + 1 == k {
            self.finished = true;
            return Ok(());
        }
        if b < BREAKDOWN_TOL * self.norm_estimate {
            self.breakdown = true;
            self.finished = true;
            return Ok(());
        }
        self.beta.push(b);
        for (dst, wi) in self.q.col_as_slice_mut(j + 1).iter_mut().zip(&w) {
            *dst = wi / b;
        }
        Ok(())
    }

    fn finish(self) -> LanczosFactors {
        let rank = self.alpha.len();
        let q = if rank == self.requested { self.q } else { self.q.subcols(0, rank).to_owned() };
        LanczosFactors {
            q,
            alpha: self.alpha,
            beta: self.beta,
            last_beta: self.last_beta,
            requested: self.requested,
            breakdown: self.breakdown,
        }
    }
}
