use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};
use crate::linop::{gemm, ShiftedKernelOperator};
use crate::solvers::pivoted_cholesky::pivoted_cholesky;

/// `(L L^T + noise * I)^{-1}` applied through the Woodbury identity, with the
/// `w x w` inner system `I + L^T L / noise` factored once.
#[derive(Clone, Debug)]
pub struct Preconditioner {
    factor: Mat<f64>,
    noise: f64,
    inner: Option<Llt<f64>>,
}

impl Preconditioner {
    pub fn new(factor: Mat<f64>, noise: f64) -> Result<Self> {
        if !(noise > 0.0 && noise.is_finite()) {
            return Err(Error::contract(format!("preconditioner noise must be positive, got {noise}")));
        }
        let w = factor.ncols();
        let inner = if w == 0 {
            None
        } else {
            let mut m = gemm(factor.transpose(), factor.as_ref());
            for i in 0..w {
                for j in 0..w {
                    m[(i, j)] /= noise;
                }
                m[(i, i)] += 1.0;
            }
            Some(m.llt(Side::Lower).map_err(|e| {
                Error::Breakdown(format!("preconditioner inner system is singular: {e:?}"))
            })?)
        };
        Ok(Self { factor, noise, inner })
    }

    /// The unpreconditioned case: applies the identity.
    pub fn identity(n: usize) -> Self {
        Self { factor: Mat::zeros(n, 0), noise: 1.0, inner: None }
    }

    /// Rank-`rank` pivoted Cholesky of the unshifted kernel, shifted by the
    /// operator's noise.
    pub fn for_kernel(op: &ShiftedKernelOperator, rank: usize) -> Result<Self> {
        let n = crate::linop::LinearOperator::dim(op);
        let rank = rank.min(n);
        let diag = vec![op.outputscale(); n];
        let pc = pivoted_cholesky(&diag, |j| op.kernel_column(j), rank)?;
        Self::new(pc.factor, op.noise())
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn factor(&self) -> MatRef<'_, f64> {
        self.factor.as_ref()
    }

    /// Applies the inverse to every column of `rhs`.
    pub fn apply(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        let inv_noise = 1.0 / self.noise;
        let mut out = Mat::from_fn(rhs.nrows(), rhs.ncols(), |i, j| rhs[(i, j)] * inv_noise);
        if let Some(inner) = &self.inner {
            // (v - L (I + L^T L / s)^{-1} L^T v / s) / s
            let mut proj = gemm(self.factor.transpose(), rhs);
            inner.solve_in_place(proj.as_mut());
            let corr = gemm(self.factor.as_ref(), proj.as_ref());
            for j in 0..out.ncols() {
                for i in 0..out.nrows() {
                    out[(i, j)] -= corr[(i, j)] * inv_noise * inv_noise;
                }
            }
        }
        out
    }

    pub fn apply_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        Error::check_len(self.dim(), v.len())?;
        let out = self.apply(MatRef::from_column_major_slice(v, v.len(), 1));
        Ok(out.col_as_slice(0).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::linalg::solvers::DenseSolveCore;

    fn random_factor(n: usize, w: usize) -> Mat<f64> {
        Mat::from_fn(n, w, |i, j| (((i * 7919 + j * 104729) % 1000) as f64 / 1000.0 - 0.5) * 1.3)
    }

    #[test]
    fn zero_factor_divides_by_noise() {
        let p = Preconditioner::new(Mat::zeros(3, 2), 0.5).unwrap();
        assert_eq!(p.apply_vec(&[1.0, -2.0, 4.0]).unwrap(), vec![2.0, -4.0, 8.0]);
    }

    #[test]
    fn matches_dense_inverse() {
        let (n, w, noise) = (60, 8, 0.3);
        let l = random_factor(n, w);
        let p = Preconditioner::new(l.clone(), noise).unwrap();
        let mut dense = gemm(l.as_ref(), l.transpose());
        for i in 0..n {
            dense[(i, i)] += noise;
        }
        let inv = dense.llt(Side::Lower).unwrap().inverse();
        let v: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).cos()).collect();
        let got = p.apply_vec(&v).unwrap();
        let want: Vec<f64> = (0..n).map(|i| (0..n).map(|j| inv[(i, j)] * v[j]).sum()).collect();
        let err: f64 = got.iter().zip(&want).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale: f64 = want.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(err / scale < 1e-10);

        // round trip through the forward operator
        let back: Vec<f64> = (0..n).map(|i| (0..n).map(|j| dense[(i, j)] * got[j]).sum()).collect();
        let err: f64 = back.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!(err / crate::linop::norm(&v) < 1e-9);
    }

    #[test]
    fn apply_is_positive_definite() {
        let p = Preconditioner::new(random_factor(25, 5), 0.05).unwrap();
        for s in 0..10 {
            let v: Vec<f64> = (0..25).map(|i| ((i + s) as f64 * 1.7).sin()).collect();
            let pv = p.apply_vec(&v).unwrap();
            assert!(crate::linop::dot(&v, &pv) > 0.0);
        }
    }
}
