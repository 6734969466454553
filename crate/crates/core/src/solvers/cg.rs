use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::linop::{dot, norm, LinearOperator};
use crate::solvers::Preconditioner;

pub const DEFAULT_MAX_CG_ITERS: usize = 500;

/// Recompute `b - A x` this often to stop the recurrence residual drifting.
const RESIDUAL_REFRESH: usize = 10;

/// Result of a batched solve; one entry per right-hand side.
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub solutions: Mat<f64>,
    pub iterations: Vec<usize>,
    /// True relative residual `||b - A x|| / ||b||` at exit.
    pub relative_residuals: Vec<f64>,
    pub converged: Vec<bool>,
    /// Operator products spent, counting batched columns individually.
    pub matvecs: usize,
}

impl SolveReport {
    pub fn solution(&self, col: usize) -> &[f64] {
        self.solutions.col_as_slice(col)
    }

    pub fn mean_iterations(&self) -> f64 {
        if self.iterations.is_empty() {
            return 0.0;
        }
        self.iterations.iter().sum::<usize>() as f64 / self.iterations.len() as f64
    }

    pub fn max_iterations(&self) -> usize {
        self.iterations.iter().copied().max().unwrap_or(0)
    }
}

struct Column {
    x: Vec<f64>,
    r: Vec<f64>,
    p: Vec<f64>,
    rz: f64,
    b_norm: f64,
    iters: usize,
    done: bool,
    converged: bool,
    residual: f64,
}

fn to_mat(cols: &[&Vec<f64>], n: usize) -> Mat<f64> {
    Mat::from_fn(n, cols.len(), |i, j| cols[j][i])
}

/// Preconditioned conjugate gradients on every column of `rhs` at once.
///
/// Iterates are driven by the preconditioned inner products, but a column
/// is only declared converged once its true residual satisfies
/// `||b - A x|| <= tol * ||b||`, so `tol` means the same thing for every
/// preconditioner rank. Columns stop independently; the remaining ones keep
/// sharing batched operator products.
pub fn pcg_solve(
    op: &dyn LinearOperator,
    rhs: MatRef<'_, f64>,
    tol: f64,
    max_iters: usize,
    precond: &Preconditioner,
) -> Result<SolveReport> {
    let n = op.dim();
    Error::check_len(n, rhs.nrows())?;
    Error::check_len(n, precond.dim())?;
    if !(tol > 0.0) {
        return Err(Error::contract(format!("CG tolerance must be positive, got {tol}")));
    }
    if max_iters == 0 {
        return Err(Error::contract("max_iters must be at least 1"));
    }
    let t = rhs.ncols();
    let mut matvecs = 0;

    let mut cols: Vec<Column> = (0..t)
        .map(|c| {
            let b: Vec<f64> = (0..n).map(|i| rhs[(i, c)]).collect();
            let b_norm = norm(&b);
            Column {
                x: vec![0.0; n],
                r: b,
                p: Vec::new(),
                rz: 0.0,
                b_norm,
                iters: 0,
                done: b_norm == 0.0,
                converged: b_norm == 0.0,
                residual: 0.0,
            }
        })
        .collect();
    if let Some(c) = cols.iter().position(|c| !c.b_norm.is_finite()) {
        return Err(Error::contract(format!("right-hand side {c} has non-finite entries")));
    }

    let active: Vec<usize> = (0..t).filter(|&c| !cols[c].done).collect();
    if !active.is_empty() {
        let r = to_mat(&active.iter().map(|&c| &cols[c].r).collect::<Vec<_>>(), n);
        let z = precond.apply(r.as_ref());
        for (k, &c) in active.iter().enumerate() {
            let zc = z.col_as_slice(k).to_vec();
            cols[c].rz = dot(&cols[c].r, &zc);
            cols[c].p = zc;
        }
    }

    loop {
        let active: Vec<usize> = (0..t).filter(|&c| !cols[c].done).collect();
        if active.is_empty() {
            break;
        }
        let p = to_mat(&active.iter().map(|&c| &cols[c].p).collect::<Vec<_>>(), n);
        let ap = op.multiply(p.as_ref());
        matvecs += active.len();

        let mut candidates = Vec::new();
        let mut refresh = Vec::new();
        for (k, &c) in active.iter().enumerate() {
            let col = &mut cols[c];
            let apc = ap.col_as_slice(k);
            let pap = dot(&col.p, apc);
            if pap.is_nan() {
                return Err(Error::Divergence { column: c });
            }
            col.iters += 1;
            if pap <= 0.0 {
                // Lost positive curvature at working precision; keep the
                // current iterate and report it as unconverged.
                col.done = true;
                refresh.push(c);
                continue;
            }
            let alpha = col.rz / pap;
            for i in 0..n {
                col.x[i] += alpha * col.p[i];
                col.r[i] -= alpha * apc[i];
            }
            let rel = norm(&col.r) / col.b_norm;
            if !rel.is_finite() {
                return Err(Error::Divergence { column: c });
            }
            if rel <= tol {
                candidates.push(c);
            } else if col.iters >= max_iters {
                col.done = true;
                refresh.push(c);
            } else if col.iters % RESIDUAL_REFRESH == 0 {
                refresh.push(c);
            }
        }

        // Confirm candidates and refresh drifting residuals with true ones.
        let check: Vec<usize> = candidates.iter().chain(&refresh).copied().collect();
        if !check.is_empty() {
            let x = to_mat(&check.iter().map(|&c| &cols[c].x).collect::<Vec<_>>(), n);
            let ax = op.multiply(x.as_ref());
            matvecs += check.len();
            for (k, &c) in check.iter().enumerate() {
                let col = &mut cols[c];
                let axc = ax.col_as_slice(k);
                for i in 0..n {
                    col.r[i] = rhs[(i, c)] - axc[i];
                }
                let rel = norm(&col.r) / col.b_norm;
                if rel.is_nan() {
                    return Err(Error::Divergence { column: c });
                }
                col.residual = rel;
                if rel <= tol {
                    col.done = true;
                    col.converged = true;
                } else if col.iters >= max_iters {
                    col.done = true;
                }
            }
        }

        let live: Vec<usize> = active.iter().copied().filter(|&c| !cols[c].done).collect();
        if live.is_empty() {
            continue;
        }
        let r = to_mat(&live.iter().map(|&c| &cols[c].r).collect::<Vec<_>>(), n);
        let z = precond.apply(r.as_ref());
        for (k, &c) in live.iter().enumerate() {
            let col = &mut cols[c];
            let zc = z.col_as_slice(k);
            let rz_new = dot(&col.r, zc);
            if rz_new.is_nan() {
                return Err(Error::Divergence { column: c });
            }
            let beta = if candidates.contains(&c) {
                // A rejected candidate restarts from its true residual.
                0.0
            } else {
                rz_new / col.rz
            };
            for i in 0..n {
                col.p[i] = zc[i] + beta * col.p[i];
            }
            col.rz = rz_new;
        }
    }

    let solutions = Mat::from_fn(n, t, |i, c| cols[c].x[i]);
    Ok(SolveReport {
        solutions,
        iterations: cols.iter().map(|c| c.iters).collect(),
        relative_residuals: cols.iter().map(|c| c.residual).collect(),
        converged: cols.iter().map(|c| c.converged).collect(),
        matvecs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::{DenseOperator, DiagonalOperator, IdentityOperator};

    fn column(v: &[f64]) -> Mat<f64> {
        Mat::from_fn(v.len(), 1, |i, _| v[i])
    }

    #[test]
    fn identity_system_takes_one_iteration() {
        let op = IdentityOperator::new(4);
        let b = column(&[1.0, -2.0, 0.5, 3.0]);
        let rep = pcg_solve(&op, b.as_ref(), 1e-10, 50, &Preconditioner::identity(4)).unwrap();
        assert_eq!(rep.iterations, vec![1]);
        assert_eq!(rep.solution(0), &[1.0, -2.0, 0.5, 3.0]);
        assert!(rep.converged[0]);
    }

    #[test]
    fn diagonal_system_terminates_finitely() {
        let op = DiagonalOperator::new(vec![1.0, 2.0, 4.0]);
        let b = column(&[1.0, 2.0, 4.0]);
        let rep = pcg_solve(&op, b.as_ref(), 1e-12, 50, &Preconditioner::identity(3)).unwrap();
        assert!(rep.iterations[0] <= 3);
        for v in rep.solution(0) {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rhs_is_trivially_converged() {
        let op = IdentityOperator::new(3);
        let b = Mat::<f64>::zeros(3, 1);
        let rep = pcg_solve(&op, b.as_ref(), 1e-6, 10, &Preconditioner::identity(3)).unwrap();
        assert_eq!(rep.iterations, vec![0]);
        assert!(rep.converged[0]);
    }

    #[test]
    fn iteration_cap_reports_unconverged() {
        let diag: Vec<f64> = (1..=50).map(|i| i as f64).collect();
        let op = DiagonalOperator::new(diag);
        let b = Mat::from_fn(50, 1, |i, _| 1.0 + (i % 3) as f64);
        let rep = pcg_solve(&op, b.as_ref(), 1e-14, 3, &Preconditioner::identity(50)).unwrap();
        assert_eq!(rep.iterations, vec![3]);
        assert!(!rep.converged[0]);
        assert!(rep.relative_residuals[0] > 1e-14);
    }

    #[test]
    fn converged_flag_matches_residual() {
        let n = 40;
        let g = Mat::from_fn(n, n, |i, j| ((i * 13 + j * 7) % 17) as f64 / 17.0 - 0.5);
        let mut a = crate::linop::gemm(g.as_ref(), g.transpose());
        for i in 0..n {
            a[(i, i)] += 0.1;
        }
        let op = DenseOperator::new(a).unwrap();
        let b = Mat::from_fn(n, 3, |i, j| ((i + 3 * j) as f64).sin());
        for &tol in &[1e-2, 1e-6, 1e-10] {
            let rep = pcg_solve(&op, b.as_ref(), tol, 200, &Preconditioner::identity(n)).unwrap();
            for c in 0..3 {
                assert_eq!(rep.converged[c], rep.relative_residuals[c] <= tol);
                assert!(rep.converged[c]);
            }
        }
    }

    #[test]
    fn nan_operator_reports_divergence() {
        let op = DiagonalOperator::new(vec![1.0, f64::NAN]);
        let b = Mat::from_fn(2, 2, |i, j| if j == 0 { 0.0 } else { 1.0 + i as f64 });
        let err = pcg_solve(&op, b.as_ref(), 1e-6, 10, &Preconditioner::identity(2)).unwrap_err();
        assert!(matches!(err, Error::Divergence { column: 1 }));
    }
}
