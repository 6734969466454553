use faer::linalg::solvers::Solve;
use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
use faer::{Mat, MatRef, Par};

use crate::error::{Error, Result};
use crate::gp::model::{Backend, CgStats, GpModel};
use crate::kernels::{cross_covariance, ScaledInputs};
use crate::linop::{dot, gemm};
use crate::solvers::{lanczos, pcg_solve, LanczosFactors};

/// Floor applied to latent variances that come out nonpositive.
pub const VARIANCE_FLOOR: f64 = 1e-12;

const PREDICT_BLOCK: usize = 256;

/// Factor `R` with `R R^T ~ K_hat^{-1}`.
#[derive(Clone, Debug)]
pub enum CovarianceRoot {
    /// Lower Cholesky factor `L` of `K_hat`; `R = L^{-T}` is applied by
    /// triangular solves.
    Cholesky(Mat<f64>),
    /// Explicit `n x k` root from a rank-`k` Lanczos decomposition.
    LowRank(Mat<f64>),
}

/// Everything test-time prediction needs: `m = K_hat^{-1} (y - mean)` and a
/// root of `K_hat^{-1}`.
#[derive(Clone, Debug)]
pub struct PredictiveCache {
    pub mean_cache: Vec<f64>,
    pub root: CovarianceRoot,
    pub rank: usize,
    pub requested_rank: usize,
    /// Lanczos stopped short of `requested_rank`.
    pub breakdown: bool,
    pub backend: &'static str,
    pub cg: Option<CgStats>,
    pub jitter: f64,
}

impl PredictiveCache {
    /// `R R^T` densely, for checks on small problems.
    pub fn inverse_approximation(&self) -> Mat<f64> {
        match &self.root {
            CovarianceRoot::LowRank(r) => gemm(r.as_ref(), r.transpose()),
            CovarianceRoot::Cholesky(l) => {
                let n = l.nrows();
                let mut v = Mat::<f64>::identity(n, n);
                solve_lower_triangular_in_place(l.as_ref(), v.as_mut(), Par::Seq);
                gemm(v.transpose(), v.as_ref())
            }
        }
    }
}

/// Predictive mean and latent-or-observed variance at test inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub includes_noise: bool,
    /// Latent variances raised to [`VARIANCE_FLOOR`].
    pub clamped: usize,
}

/// Builds the caches at Lanczos rank `k` (ignored by the Cholesky backend,
/// which is exact).
pub fn build_caches(model: &GpModel, k: usize) -> Result<PredictiveCache> {
    Ok(build_caches_multi(model, &[k])?.pop().expect("one rank"))
}

/// Caches for several ranks at once. Lanczos bases are nested, so one run
/// at the largest rank serves every smaller one, and the mean solve is
/// shared.
pub fn build_caches_multi(model: &GpModel, ranks: &[usize]) -> Result<Vec<PredictiveCache>> {
    let n = model.len();
    if ranks.is_empty() {
        return Err(Error::contract("at least one rank is required"));
    }
    if let Some(&k) = ranks.iter().find(|&&k| k == 0 || k > n) {
        return Err(Error::contract(format!("cache rank {k} must lie in 1..={n}")));
    }
    let r = model.residual();
    match model.backend() {
        Backend::Cholesky => {
            let chol = model.cholesky()?;
            let m = chol.factor.solve(MatRef::from_column_major_slice(&r, n, 1));
            let cache = PredictiveCache {
                mean_cache: m.col_as_slice(0).to_vec(),
                root: CovarianceRoot::Cholesky(chol.lower().to_owned()),
                rank: n,
                requested_rank: n,
                breakdown: false,
                backend: "cholesky",
                cg: None,
                jitter: chol.jitter,
            };
            Ok(ranks.iter().map(|_| cache.clone()).collect())
        }
        Backend::Iterative(settings) => {
            let op = model.operator()?;
            let precond = model.preconditioner(&op, settings)?;
            let rhs = MatRef::from_column_major_slice(&r, n, 1);
            let report = pcg_solve(&op, rhs, settings.cg_tol, settings.max_cg_iters, &precond)?;
            let mean_cache = report.solution(0).to_vec();
            let cg = CgStats::from(&report);

            let k_max = *ranks.iter().max().expect("nonempty");
            let start = if r.iter().all(|v| *v == 0.0) { vec![1.0; n] } else { r };
            let full = lanczos(&op, &start, k_max, true)?;
            ranks
                .iter()
                .map(|&k| {
                    let f = full.truncate(k);
                    Ok(PredictiveCache {
                        mean_cache: mean_cache.clone(),
                        root: CovarianceRoot::LowRank(lanczos_root(&f)?),
                        rank: f.rank(),
                        requested_rank: k,
                        breakdown: f.rank() < k,
                        backend: "iterative",
                        cg: Some(cg.clone()),
                        jitter: 0.0,
                    })
                })
                .collect()
        }
    }
}

/// Recomputes only `m = K_hat^{-1} (y - mean)` with the model's current
/// backend settings, for reuse with a root built under other settings.
pub fn solve_mean_cache(model: &GpModel) -> Result<(Vec<f64>, Option<CgStats>)> {
    let n = model.len();
    let r = model.residual();
    let rhs = MatRef::from_column_major_slice(&r, n, 1);
    match model.backend() {
        Backend::Cholesky => {
            let chol = model.cholesky()?;
            Ok((chol.factor.solve(rhs).col_as_slice(0).to_vec(), None))
        }
        Backend::Iterative(settings) => {
            let op = model.operator()?;
            let precond = model.preconditioner(&op, settings)?;
            let report = pcg_solve(&op, rhs, settings.cg_tol, settings.max_cg_iters, &precond)?;
            Ok((report.solution(0).to_vec(), Some(CgStats::from(&report))))
        }
    }
}

/// `R = Q L^{-T}` where `T = L L^T` is the bidiagonal Cholesky factorization
/// of the Lanczos tridiagonal, so `R R^T = Q T^{-1} Q^T`.
pub fn lanczos_root(f: &LanczosFactors) -> Result<Mat<f64>> {
    let k = f.rank();
    let mut diag = Vec::with_capacity(k);
    let mut sub = Vec::with_capacity(k.saturating_sub(1));
    for i in 0..k {
        let reduce = if i > 0 { sub[i - 1] * sub[i - 1] } else { 0.0 };
        let pivot = f.alpha[i] - reduce;
        if !(pivot > 0.0) {
            return Err(Error::Breakdown(format!(
                "Lanczos tridiagonal is not positive definite at step {i}"
            )));
        }
        let di: f64 = pivot.sqrt();
        diag.push(di);
        if i + 1 < k {
            sub.push(f.beta[i] / di);
        }
    }
    let n = f.q.nrows();
    let mut root = Mat::<f64>::zeros(n, k);
    for j in 0..k {
        for i in 0..n {
            let carry = if j > 0 { sub[j - 1] * root[(i, j - 1)] } else { 0.0 };
            root[(i, j)] = (f.q[(i, j)] - carry) / diag[j];
        }
    }
    Ok(root)
}

/// `mean + K_*X m` and `s2 - ||R^T k_X*||^2` (plus noise if asked) per test
/// row, in blocks of test points.
pub fn predict(
    cache: &PredictiveCache,
    model: &GpModel,
    x_star: MatRef<'_, f64>,
    include_noise: bool,
) -> Result<Prediction> {
    let n = model.len();
    Error::check_len(n, cache.mean_cache.len())?;
    Error::check_len(model.input_dim(), x_star.ncols())?;
    let theta = model.hyperparams();
    let train = model.scaled_inputs()?;
    let test = ScaledInputs::new(x_star, &theta.lengthscales())?;
    let s2 = theta.outputscale();
    let noise = if include_noise { theta.noise() } else { 0.0 };
    let total = x_star.nrows();

    let mut mean = Vec::with_capacity(total);
    let mut variance = Vec::with_capacity(total);
    let mut clamped = 0;
    let mut start = 0;
    while start < total {
        let len = PREDICT_BLOCK.min(total - start);
        let block = test_block(&test, start, len);
        let cross = cross_covariance(&block, &train, s2);
        for i in 0..len {
            let row: Vec<f64> = (0..n).map(|j| cross[(i, j)]).collect();
            mean.push(theta.mean_constant + dot(&row, &cache.mean_cache));
        }
        let explained: Vec<f64> = match &cache.root {
            CovarianceRoot::LowRank(r) => {
                let proj = gemm(cross.as_ref(), r.as_ref());
                (0..len).map(|i| (0..proj.ncols()).map(|c| proj[(i, c)].powi(2)).sum()).collect()
            }
            CovarianceRoot::Cholesky(l) => {
                let mut v = cross.transpose().to_owned();
                solve_lower_triangular_in_place(l.as_ref(), v.as_mut(), Par::Seq);
                (0..len).map(|c| v.col_as_slice(c).iter().map(|x| x * x).sum()).collect()
            }
        };
        for e in explained {
            let mut latent = s2 - e;
            if !(latent > VARIANCE_FLOOR) {
                latent = VARIANCE_FLOOR;
                clamped += 1;
            }
            variance.push(latent + noise);
        }
        start += len;
    }
    Ok(Prediction { mean, variance, includes_noise: include_noise, clamped })
}

fn test_block(test: &ScaledInputs, start: usize, len: usize) -> ScaledInputs {
    let d = test.dim();
    let rows = Mat::from_fn(len, d, |i, j| test.row(start + i)[j]);
    ScaledInputs::new(rows.as_ref(), &vec![1.0; d]).expect("finite scaled inputs")
}
