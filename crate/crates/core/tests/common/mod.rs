#![allow(dead_code)]

use itergp::faer::Mat;
use itergp::kernels::HyperParams;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_inputs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Mat<f64> {
    let data: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
    Mat::from_fn(n, d, |i, j| data[i * d + j])
}

/// Smooth target plus uniform noise of half-width `noise`.
pub fn smooth_targets(rng: &mut ChaCha8Rng, x: &Mat<f64>, noise: f64) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| {
            let s: f64 = (0..x.ncols()).map(|j| (3.0 * x[(i, j)] + j as f64).sin()).sum();
            s + noise * (2.0 * rng.random::<f64>() - 1.0)
        })
        .collect()
}

pub fn random_theta(rng: &mut ChaCha8Rng, d: usize) -> HyperParams {
    let ls: Vec<f64> = (0..d).map(|_| 0.2 + rng.random::<f64>()).collect();
    let s2 = 0.5 + rng.random::<f64>();
    let noise = 0.05 + 0.2 * rng.random::<f64>();
    let mean = rng.random::<f64>() - 0.5;
    HyperParams::from_constrained(&ls, s2, noise, mean).unwrap()
}

/// Matern-5/2 ARD matrix written out from the formula, independent of the
/// library's kernel code.
pub fn oracle_kernel(a: &Mat<f64>, b: &Mat<f64>, theta: &HyperParams) -> DMatrix<f64> {
    let ls = theta.lengthscales();
    let s2 = theta.outputscale();
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let r2: f64 = (0..a.ncols()).map(|c| ((a[(i, c)] - b[(j, c)]) / ls[c]).powi(2)).sum();
        let r = r2.sqrt();
        let s = 5f64.sqrt() * r;
        s2 * (1.0 + s + s * s / 3.0) * (-s).exp()
    })
}

pub fn oracle_shifted(x: &Mat<f64>, theta: &HyperParams) -> DMatrix<f64> {
    let mut k = oracle_kernel(x, x, theta);
    for i in 0..x.nrows() {
        k[(i, i)] += theta.noise();
    }
    k
}

pub struct OraclePosterior {
    pub mll_total: f64,
    pub quadratic: f64,
    pub mean: Vec<f64>,
    pub latent_variance: Vec<f64>,
}

/// Exact GP posterior and marginal likelihood through nalgebra's Cholesky.
pub fn oracle_posterior(x: &Mat<f64>, y: &[f64], theta: &HyperParams, x_star: &Mat<f64>) -> OraclePosterior {
    let n = x.nrows();
    let k_hat = oracle_shifted(x, theta);
    let chol = k_hat.cholesky().expect("SPD");
    let r = DVector::from_iterator(n, y.iter().map(|v| v - theta.mean_constant));
    let m = chol.solve(&r);
    let quadratic = r.dot(&m);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mll_total = -0.5 * quadratic - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    let cross = oracle_kernel(x_star, x, theta);
    let mean = (0..x_star.nrows())
        .map(|i| theta.mean_constant + cross.row(i).transpose().dot(&m))
        .collect();
    let solved = chol.solve(&cross.transpose());
    let latent_variance = (0..x_star.nrows())
        .map(|i| theta.outputscale() - cross.row(i).transpose().dot(&solved.column(i)))
        .collect();
    OraclePosterior { mll_total, quadratic, mean, latent_variance }
}
