//! Generated datasets for tests and for runs without the real benchmark files.

use faer::{Mat, Side};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use itergp::kernels::{matern52, HyperParams};
use itergp::rng::stream_rng;

use crate::dataset::Dataset;
use crate::error::{BenchError, Result};

/// Rows and features of the UCI elevators table.
pub const ELEVATORS_SHAPE: (usize, usize) = (16_599, 18);

/// Inputs uniform on `[0, 1]^d` and targets drawn from the GP prior with
/// hyperparameters `theta`, observation noise included.
pub fn gp_prior_dataset(n: usize, theta: &HyperParams, seed: u64) -> Result<Dataset> {
    let d = theta.input_dim();
    let mut rng = stream_rng(seed, 0);
    let x = Mat::from_fn(n, d, |_, _| rng.random::<f64>());
    let mut k = matern52(x.as_ref(), x.as_ref(), theta)?;
    for i in 0..n {
        k[(i, i)] += theta.noise() + 1e-10;
    }
    let llt = k
        .llt(Side::Lower)
        .map_err(|_| BenchError::contract("prior covariance is not positive definite"))?;
    let l = llt.L();
    let mut rng = stream_rng(seed, 1);
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let y = (0..n)
        .map(|i| theta.mean_constant + (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>())
        .collect();
    Dataset::new(format!("gp-prior-{seed}"), x, y)
}

/// A table with the shape of elevators: correlated continuous features,
/// a few skewed and integer-valued columns, and a smooth target that
/// depends on a subset of them plus noise (about 12% of target variance).
pub fn elevators_surrogate(n: usize, seed: u64) -> Dataset {
    let d = ELEVATORS_SHAPE.1;
    let latent = 5;
    let mut rng = stream_rng(seed, 0);
    let mut gauss = move || -> f64 { StandardNormal.sample(&mut rng) };
    let loadings: Vec<Vec<f64>> = (0..12).map(|_| (0..latent).map(|_| gauss()).collect()).collect();

    let mut x = Mat::<f64>::zeros(n, d);
    let mut signal = Vec::with_capacity(n);
    for i in 0..n {
        let z: Vec<f64> = (0..latent).map(|_| gauss()).collect();
        for j in 0..12 {
            let lin: f64 = loadings[j].iter().zip(&z).map(|(a, b)| a * b).sum();
            x[(i, j)] = lin / (latent as f64).sqrt() + 0.3 * gauss();
        }
        for j in 12..16 {
            x[(i, j)] = (0.6 * z[j - 12] + 0.4 * gauss()).exp();
        }
        x[(i, 16)] = (3.0 + 1.5 * z[4] + 0.5 * gauss()).round().clamp(0.0, 8.0);
        x[(i, 17)] = (2.0 * gauss()).round();
        let f = (1.2 * x[(i, 0)]).sin()
            + 0.6 * x[(i, 1)] * (0.8 * x[(i, 2)]).cos()
            + 0.4 * x[(i, 3)].powi(2) / (1.0 + x[(i, 3)].powi(2))
            + 0.5 * x[(i, 12)].ln_1p()
            - 0.15 * x[(i, 16)]
            + 0.3 * (x[(i, 4)] - x[(i, 5)]).tanh();
        signal.push(f);
    }
    let mean = signal.iter().sum::<f64>() / n as f64;
    let var = signal.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
    let noise_sd = (var * 0.12 / 0.88).sqrt();
    let y = signal.iter().map(|s| s + noise_sd * gauss()).collect();
    let mut ds = Dataset::new("elevators-surrogate", x, y).expect("finite by construction");
    ds.provenance.warnings.push(format!("synthetic surrogate, seed {seed}"));
    ds
}

/// Features from a skewed distribution and a target shifted by a heavy
/// tail, so test statistics differ visibly from training statistics.
pub fn skewed_dataset(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, 0);
    let x = Mat::from_fn(n, d, |_, _| rng.random::<f64>().powi(4) * 10.0);
    let y = (0..n).map(|i| x[(i, 0)].exp().ln_1p() + rng.random::<f64>()).collect();
    Dataset::new("skewed", x, y).expect("finite by construction")
}
