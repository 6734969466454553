//! Steps shared by the CLI and the sweep: data preparation, training and
//! test-set evaluation.

use std::time::Instant;

use faer::Mat;

use itergp::gp::{
    build_caches_multi, nll_metric, predict, rmse_metric, solve_mean_cache, Backend, GpModel, PredictiveCache,
    Prediction,
};
use itergp::kernels::HyperParams;
use itergp::optimizers::{fit_gp, FitResult, OptimizerConfig};
use itergp::rng::derive_seed;

use crate::dataset::{fingerprint, Dataset};
use crate::error::Result;
use crate::split::{split_and_standardize, Split};

/// Stable 64-bit stream index for a text key.
pub fn key_stream(key: &str) -> u64 {
    fingerprint(key.as_bytes())
}

pub fn subsample_seed(root: u64, dataset: &str) -> u64 {
    derive_seed(root, key_stream(&format!("subsample/{dataset}")))
}

pub fn split_seed(root: u64, dataset: &str, split: usize) -> u64 {
    derive_seed(root, key_stream(&format!("split/{dataset}/{split}")))
}

/// Caps the dataset at `subsample` rows and draws split number `split`.
/// Everything is keyed by `(root, dataset name, split)`.
pub fn prepare_split(ds: &Dataset, root: u64, subsample: usize, train_frac: f64, split: usize) -> Result<Split> {
    let capped = ds.subsample(subsample, subsample_seed(root, &ds.name));
    split_and_standardize(&capped, split_seed(root, &ds.name, split), train_frac)
}

pub struct Trained {
    pub model: GpModel,
    pub fit: FitResult,
    pub seconds: f64,
}

/// Fits hyperparameters from the default starting point.
pub fn train(x: Mat<f64>, y: Vec<f64>, backend: Backend, opt: &OptimizerConfig) -> Result<Trained> {
    let clock = Instant::now();
    let d = x.ncols();
    let model = GpModel::new(x, y, HyperParams::default_init(d), backend)?;
    let (model, fit) = fit_gp(&model, opt)?;
    Ok(Trained { model, fit, seconds: clock.elapsed().as_secs_f64() })
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub rmse: f64,
    pub nll: f64,
    pub clamped: usize,
    pub cg_iters_mean: Option<f64>,
    pub rank: usize,
    pub breakdown: bool,
    pub prediction: Prediction,
}

/// Predicts the test rows (variance includes the observation noise) and
/// scores them in standardized units.
pub fn evaluate(cache: &PredictiveCache, model: &GpModel, x_test: &Mat<f64>, y_test: &[f64]) -> Result<Evaluation> {
    let prediction = predict(cache, model, x_test.as_ref(), true)?;
    Ok(Evaluation {
        rmse: rmse_metric(&prediction, y_test)?,
        nll: nll_metric(&prediction, y_test)?,
        clamped: prediction.clamped,
        cg_iters_mean: cache.cg.as_ref().map(|c| c.mean_iterations),
        rank: cache.rank,
        breakdown: cache.breakdown,
        prediction,
    })
}

/// Caches for every `(tolerance, rank)` pair: one Lanczos run at the largest
/// rank under `backends[0]`, and one mean solve per backend. Indexed
/// `[backend][rank]`.
pub fn cache_grid(model: &GpModel, backends: &[Backend], ranks: &[usize]) -> Result<Vec<Vec<PredictiveCache>>> {
    let Some(first) = backends.first() else {
        return Ok(Vec::new());
    };
    let base = build_caches_multi(&model.with_backend(first.clone())?, ranks)?;
    let mut grid = vec![base.clone()];
    for backend in &backends[1..] {
        let (mean_cache, cg) = solve_mean_cache(&model.with_backend(backend.clone())?)?;
        grid.push(
            base.iter()
                .map(|c| PredictiveCache { mean_cache: mean_cache.clone(), cg: cg.clone(), ..c.clone() })
                .collect(),
        );
    }
    Ok(grid)
}
