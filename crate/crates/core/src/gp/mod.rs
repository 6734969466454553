//! Exact and iterative GP regression: marginal likelihood and its gradient,
//! predictive caches, prediction, and test metrics.

mod metrics;
mod mll;
mod model;
mod predict;
mod rank;

pub use metrics::{gaussian_nll, nll_metric, rmse_metric};
pub use mll::{mll, mll_and_grad, mll_grad, mll_terms, MllEvaluation, MllGradient};
pub use model::{
    cholesky_with_jitter, Backend, CgStats, GpModel, IterativeSettings, JitteredCholesky,
};
pub use predict::{
    build_caches, build_caches_multi, lanczos_root, predict, solve_mean_cache, CovarianceRoot, PredictiveCache,
    Prediction, VARIANCE_FLOOR,
};
pub use rank::{variance_vs_rank, RankVariance, MAX_RANK_STUDY_DIM};
