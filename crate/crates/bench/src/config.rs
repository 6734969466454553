use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use itergp::gp::{Backend, IterativeSettings};
use itergp::linop::Precision;
use itergp::optimizers::{Method, OptimizerConfig};
use itergp::solvers::{DEFAULT_MAX_CG_ITERS, DEFAULT_NUM_PROBES};

use crate::error::{BenchError, Result};

pub const DEFAULT_TRAIN_FRAC: f64 = 0.8;
pub const DEFAULT_SUBSAMPLE: usize = 4000;
pub const DEFAULT_SPLITS: usize = 5;
/// L-BFGS steps before Adam takes over when Adam is the optimizer.
pub const DEFAULT_PRETRAIN_STEPS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Cholesky,
    Iterative,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Cholesky => "cholesky",
            BackendKind::Iterative => "iterative",
        })
    }
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "cholesky" => Ok(BackendKind::Cholesky),
            "iterative" => Ok(BackendKind::Iterative),
            other => Err(format!("unknown backend {other:?}")),
        }
    }
}

/// Bundled solver settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Train tolerance 1, test tolerance 1e-3, Lanczos rank 100,
    /// preconditioner rank 15.
    GpytorchDefaults,
    /// Train tolerance 1e-3, test tolerance 1e-2, preconditioner rank 50,
    /// Lanczos rank 5000.
    Recommended,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "gpytorch-defaults" => Ok(Preset::GpytorchDefaults),
            "recommended" => Ok(Preset::Recommended),
            other => Err(format!("unknown preset {other:?}")),
        }
    }
}

impl Preset {
    /// `(eps_train, eps_test, w, k)`.
    pub fn settings(self) -> (f64, f64, usize, usize) {
        match self {
            Preset::GpytorchDefaults => (1.0, 1e-3, 15, 100),
            Preset::Recommended => (1e-3, 1e-2, 50, 5000),
        }
    }
}

/// Optimizer knobs shared by every cell of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub lr: f64,
    pub max_epochs: usize,
    pub lbfgs_memory: usize,
    pub pretrain_steps: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        let base = OptimizerConfig::default();
        Self {
            lr: base.lr,
            max_epochs: base.max_epochs,
            lbfgs_memory: base.lbfgs_memory,
            pretrain_steps: DEFAULT_PRETRAIN_STEPS,
        }
    }
}

impl OptimizerSettings {
    pub fn config(&self, method: Method) -> OptimizerConfig {
        OptimizerConfig {
            method,
            lr: self.lr,
            max_epochs: self.max_epochs,
            lbfgs_memory: self.lbfgs_memory,
            pretrain_steps: if method == Method::Adam { self.pretrain_steps } else { 0 },
            ..OptimizerConfig::default()
        }
    }
}

/// The grid of a sweep. Every combination of the iterative axes is one
/// cell per split; the Cholesky baseline adds one cell per split and
/// optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub eps_train: Vec<f64>,
    /// Test-time tolerances crossed with `eps_train`; `None` pairs each
    /// training tolerance with itself.
    pub eps_test: Option<Vec<f64>>,
    pub precond_ranks: Vec<usize>,
    pub lanczos_ranks: Vec<usize>,
    pub optimizers: Vec<Method>,
    pub precisions: Vec<Precision>,
    pub backends: Vec<BackendKind>,
    pub splits: usize,
    pub seed: u64,
    pub train_frac: f64,
    pub subsample: usize,
    pub optimizer: OptimizerSettings,
    pub max_cg_iters: usize,
    pub num_probes: usize,
    pub logdet_rank: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            eps_train: vec![1e-3, 1e-2, 1e-1, 1.0],
            eps_test: None,
            precond_ranks: vec![15, 50, 100],
            lanczos_ranks: vec![15, 100, 500, 1000, 2500, 5000, 10000],
            optimizers: vec![Method::Adam, Method::Lbfgs],
            precisions: vec![Precision::F64],
            backends: vec![BackendKind::Cholesky, BackendKind::Iterative],
            splits: DEFAULT_SPLITS,
            seed: 0,
            train_frac: DEFAULT_TRAIN_FRAC,
            subsample: DEFAULT_SUBSAMPLE,
            optimizer: OptimizerSettings::default(),
            max_cg_iters: DEFAULT_MAX_CG_ITERS,
            num_probes: DEFAULT_NUM_PROBES,
            logdet_rank: IterativeSettings::default().logdet_rank,
        }
    }
}

impl SweepConfig {
    /// Replaces the tolerance and rank axes with the preset's single values.
    pub fn with_preset(mut self, preset: Preset) -> Self {
        let (eps_train, eps_test, w, k) = preset.settings();
        self.eps_train = vec![eps_train];
        self.eps_test = Some(vec![eps_test]);
        self.precond_ranks = vec![w];
        self.lanczos_ranks = vec![k];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BenchError::contract(msg));
        let positive = |v: &f64| *v > 0.0 && v.is_finite();
        if self.splits == 0 {
            return bad("splits must be at least 1".into());
        }
        if self.backends.is_empty() {
            return bad("backend set is empty".into());
        }
        if self.has_iterative() {
            if self.eps_train.is_empty() || !self.eps_train.iter().all(positive) {
                return bad(format!("training tolerances must be positive: {:?}", self.eps_train));
            }
            if let Some(t) = &self.eps_test {
                if t.is_empty() || !t.iter().all(positive) {
                    return bad(format!("test tolerances must be positive: {t:?}"));
                }
            }
            if self.precond_ranks.is_empty() {
                return bad("preconditioner rank grid is empty".into());
            }
            if self.lanczos_ranks.is_empty() || self.lanczos_ranks.contains(&0) {
                return bad(format!("Lanczos ranks must be positive: {:?}", self.lanczos_ranks));
            }
            if self.precisions.is_empty() {
                return bad("precision set is empty".into());
            }
        }
        if self.optimizers.is_empty() {
            return bad("optimizer set is empty".into());
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return bad(format!("train fraction must lie in (0, 1), got {}", self.train_frac));
        }
        if self.subsample < crate::split::MIN_ROWS {
            return bad(format!("subsample cap {} is below {}", self.subsample, crate::split::MIN_ROWS));
        }
        for m in &self.optimizers {
            self.optimizer.config(*m).validate(1)?;
        }
        self.iterative_settings(1.0, 0, Precision::F64, 0).validate()?;
        Ok(())
    }

    pub fn has_iterative(&self) -> bool {
        self.backends.contains(&BackendKind::Iterative)
    }

    pub fn has_cholesky(&self) -> bool {
        self.backends.contains(&BackendKind::Cholesky)
    }

    pub fn test_tolerances(&self, eps_train: f64) -> Vec<f64> {
        match &self.eps_test {
            Some(t) => t.clone(),
            None => vec![eps_train],
        }
    }

    pub fn iterative_settings(&self, cg_tol: f64, w: usize, precision: Precision, seed: u64) -> IterativeSettings {
        IterativeSettings {
            cg_tol,
            precond_rank: w,
            max_cg_iters: self.max_cg_iters,
            num_probes: self.num_probes,
            logdet_rank: self.logdet_rank,
            seed,
            precision,
            ..IterativeSettings::default()
        }
    }

    pub fn backend(&self, cg_tol: f64, w: usize, precision: Precision, seed: u64) -> Backend {
        Backend::Iterative(self.iterative_settings(cg_tol, w, precision, seed))
    }
}
