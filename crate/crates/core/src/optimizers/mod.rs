//! Marginal-likelihood maximization with Adam or limited-memory BFGS.
//!
//! Both optimizers minimize a generic `theta -> (loss, gradient)` objective;
//! [`fit_gp`] wires in `-MLL / n` of a [`GpModel`].

mod adam;
mod lbfgs;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{mll_and_grad, GpModel};
use crate::kernels::HyperParams;

pub use lbfgs::{strong_wolfe, two_loop_direction, LineSearchResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Adam,
    Lbfgs,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Adam => "adam",
            Method::Lbfgs => "lbfgs",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(Method::Adam),
            "lbfgs" | "l-bfgs" | "lbfgsb" | "l-bfgs-b" => Ok(Method::Lbfgs),
            other => Err(format!("unknown optimizer {other:?}")),
        }
    }
}

/// Box constraints on the raw parameters; use infinities for open sides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        Error::check_len(lower.len(), upper.len())?;
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::contract("every lower bound must not exceed its upper bound"));
        }
        Ok(Self { lower, upper })
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }
}

/// Stop once the exponential moving average of `|loss_t - loss_{t-1}|`
/// drops below `threshold * (1 + |loss_t|)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmaRule {
    pub window: usize,
    pub threshold: f64,
}

impl Default for EmaRule {
    fn default() -> Self {
        Self { window: 10, threshold: 1e-5 }
    }
}

/// EMA convergence test over a loss history. The average uses smoothing
/// `2 / (window + 1)`, starts from the first absolute change, and is only
/// trusted once `window` changes have been seen.
pub fn ema_converged(loss_history: &[f64], window: usize, threshold: f64) -> bool {
    if loss_history.len() < 2 || loss_history.len() - 1 < window.max(1) {
        return false;
    }
    let alpha = 2.0 / (window as f64 + 1.0);
    let mut ema = (loss_history[1] - loss_history[0]).abs();
    for w in loss_history[1..].windows(2) {
        ema = alpha * (w[1] - w[0]).abs() + (1.0 - alpha) * ema;
    }
    let last = *loss_history.last().expect("nonempty");
    ema < threshold * (1.0 + last.abs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: Method,
    /// Adam step size.
    pub lr: f64,
    /// Cap on Adam steps or L-BFGS outer iterations.
    pub max_epochs: usize,
    pub lbfgs_memory: usize,
    pub bounds: Option<Bounds>,
    /// `None` disables early stopping on loss plateaus.
    pub ema: Option<EmaRule>,
    /// Stop when the (projected) gradient's max-norm falls to this.
    pub grad_tol: f64,
    /// L-BFGS iterations run before switching to Adam; ignored for L-BFGS.
    pub pretrain_steps: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: Method::Adam,
            lr: 0.05,
            max_epochs: 2000,
            lbfgs_memory: 10,
            bounds: None,
            ema: Some(EmaRule::default()),
            grad_tol: 1e-9,
            pretrain_steps: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        Self::default()
    }

    pub fn lbfgs() -> Self {
        Self { method: Method::Lbfgs, ..Self::default() }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::contract(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.lbfgs_memory == 0 {
            return Err(Error::contract("L-BFGS memory must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::contract("max_epochs must be at least 1"));
        }
        if let Some(b) = &self.bounds {
            Error::check_len(dim, b.lower.len())?;
        }
        if let Some(e) = &self.ema {
            if e.window == 0 || !(e.threshold > 0.0) {
                return Err(Error::contract("EMA window and threshold must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EmaConverged,
    GradientTolerance,
    /// Non-finite loss or gradient, or a failed objective evaluation.
    Divergence,
    /// Neither the Wolfe search nor the steepest-descent fallback made
    /// progress.
    LineSearchFailed,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::MaxEpochs => "max_epochs",
            StopReason::EmaConverged => "ema_converged",
            StopReason::GradientTolerance => "gradient_tolerance",
            StopReason::Divergence => "divergence",
            StopReason::LineSearchFailed => "line_search_failed",
        })
    }
}

/// Per-step record of an optimization run. Entry `t` describes the `t`-th
/// accepted iterate (entry 0 is the starting point).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub losses: Vec<f64>,
    pub thetas: Vec<Vec<f64>>,
    /// Cumulative objective/gradient evaluations when the iterate was
    /// accepted.
    pub grad_evals: Vec<usize>,
    pub methods: Vec<Method>,
    /// Wall-clock seconds spent reaching each iterate. The only field that
    /// differs between otherwise identical runs.
    pub step_seconds: Vec<f64>,
    /// Line-search failures that fell back to a steepest-descent step.
    pub fallback_steps: usize,
    pub stop_reason: Option<StopReason>,
}

impl FitTrace {
    pub fn steps(&self) -> usize {
        self.losses.len()
    }

    pub fn total_grad_evals(&self) -> usize {
        self.grad_evals.last().copied().unwrap_or(0)
    }

    pub fn best_loss(&self) -> f64 {
        self.losses.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Evaluations spent until the loss first came within `tol` of `target`.
    pub fn evals_to_reach(&self, target: f64, tol: f64) -> Option<usize> {
        self.losses.iter().position(|l| *l <= target + tol).map(|i| self.grad_evals[i])
    }

    /// Equality of everything except wall-clock timings.
    pub fn same_path(&self, other: &Self) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        bits(&self.losses) == bits(&other.losses)
            && self.thetas.len() == other.thetas.len()
            && self.thetas.iter().zip(&other.thetas).all(|(a, b)| bits(a) == bits(b))
            && self.grad_evals == other.grad_evals
            && self.methods == other.methods
            && self.fallback_steps == other.fallback_steps
            && self.stop_reason == other.stop_reason
    }

    fn push(&mut self, loss: f64, theta: &[f64], evals: usize, method: Method, clock: &mut Instant) {
        self.losses.push(loss);
        self.thetas.push(theta.to_vec());
        self.grad_evals.push(evals);
        self.methods.push(method);
        self.step_seconds.push(clock.elapsed().as_secs_f64());
        *clock = Instant::now();
    }

    fn drop_first(&mut self) {
        if !self.losses.is_empty() {
            self.losses.remove(0);
            self.thetas.remove(0);
            self.grad_evals.remove(0);
            self.methods.remove(0);
            self.step_seconds.remove(0);
        }
    }

    fn append(&mut self, mut later: FitTrace) {
        self.losses.append(&mut later.losses);
        self.thetas.append(&mut later.thetas);
        self.grad_evals.append(&mut later.grad_evals);
        self.methods.append(&mut later.methods);
        self.step_seconds.append(&mut later.step_seconds);
        self.fallback_steps += later.fallback_steps;
        self.stop_reason = later.stop_reason;
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Best iterate seen.
    pub theta: Vec<f64>,
    pub loss: f64,
    pub trace: FitTrace,
}

/// Objective evaluation counting and best-so-far bookkeeping shared by the
/// optimizers.
pub(crate) struct Tracker<'a> {
    objective: &'a mut dyn FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    pub evals: usize,
    pub best: Option<(f64, Vec<f64>)>,
}

impl<'a> Tracker<'a> {
    fn new(objective: &'a mut dyn FnMut(&[f64]) -> Result<(f64, Vec<f64>)>) -> Self {
        Self { objective, evals: 0, best: None }
    }

    /// `None` when the evaluation failed or produced non-finite values.
    pub fn eval(&mut self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.evals += 1;
        match (self.objective)(theta) {
            Ok((loss, grad)) if loss.is_finite() && grad.iter().all(|g| g.is_finite()) => {
                if self.best.as_ref().is_none_or(|(b, _)| loss < *b) {
                    self.best = Some((loss, theta.to_vec()));
                }
                Some((loss, grad))
            }
            _ => None,
        }
    }
}

/// Minimizes `objective` from `theta0`.
pub fn fit<F>(mut objective: F, theta0: &[f64], cfg: &OptimizerConfig) -> Result<FitResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate(theta0.len())?;
    if theta0.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("starting point must be finite"));
    }
    let mut start = theta0.to_vec();
    if let Some(b) = &cfg.bounds {
        b.project(&mut start);
    }
    // Surface a broken objective at the starting point instead of reporting
    // an immediate divergence.
    let (loss0, grad0) = objective(&start)?;
    if !loss0.is_finite() || grad0.iter().any(|g| !g.is_finite()) {
        return Err(Error::Breakdown("objective is not finite at the starting point".into()));
    }
    Error::check_len(start.len(), grad0.len())?;

    let mut tracker = Tracker::new(&mut objective);
    tracker.evals = 1;
    tracker.best = Some((loss0, start.clone()));
    let initial = Point { x: start, f: loss0, g: grad0 };
    let trace = match cfg.method {
        Method::Lbfgs => lbfgs::run(&mut tracker, initial, cfg, cfg.max_epochs).0,
        Method::Adam if cfg.pretrain_steps > 0 => {
            let (mut trace, last) = lbfgs::run(&mut tracker, initial, cfg, cfg.pretrain_steps);
            if trace.stop_reason != Some(StopReason::Divergence) {
                let mut rest = adam::run(&mut tracker, last, cfg);
                // The handoff point already closes the first phase.
                rest.drop_first();
                trace.append(rest);
            }
            trace
        }
        Method::Adam => adam::run(&mut tracker, initial, cfg),
    };
    let (loss, theta) = tracker.best.clone().expect("starting point evaluated");
    Ok(FitResult { theta, loss, trace })
}

/// An evaluated iterate.
#[derive(Clone, Debug)]
pub(crate) struct Point {
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
}

/// Fits the model's hyperparameters by minimizing `-MLL / n` and returns
/// the model at the best iterate.
pub fn fit_gp(model: &GpModel, cfg: &OptimizerConfig) -> Result<(GpModel, FitResult)> {
    let d = model.input_dim();
    let objective = |v: &[f64]| -> Result<(f64, Vec<f64>)> {
        let theta = HyperParams::from_vector(d, v)?;
        let eval = mll_and_grad(&model.with_hyperparams(theta)?)?;
        let grad = eval.gradient.expect("gradient requested");
        Ok((-eval.value, grad.values.iter().map(|g| -g).collect()))
    };
    let result = fit(objective, &model.hyperparams().to_vector(), cfg)?;
    let theta = HyperParams::from_vector(d, &result.theta)?;
    Ok((model.with_hyperparams(theta)?, result))
}

pub(crate) fn should_stop(cfg: &OptimizerConfig, losses: &[f64], grad_norm: f64) -> Option<StopReason> {
    if grad_norm <= cfg.grad_tol {
        return Some(StopReason::GradientTolerance);
    }
    if let Some(e) = &cfg.ema {
        if ema_converged(losses, e.window, e.threshold) {
            return Some(StopReason::EmaConverged);
        }
    }
    None
}

pub(crate) fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
