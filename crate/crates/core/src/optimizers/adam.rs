use std::time::Instant;

use super::lbfgs::projected_gradient;
use super::{max_norm, should_stop, FitTrace, Method, OptimizerConfig, Point, StopReason, Tracker};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam with bias-corrected moments, projected onto the bounds after each
/// step when bounds are set.
pub(crate) fn run(tracker: &mut Tracker<'_>, start: Point, cfg: &OptimizerConfig) -> FitTrace {
    let mut clock = Instant::now();
    let mut trace = FitTrace::default();
    let Point { mut x, f, mut g } = start;
    trace.push(f, &x, tracker.evals, Method::Adam, &mut clock);
    let dim = x.len();
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];

    for t in 1..=cfg.max_epochs {
        let pg = projected_gradient(&x, &g, cfg.bounds.as_ref());
        if let Some(reason) = should_stop(cfg, &trace.losses, max_norm(&pg)) {
            trace.stop_reason = Some(reason);
            return trace;
        }
        let c1 = 1.0 - BETA1.powi(t as i32);
        let c2 = 1.0 - BETA2.powi(t as i32);
        for i in 0..dim {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            x[i] -= cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
        }
        if let Some(b) = &cfg.bounds {
            b.project(&mut x);
        }
        match tracker.eval(&x) {
            Some((f, grad)) => {
                g = grad;
                trace.push(f, &x, tracker.evals, Method::Adam, &mut clock);
            }
            None => {
                trace.stop_reason = Some(StopReason::Divergence);
                return trace;
            }
        }
    }
    trace.stop_reason = Some(StopReason::MaxEpochs);
    trace
}
