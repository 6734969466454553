use std::collections::VecDeque;
use std::time::Instant;

use super::{max_norm, should_stop, Bounds, FitTrace, Method, OptimizerConfig, Point, StopReason, Tracker};
use crate::linop::{dot, norm};

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LINE_SEARCH_EVALS: usize = 20;
const MAX_BACKTRACKS: usize = 30;

/// Gradient with the components that would push an iterate sitting on a
/// bound further out set to zero.
pub(crate) fn projected_gradient(x: &[f64], g: &[f64], bounds: Option<&Bounds>) -> Vec<f64> {
    let Some(b) = bounds else { return g.to_vec() };
    (0..x.len())
        .map(|i| {
            let at_lower = x[i] <= b.lower[i] && g[i] > 0.0;
            let at_upper = x[i] >= b.upper[i] && g[i] < 0.0;
            if at_lower || at_upper {
                0.0
            } else {
                g[i]
            }
        })
        .collect()
}

/// `H g` for the L-BFGS inverse-Hessian approximation built from the
/// stored pairs (oldest first), with initial scaling `s^T y / y^T y` from
/// the newest pair.
pub fn two_loop_direction(g: &[f64], s: &[Vec<f64>], y: &[Vec<f64>]) -> Vec<f64> {
    let k = s.len();
    let mut q = g.to_vec();
    let rho: Vec<f64> = (0..k).map(|i| 1.0 / dot(&y[i], &s[i])).collect();
    let mut alpha = vec![0.0; k];
    for i in (0..k).rev() {
        alpha[i] = rho[i] * dot(&s[i], &q);
        for (qj, yj) in q.iter_mut().zip(&y[i]) {
            *qj -= alpha[i] * yj;
        }
    }
    if k > 0 {
        let gamma = dot(&s[k - 1], &y[k - 1]) / dot(&y[k - 1], &y[k - 1]);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for i in 0..k {
        let beta = rho[i] * dot(&y[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s[i]) {
            *qj += (alpha[i] - beta) * sj;
        }
    }
    q
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearchResult {
    pub alpha: f64,
    pub value: f64,
    pub slope: f64,
}

/// Line search for a step satisfying the strong Wolfe conditions
/// (`c1 = 1e-4`, `c2 = 0.9`) on `phi(alpha)`, which returns the value and
/// directional derivative or `None` for a failed evaluation. Steps never
/// exceed `alpha_max`; reaching it with sufficient decrease is accepted.
pub fn strong_wolfe<F>(
    mut phi: F,
    f0: f64,
    slope0: f64,
    alpha_init: f64,
    alpha_max: f64,
) -> Option<LineSearchResult>
where
    F: FnMut(f64) -> Option<(f64, f64)>,
{
    if !(slope0 < 0.0) || !(alpha_init > 0.0) {
        return None;
    }
    let mut evals = 0;
    let mut prev = LineSearchResult { alpha: 0.0, value: f0, slope: slope0 };
    let mut alpha = alpha_init.min(alpha_max);
    while evals < MAX_LINE_SEARCH_EVALS {
        evals += 1;
        let Some((value, slope)) = phi(alpha) else {
            // Back off toward the last good step.
            alpha = 0.5 * (prev.alpha + alpha);
            continue;
        };
        let cur = LineSearchResult { alpha, value, slope };
        if value > f0 + C1 * alpha * slope0 || (evals > 1 && value >= prev.value) {
            return zoom(&mut phi, f0, slope0, prev, cur, evals);
        }
        if slope.abs() <= -C2 * slope0 {
            return Some(cur);
        }
        if slope >= 0.0 {
            return zoom(&mut phi, f0, slope0, cur, prev, evals);
        }
        if alpha >= alpha_max {
            return Some(cur);
        }
        prev = cur;
        alpha = (4.0 * alpha).min(alpha_max);
    }
    None
}

fn zoom<F>(
    phi: &mut F,
    f0: f64,
    slope0: f64,
    mut lo: LineSearchResult,
    mut hi: LineSearchResult,
    mut evals: usize,
) -> Option<LineSearchResult>
where
    F: FnMut(f64) -> Option<(f64, f64)>,
{
    while evals < MAX_LINE_SEARCH_EVALS {
        let width = hi.alpha - lo.alpha;
        if width.abs() <= 1e-14 * lo.alpha.abs().max(hi.alpha.abs()).max(1e-300) {
            return None;
        }
        let (left, right) = if width > 0.0 { (lo.alpha, hi.alpha) } else { (hi.alpha, lo.alpha) };
        let margin = 0.1 * (right - left);
        let alpha = cubic_minimizer(&lo, &hi)
            .filter(|a| *a >= left + margin && *a <= right - margin)
            .unwrap_or(0.5 * (left + right));
        evals += 1;
        let Some((value, slope)) = phi(alpha) else {
            hi = LineSearchResult { alpha, value: f64::INFINITY, slope: f64::NAN };
            continue;
        };
        let cur = LineSearchResult { alpha, value, slope };
        if value > f0 + C1 * alpha * slope0 || value >= lo.value {
            hi = cur;
        } else {
            if slope.abs() <= -C2 * slope0 {
                return Some(cur);
            }
            if slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    None
}

fn cubic_minimizer(a: &LineSearchResult, b: &LineSearchResult) -> Option<f64> {
    if !(a.value.is_finite() && b.value.is_finite() && a.slope.is_finite() && b.slope.is_finite()) {
        return None;
    }
    let d1 = a.slope + b.slope - 3.0 * (a.value - b.value) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let alpha = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    alpha.is_finite().then_some(alpha)
}

/// Largest step along `d` that stays inside the bounds.
fn max_feasible_step(x: &[f64], d: &[f64], bounds: Option<&Bounds>) -> f64 {
    let Some(b) = bounds else { return f64::INFINITY };
    let mut step = f64::INFINITY;
    for i in 0..x.len() {
        if d[i] < 0.0 && b.lower[i].is_finite() {
            step = step.min((b.lower[i] - x[i]) / d[i]);
        } else if d[i] > 0.0 && b.upper[i].is_finite() {
            step = step.min((b.upper[i] - x[i]) / d[i]);
        }
    }
    step.max(0.0)
}

struct Probe<'t, 'a> {
    tracker: &'t mut Tracker<'a>,
    x: &'t [f64],
    d: &'t [f64],
    bounds: Option<&'t Bounds>,
    seen: Vec<(f64, Point)>,
    failed: bool,
}

impl Probe<'_, '_> {
    fn phi(&mut self, alpha: f64) -> Option<(f64, f64)> {
        let mut x: Vec<f64> = self.x.iter().zip(self.d).map(|(a, b)| a + alpha * b).collect();
        if let Some(b) = self.bounds {
            b.project(&mut x);
        }
        match self.tracker.eval(&x) {
            Some((f, g)) => {
                let slope = dot(&g, self.d);
                self.seen.push((alpha, Point { x, f, g }));
                Some((f, slope))
            }
            None => {
                self.failed = true;
                None
            }
        }
    }

    fn take(&mut self, alpha: f64) -> Point {
        let i = self.seen.iter().rposition(|(a, _)| *a == alpha).expect("evaluated step");
        self.seen.swap_remove(i).1
    }
}

/// Limited-memory BFGS with a strong Wolfe line search. With bounds the
/// search direction is restricted to free variables and steps are capped at
/// the boundary (a simplified projected variant of L-BFGS-B). A failed line
/// search falls back to one backtracking steepest-descent step and clears
/// the memory.
pub(crate) fn run(
    tracker: &mut Tracker<'_>,
    start: Point,
    cfg: &OptimizerConfig,
    max_iters: usize,
) -> (FitTrace, Point) {
    let mut clock = Instant::now();
    let mut trace = FitTrace::default();
    let bounds = cfg.bounds.as_ref();
    let mut p = start;
    trace.push(p.f, &p.x, tracker.evals, Method::Lbfgs, &mut clock);
    let mut mem_s: VecDeque<Vec<f64>> = VecDeque::new();
    let mut mem_y: VecDeque<Vec<f64>> = VecDeque::new();

    for _ in 0..max_iters {
        let pg = projected_gradient(&p.x, &p.g, bounds);
        if let Some(reason) = should_stop(cfg, &trace.losses, max_norm(&pg)) {
            trace.stop_reason = Some(reason);
            return (trace, p);
        }
        let free: Vec<bool> = pg.iter().zip(&p.g).map(|(a, b)| *a != 0.0 || *b == 0.0).collect();
        let (s_list, y_list): (Vec<_>, Vec<_>) =
            (mem_s.iter().cloned().collect(), mem_y.iter().cloned().collect());
        let mut d: Vec<f64> = two_loop_direction(&pg, &s_list, &y_list).iter().map(|v| -v).collect();
        for (di, f) in d.iter_mut().zip(&free) {
            if !f {
                *di = 0.0;
            }
        }
        if !(dot(&d, &pg) < 0.0) {
            d = pg.iter().map(|v| -v).collect();
            mem_s.clear();
            mem_y.clear();
        }
        let alpha_max = max_feasible_step(&p.x, &d, bounds);
        let alpha0 = if mem_s.is_empty() { (1.0 / norm(&d)).min(1.0) } else { 1.0 };

        let mut probe = Probe { tracker: &mut *tracker, x: &p.x, d: &d, bounds, seen: Vec::new(), failed: false };
        let slope0 = dot(&p.g, &d);
        let found = strong_wolfe(|a| probe.phi(a), p.f, slope0, alpha0, alpha_max);
        let next = match found {
            Some(res) => Some(probe.take(res.alpha)),
            None => {
                let diverged = probe.failed;
                drop(probe);
                match steepest_descent_step(tracker, &p, &pg, bounds) {
                    Some(q) => {
                        trace.fallback_steps += 1;
                        mem_s.clear();
                        mem_y.clear();
                        Some(q)
                    }
                    None => {
                        trace.stop_reason = Some(if diverged {
                            StopReason::Divergence
                        } else {
                            StopReason::LineSearchFailed
                        });
                        return (trace, p);
                    }
                }
            }
        };
        let q = next.expect("accepted step");
        let s: Vec<f64> = q.x.iter().zip(&p.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = q.g.iter().zip(&p.g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-10 * norm(&s) * norm(&y) {
            mem_s.push_back(s);
            mem_y.push_back(y);
            if mem_s.len() > cfg.lbfgs_memory {
                mem_s.pop_front();
                mem_y.pop_front();
            }
        }
        p = q;
        trace.push(p.f, &p.x, tracker.evals, Method::Lbfgs, &mut clock);
    }
    trace.stop_reason = Some(StopReason::MaxEpochs);
    (trace, p)
}

/// Backtracking (Armijo) step along the negative projected gradient.
fn steepest_descent_step(
    tracker: &mut Tracker<'_>,
    p: &Point,
    pg: &[f64],
    bounds: Option<&Bounds>,
) -> Option<Point> {
    let d: Vec<f64> = pg.iter().map(|v| -v).collect();
    let slope = dot(&p.g, &d);
    if !(slope < 0.0) {
        return None;
    }
    let mut alpha = (1.0 / norm(&d)).min(1.0).min(max_feasible_step(&p.x, &d, bounds));
    for _ in 0..MAX_BACKTRACKS {
        let mut x: Vec<f64> = p.x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
        if let Some(b) = bounds {
            b.project(&mut x);
        }
        if let Some((f, g)) = tracker.eval(&x) {
            if f <= p.f + C1 * alpha * slope {
                return Some(Point { x, f, g });
            }
        }
        alpha *= 0.5;
    }
    None
}
