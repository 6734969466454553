use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::model::{Backend, CgStats, GpModel, IterativeSettings};
use crate::kernels::{
    softplus_derivative, sq_dist, ParamId, ScaledInputs, SQRT5,
};
use crate::linop::{dot, gemm};
use crate::rng::rademacher_probes;
use crate::solvers::{pcg_solve, slq_logdet_with_probes, Estimate};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// Gradient of the normalized marginal log-likelihood with respect to the
/// raw hyperparameters, plus its two ingredients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MllGradient {
    pub params: Vec<ParamId>,
    /// `d(MLL / n) / d theta`; ascending along it increases the MLL.
    pub values: Vec<f64>,
    /// `d(r^T K_hat^{-1} r) / d theta`.
    pub quadratic: Vec<f64>,
    /// `d(log det K_hat) / d theta`, i.e. `tr(K_hat^{-1} dK_hat)`; estimated
    /// with probes on the iterative backend.
    pub log_det: Vec<f64>,
    /// Standard errors of `values`, when per-probe samples were kept.
    pub std_errors: Option<Vec<f64>>,
}

/// One evaluation of the marginal log-likelihood.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MllEvaluation {
    /// `(-1/2 r^T K_hat^{-1} r - 1/2 log det K_hat - n/2 log 2 pi) / n`.
    pub value: f64,
    /// `r^T K_hat^{-1} r`, unnormalized.
    pub quadratic: f64,
    /// `log det K_hat`, unnormalized.
    pub log_det: f64,
    pub log_det_std_error: f64,
    pub n: usize,
    /// Diagonal jitter the Cholesky backend had to add.
    pub jitter: f64,
    pub cg: Option<CgStats>,
    pub gradient: Option<MllGradient>,
}

fn assemble(quadratic: f64, log_det: f64, n: usize) -> f64 {
    (-0.5 * quadratic - 0.5 * log_det - 0.5 * n as f64 * LOG_2PI) / n as f64
}

/// Normalized marginal log-likelihood.
pub fn mll(model: &GpModel) -> Result<f64> {
    Ok(evaluate(model, false)?.value)
}

/// Gradient of [`mll`] with respect to the raw hyperparameters.
pub fn mll_grad(model: &GpModel) -> Result<MllGradient> {
    Ok(evaluate(model, true)?.gradient.expect("gradient requested"))
}

/// Value and gradient from shared solves.
pub fn mll_and_grad(model: &GpModel) -> Result<MllEvaluation> {
    evaluate(model, true)
}

/// Value only, with its diagnostics.
pub fn mll_terms(model: &GpModel) -> Result<MllEvaluation> {
    evaluate(model, false)
}

fn evaluate(model: &GpModel, with_grad: bool) -> Result<MllEvaluation> {
    match model.backend() {
        Backend::Cholesky => cholesky_mll(model, with_grad),
        Backend::Iterative(s) => iterative_mll(model, s, with_grad),
    }
}

fn cholesky_mll(model: &GpModel, with_grad: bool) -> Result<MllEvaluation> {
    let n = model.len();
    let chol = model.cholesky()?;
    let r = model.residual();
    let m = chol.factor.solve(MatRef::from_column_major_slice(&r, n, 1));
    let m = m.col_as_slice(0).to_vec();
    let quadratic = dot(&r, &m);
    let log_det = chol.log_det();
    let gradient = if with_grad {
        let inv = chol.factor.inverse();
        let inputs = model.scaled_inputs()?;
        let pass = gradient_pass(model, &inputs, &m, Weights::Dense(inv.as_ref()));
        Some(finish_gradient(model, pass, n))
    } else {
        None
    };
    Ok(MllEvaluation {
        value: assemble(quadratic, log_det, n),
        quadratic,
        log_det,
        log_det_std_error: 0.0,
        n,
        jitter: chol.jitter,
        cg: None,
        gradient,
    })
}

fn iterative_mll(
    model: &GpModel,
    settings: &IterativeSettings,
    with_grad: bool,
) -> Result<MllEvaluation> {
    let n = model.len();
    let op = model.operator()?;
    let precond = model.preconditioner(&op, settings)?;
    let probes = rademacher_probes(n, settings.num_probes, settings.seed);
    let r = model.residual();

    // The mean solve and (for gradients) the B probe solves share one
    // batched CG run.
    let width = if with_grad { 1 + settings.num_probes } else { 1 };
    let rhs = Mat::from_fn(n, width, |i, c| if c == 0 { r[i] } else { probes[(i, c - 1)] });
    let report = pcg_solve(&op, rhs.as_ref(), settings.cg_tol, settings.max_cg_iters, &precond)?;
    let m = report.solution(0).to_vec();
    let quadratic = dot(&r, &m);

    let logdet = slq_logdet_with_probes(&op, probes.as_ref(), settings.logdet_rank)?;

    let gradient = if with_grad {
        let solved = report.solutions.subcols(1, settings.num_probes);
        let inputs = model.scaled_inputs()?;
        let weights = Weights::Probes {
            solved,
            probes: probes.as_ref(),
            per_probe: settings.gradient_std_errors,
        };
        let pass = gradient_pass(model, &inputs, &m, weights);
        Some(finish_gradient(model, pass, n))
    } else {
        None
    };
    Ok(MllEvaluation {
        value: assemble(quadratic, logdet.value, n),
        quadratic,
        log_det: logdet.value,
        log_det_std_error: logdet.std_error,
        n,
        jitter: 0.0,
        cg: Some(CgStats::from(&report)),
        gradient,
    })
}

/// Source of the weights `W` in `tr(K_hat^{-1} D) = sum_il W_il D_il`.
enum Weights<'a> {
    /// `W = K_hat^{-1}` exactly.
    Dense(MatRef<'a, f64>),
    /// `W = (1/B) sum_b sym(u_b z_b^T)` with `u_b ~ K_hat^{-1} z_b`.
    Probes { solved: MatRef<'a, f64>, probes: MatRef<'a, f64>, per_probe: bool },
}

struct PassOutput {
    quadratic: Vec<f64>,
    log_det: Vec<f64>,
    /// `samples[b][p]`: probe `b`'s trace sample for parameter `p`.
    samples: Option<Vec<Vec<f64>>>,
}

const GRAD_BLOCK: usize = 128;

/// Accumulates, for every raw parameter at once, `-m^T D m` and
/// `sum_il W_il D_il` with `D` the parameter's derivative of `K_hat`.
///
/// Works on blocks of rows so that no `n x n` matrix is stored. For a
/// lengthscale, `D_il = C_il (x_ij - x_lj)^2` with `C` a function of the
/// scaled distance, and expanding the square turns each sum into products
/// of `W o C` (or `C`) with the columns `[1, x_j, x_j^2]`.
fn gradient_pass(model: &GpModel, inputs: &ScaledInputs, m: &[f64], weights: Weights<'_>) -> PassOutput {
    let theta = model.hyperparams();
    let n = inputs.len();
    let d = inputs.dim();
    let p = d + 3;
    let width = 2 * d + 1;
    let ls = theta.lengthscales();
    let s2 = theta.outputscale();

    // Columns [1, x_1..x_d, x_1^2..x_d^2] of the scaled inputs.
    let feat = Mat::from_fn(n, width, |i, c| match c {
        0 => 1.0,
        c if c <= d => inputs.row(i)[c - 1],
        c => inputs.row(i)[c - 1 - d].powi(2),
    });
    let mfeat = Mat::from_fn(n, width, |i, c| m[i] * feat[(i, c)]);
    let (b_count, per_probe) = match &weights {
        Weights::Dense(_) => (0, false),
        Weights::Probes { probes, per_probe, .. } => (probes.ncols(), *per_probe),
    };
    let zfeat = match &weights {
        Weights::Probes { probes, .. } if per_probe => {
            Some(Mat::from_fn(n, b_count * width, |i, c| probes[(i, c / width)] * feat[(i, c % width)]))
        }
        _ => None,
    };

    let mut quadratic = vec![0.0; p];
    let mut log_det = vec![0.0; p];
    let mut samples = if per_probe { Some(vec![vec![0.0; p]; b_count]) } else { None };

    let mut start = 0;
    let mut coeff = Mat::<f64>::zeros(0, 0);
    let mut unit = Mat::<f64>::zeros(0, 0);
    while start < n {
        let len = GRAD_BLOCK.min(n - start);
        if coeff.nrows() != len {
            coeff = Mat::zeros(len, n);
            unit = Mat::zeros(len, n);
        }
        for l in 0..n {
            let xl = inputs.row(l);
            let (cl, ul) = (coeff.col_as_slice_mut(l), unit.col_as_slice_mut(l));
            for i in 0..len {
                let s = SQRT5 * sq_dist(inputs.row(start + i), xl).sqrt();
                let e = (-s).exp();
                cl[i] = s2 * (5.0 / 3.0) * (1.0 + s) * e;
                ul[i] = (1.0 + s + s * s / 3.0) * e;
            }
        }
        let mut w = match &weights {
            Weights::Dense(inv) => inv.subrows(start, len).to_owned(),
            Weights::Probes { solved, probes, .. } => {
                let scale = 0.5 / b_count as f64;
                let a = gemm(solved.subrows(start, len), probes.transpose());
                let b = gemm(probes.subrows(start, len), solved.transpose());
                Mat::from_fn(len, n, |i, l| scale * (a[(i, l)] + b[(i, l)]))
            }
        };
        let mut os_quad = vec![0.0; len];
        for l in 0..n {
            let (wl, ul, cl) = (w.col_as_slice_mut(l), unit.col_as_slice(l), coeff.col_as_slice(l));
            if (start..start + len).contains(&l) {
                log_det[d + 1] += wl[l - start];
            }
            for i in 0..len {
                log_det[d] += wl[i] * ul[i];
                os_quad[i] += ul[i] * m[l];
                wl[i] *= cl[i];
            }
        }
        for i in 0..len {
            let gi = start + i;
            quadratic[d + 1] -= m[gi] * m[gi];
            quadratic[d] -= m[gi] * os_quad[i];
        }
        let gf = gemm(w.as_ref(), feat.as_ref());
        let cm = gemm(coeff.as_ref(), mfeat.as_ref());
        // sum_l G_il (x_ij - x_lj)^2 = x_ij^2 (G1)_i + (G x_j^2)_i - 2 x_ij (G x_j)_i
        let expand = |prod: &Mat<f64>, off: usize, i: usize, j: usize| {
            let gi = start + i;
            feat[(gi, 1 + d + j)] * prod[(i, off)] + prod[(i, off + 1 + d + j)]
                - 2.0 * feat[(gi, 1 + j)] * prod[(i, off + 1 + j)]
        };
        for i in 0..len {
            for j in 0..d {
                log_det[j] += expand(&gf, 0, i, j);
                quadratic[j] -= m[start + i] * expand(&cm, 0, i, j);
            }
        }
        if let (Some(samples), Some(zfeat), Weights::Probes { solved, probes, .. }) =
            (samples.as_mut(), zfeat.as_ref(), &weights)
        {
            // Probe b alone has W_b = sym(u_b z_b^T), whose sum against a
            // symmetric D equals sum_il u_bi z_bl D_il.
            let cz = gemm(coeff.as_ref(), zfeat.as_ref());
            let kz = gemm(unit.as_ref(), *probes);
            for (b, row) in samples.iter_mut().enumerate() {
                for i in 0..len {
                    let gi = start + i;
                    let u = solved[(gi, b)];
                    for j in 0..d {
                        row[j] += u * expand(&cz, b * width, i, j);
                    }
                    row[d] += u * kz[(i, b)];
                    row[d + 1] += u * probes[(gi, b)];
                }
            }
        }
        start += len;
    }

    let scales: Vec<f64> = (0..d)
        .map(|j| softplus_derivative(theta.raw_lengthscales[j]) / ls[j])
        .chain([softplus_derivative(theta.raw_outputscale), softplus_derivative(theta.raw_noise)])
        .collect();
    let rescale = |v: &mut Vec<f64>| {
        for (x, s) in v.iter_mut().zip(&scales) {
            *x *= s;
        }
    };
    rescale(&mut quadratic);
    rescale(&mut log_det);
    if let Some(samples) = samples.as_mut() {
        samples.iter_mut().for_each(rescale);
    }
    quadratic[d + 2] = -2.0 * m.iter().sum::<f64>();
    PassOutput { quadratic, log_det, samples }
}

fn finish_gradient(model: &GpModel, pass: PassOutput, n: usize) -> MllGradient {
    let nf = n as f64;
    let values = pass
        .quadratic
        .iter()
        .zip(&pass.log_det)
        .map(|(q, l)| -0.5 * (q + l) / nf)
        .collect();
    let std_errors = pass.samples.map(|samples| {
        let p = pass.log_det.len();
        (0..p)
            .map(|q| {
                let column: Vec<f64> = samples.iter().map(|row| row[q]).collect();
                0.5 * Estimate::from_samples(column).std_error / nf
            })
            .collect()
    });
    MllGradient {
        params: model.hyperparams().param_ids(),
        values,
        quadratic: pass.quadratic,
        log_det: pass.log_det,
        std_errors,
    }
}

impl MllGradient {
    pub fn get(&self, id: ParamId) -> Result<f64> {
        self.params
            .iter()
            .position(|p| *p == id)
            .map(|i| self.values[i])
            .ok_or_else(|| Error::contract(format!("no gradient entry for {id:?}")))
    }
}
