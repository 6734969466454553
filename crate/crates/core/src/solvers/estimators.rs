use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::linop::{dot, LinearOperator};
use crate::rng::rademacher_probes;
use crate::solvers::lanczos::lanczos_many;

/// Monte Carlo estimate with its per-probe samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    /// Standard error of `value`, from the sample spread across probes.
    pub std_error: f64,
    pub samples: Vec<f64>,
}

impl Estimate {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let b = samples.len() as f64;
        let value = samples.iter().sum::<f64>() / b;
        let std_error = if samples.len() > 1 {
            let var = samples.iter().map(|s| (s - value).powi(2)).sum::<f64>() / (b - 1.0);
            (var / b).sqrt()
        } else {
            0.0
        };
        Self { value, std_error, samples }
    }
}

/// Stochastic Lanczos quadrature estimate of `log det A` with
/// `num_probes` Rademacher probes drawn from `seed`.
pub fn slq_logdet(
    op: &dyn LinearOperator,
    num_probes: usize,
    rank: usize,
    seed: u64,
) -> Result<Estimate> {
    if num_probes == 0 {
        return Err(Error::contract("at least one probe is required"));
    }
    let probes = rademacher_probes(op.dim(), num_probes, seed);
    slq_logdet_with_probes(op, probes.as_ref(), rank)
}

/// Per probe `z`: run rank-`rank` Lanczos from `z`, eigendecompose `T`, and
/// take `||z||^2 * sum_i tau_i^2 log(lambda_i)` with `tau` the first
/// eigenvector components. The estimate is the mean over probes.
pub fn slq_logdet_with_probes(
    op: &dyn LinearOperator,
    probes: MatRef<'_, f64>,
    rank: usize,
) -> Result<Estimate> {
    let n = op.dim();
    Error::check_len(n, probes.nrows())?;
    let rank = rank.min(n);
    let runs = lanczos_many(op, probes, rank, true)?;
    let mut samples = Vec::with_capacity(probes.ncols());
    for (b, run) in runs.into_iter().enumerate() {
        let z_sq: f64 = (0..n).map(|i| probes[(i, b)] * probes[(i, b)]).sum();
        let sample = run
            .and_then(|f| {
                let eig = f.eigen()?;
                let mut quad = 0.0;
                for (i, &lambda) in eig.values.iter().enumerate() {
                    if !(lambda > 0.0) {
                        return Err(Error::Breakdown(format!(
                            "nonpositive Ritz value {lambda:e}; operator is not SPD at working precision"
                        )));
                    }
                    let tau = eig.vectors[(0, i)];
                    quad += tau * tau * lambda.ln();
                }
                Ok(z_sq * quad)
            })
            .map_err(|e| Error::Probe { probe: b, source: Box::new(e) })?;
        samples.push(sample);
    }
    Ok(Estimate::from_samples(samples))
}

/// Hutchinson estimate of `tr(A^{-1} G)`: the mean of `(A^{-1} z)^T (G z)`
/// over the probe columns. `apply_inverse` receives all probes at once so a
/// CG-backed applier can batch them.
pub fn hutchinson_trace<F>(
    mut apply_inverse: F,
    g: &dyn LinearOperator,
    probes: MatRef<'_, f64>,
) -> Result<Estimate>
where
    F: FnMut(MatRef<'_, f64>) -> Result<Mat<f64>>,
{
    Error::check_len(g.dim(), probes.nrows())?;
    if probes.ncols() == 0 {
        return Err(Error::contract("at least one probe is required"));
    }
    let solved = apply_inverse(probes).map_err(|e| match e {
        Error::Divergence { column } => Error::Probe { probe: column, source: Box::new(e) },
        other => other,
    })?;
    if solved.nrows() != probes.nrows() || solved.ncols() != probes.ncols() {
        return Err(Error::contract("inverse applier returned the wrong shape"));
    }
    let gz = g.multiply(probes);
    let samples = (0..probes.ncols())
        .map(|b| dot(solved.col_as_slice(b), gz.col_as_slice(b)))
        .collect();
    Ok(Estimate::from_samples(samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::{DiagonalOperator, IdentityOperator};

    #[test]
    fn scalar_spectrum_is_exact() {
        let op = DiagonalOperator::scaled_identity(7, 2.5);
        let est = slq_logdet(&op, 4, 5, 3).unwrap();
        for s in &est.samples {
            assert!((s - 7.0 * 2.5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_trace_is_dimension() {
        let n = 12;
        let probes = rademacher_probes(n, 5, 9);
        let est = hutchinson_trace(|z| Ok(z.to_owned()), &IdentityOperator::new(n), probes.as_ref())
            .unwrap();
        assert_eq!(est.value, n as f64);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn nonpositive_spectrum_is_flagged() {
        let op = DiagonalOperator::new(vec![1.0, -1.0, 2.0]);
        let err = slq_logdet(&op, 1, 3, 0).unwrap_err();
        assert!(matches!(err, Error::Probe { probe: 0, .. }));
    }

    #[test]
    fn applier_failure_carries_probe_index() {
        let probes = rademacher_probes(3, 4, 1);
        let err = hutchinson_trace(
            |_| Err(Error::Divergence { column: 2 }),
            &IdentityOperator::new(3),
            probes.as_ref(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Probe { probe: 2, .. }));
    }
}
