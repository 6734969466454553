use faer::{MatRef, Side};

use crate::error::{Error, Result};

/// Largest matrix accepted by [`variance_vs_rank`].
pub const MAX_RANK_STUDY_DIM: usize = 2000;

/// Posterior variance under truncated eigendecompositions of `K_hat`.
#[derive(Clone, Debug)]
pub struct RankVariance {
    /// `variances[k - 1]` is the variance using the top `k` eigenpairs.
    pub variances: Vec<f64>,
    /// Eigenvalues of `K_hat`, descending.
    pub eigenvalues: Vec<f64>,
    /// `v^T q_i` for each eigenvector, in the same order.
    pub projections: Vec<f64>,
}

impl RankVariance {
    /// `sigma2_k - sigma2_{k+1}` predicted by the eigenpair `k + 1`
    /// (`k` counted from 1).
    pub fn expected_decrease(&self, k: usize) -> f64 {
        self.projections[k].powi(2) / self.eigenvalues[k]
    }
}

/// `k_self - v^T Q_k Lambda_k^{-1} Q_k^T v` for `k = 1..=k_max`, with
/// `Q, Lambda` the eigenpairs of `k_hat` ordered by decreasing eigenvalue
/// and `v` the cross-covariance between the test point and the training
/// inputs.
pub fn variance_vs_rank(
    k_hat: MatRef<'_, f64>,
    cross: &[f64],
    k_self: f64,
    k_max: usize,
) -> Result<RankVariance> {
    let n = k_hat.nrows();
    Error::check_len(n, k_hat.ncols())?;
    Error::check_len(n, cross.len())?;
    if n > MAX_RANK_STUDY_DIM {
        return Err(Error::contract(format!(
            "dense eigendecomposition limited to n <= {MAX_RANK_STUDY_DIM}, got {n}"
        )));
    }
    if k_max == 0 || k_max > n {
        return Err(Error::contract(format!("k_max {k_max} must lie in 1..={n}")));
    }
    let scale = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| k_hat[(i, j)].abs())
        .fold(0.0, f64::max);
    for i in 0..n {
        for j in 0..i {
            if (k_hat[(i, j)] - k_hat[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::contract(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let evd = k_hat
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Breakdown(format!("eigendecomposition failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let order: Vec<usize> = (0..n).rev().collect();
    let eigenvalues: Vec<f64> = order.iter().map(|&i| s[i]).collect();
    if let Some(bad) = eigenvalues.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::NotPositiveDefinite { jitter: *bad });
    }
    let projections: Vec<f64> = order
        .iter()
        .map(|&c| (0..n).map(|i| u[(i, c)] * cross[i]).sum())
        .collect();
    let mut variances = Vec::with_capacity(k_max);
    let mut acc = k_self;
    for i in 0..k_max {
        acc -= projections[i] * projections[i] / eigenvalues[i];
        variances.push(acc);
    }
    Ok(RankVariance { variances, eigenvalues, projections })
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::Mat;

    #[test]
    fn orthogonal_direction_leaves_variance_unchanged() {
        let k_hat = Mat::from_fn(3, 3, |i, j| if i == j { [3.0, 2.0, 1.0][i] } else { 0.0 });
        // v has no component along the second eigenvector (e_2).
        let rv = variance_vs_rank(k_hat.as_ref(), &[1.0, 0.0, 0.5], 2.0, 3).unwrap();
        assert_eq!(rv.eigenvalues, vec![3.0, 2.0, 1.0]);
        assert_eq!(rv.variances[0], rv.variances[1]);
        assert!((rv.variances[0] - (2.0 - 1.0 / 3.0)).abs() < 1e-15);
        assert!((rv.variances[2] - (2.0 - 1.0 / 3.0 - 0.25)).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let a = Mat::from_fn(2, 2, |i, j| if i == 0 && j == 1 { 0.5 } else if i == j { 1.0 } else { 0.0 });
        assert!(matches!(variance_vs_rank(a.as_ref(), &[1.0, 1.0], 1.0, 2), Err(Error::Contract(_))));
    }
}
