use faer::Mat;

use crate::error::{Error, Result};

/// Greedy low-rank factor `L` with `L L^T ~ K`.
#[derive(Clone, Debug)]
pub struct PivotedCholesky {
    /// `n x rank` factor; column `m` is zero at every earlier pivot.
    pub factor: Mat<f64>,
    pub pivots: Vec<usize>,
    /// Sum of the remaining residual diagonal after each pivot; entry 0 is
    /// the trace of `K`.
    pub residual_traces: Vec<f64>,
}

impl PivotedCholesky {
    pub fn rank(&self) -> usize {
        self.pivots.len()
    }

    pub fn residual_trace(&self) -> f64 {
        *self.residual_traces.last().expect("initial trace is always recorded")
    }
}

/// Rank-`max_rank` pivoted Cholesky of a PSD matrix given by its diagonal
/// and a column oracle. Pivots on the largest residual diagonal entry
/// (lowest index on ties) and stops early once the residual trace falls
/// below `1e-12` of the original trace.
pub fn pivoted_cholesky(
    diag: &[f64],
    mut column: impl FnMut(usize) -> Vec<f64>,
    max_rank: usize,
) -> Result<PivotedCholesky> {
    let n = diag.len();
    if max_rank > n {
        return Err(Error::contract(format!("rank {max_rank} exceeds dimension {n}")));
    }
    if let Some(i) = diag.iter().position(|d| !(*d >= 0.0) || !d.is_finite()) {
        return Err(Error::contract(format!("diagonal entry {i} is {}", diag[i])));
    }
    let mut residual = diag.to_vec();
    let initial_trace: f64 = residual.iter().sum();
    let mut traces = vec![initial_trace];
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(max_rank);
    let mut pivots = Vec::with_capacity(max_rank);

    for _ in 0..max_rank {
        let trace = *traces.last().unwrap();
        if trace <= 1e-12 * initial_trace || trace <= 0.0 {
            break;
        }
        let mut p = 0;
        for (i, &d) in residual.iter().enumerate() {
            if d > residual[p] {
                p = i;
            }
        }
        let pivot = residual[p];
        if pivot <= 0.0 {
            break;
        }
        let root = pivot.sqrt();
        let mut l = column(p);
        Error::check_len(n, l.len())?;
        for prev in &cols {
            let scale = prev[p];
            if scale != 0.0 {
                for (li, pi) in l.iter_mut().zip(prev) {
                    *li -= scale * pi;
                }
            }
        }
        for li in l.iter_mut() {
            *li /= root;
        }
        for &q in &pivots {
            l[q] = 0.0;
        }
        l[p] = root;
        for (i, (d, li)) in residual.iter_mut().zip(&l).enumerate() {
            *d -= li * li;
            if *d < -1e-10 {
                return Err(Error::Breakdown(format!(
                    "pivoted Cholesky residual diagonal {i} went negative ({d:e})"
                )));
            }
            if *d < 0.0 {
                *d = 0.0;
            }
        }
        residual[p] = 0.0;
        pivots.push(p);
        cols.push(l);
        traces.push(residual.iter().sum());
    }

    let factor = Mat::from_fn(n, cols.len(), |i, j| cols[j][i]);
    Ok(PivotedCholesky { factor, pivots, residual_traces: traces })
}
