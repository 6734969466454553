use faer::{Mat, MatRef};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{BenchError, Result};

/// Smallest dataset that can be split and standardized.
pub const MIN_ROWS: usize = 10;

/// Per-column statistics of the training rows. Kept columns are indices into
/// the dataset's feature matrix; columns constant on the training rows are
/// dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub kept_columns: Vec<usize>,
    pub dropped_columns: Vec<usize>,
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Standardization {
    /// Standardizes rows of the original feature matrix.
    pub fn apply_x(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        Mat::from_fn(x.nrows(), self.kept_columns.len(), |i, j| {
            (x[(i, self.kept_columns[j])] - self.x_mean[j]) / self.x_std[j]
        })
    }

    pub fn apply_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| (v - self.y_mean) / self.y_std).collect()
    }

    /// Maps a standardized prediction back to target units.
    pub fn unscale_mean(&self, m: f64) -> f64 {
        m * self.y_std + self.y_mean
    }

    pub fn unscale_variance(&self, v: f64) -> f64 {
        v * self.y_std * self.y_std
    }

    pub fn unscale_rmse(&self, r: f64) -> f64 {
        r * self.y_std
    }

    /// NLL in target units, from one in standardized units.
    pub fn unscale_nll(&self, nll: f64) -> f64 {
        nll + self.y_std.ln()
    }
}

/// A standardized train/test split. Row index vectors point into the
/// dataset the split was drawn from.
#[derive(Clone, Debug)]
pub struct Split {
    pub train_x: Mat<f64>,
    pub train_y: Vec<f64>,
    pub test_x: Mat<f64>,
    pub test_y: Vec<f64>,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub stats: Standardization,
    pub warnings: Vec<String>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn is_constant(mean: f64, std: f64) -> bool {
    !(std > 1e-12 * (1.0 + mean.abs()))
}

/// Shuffles rows with `seed`, puts the first `round(train_frac * n)` in the
/// training set, and standardizes features and target with the training
/// mean and sample standard deviation.
pub fn split_and_standardize(ds: &Dataset, seed: u64, train_frac: f64) -> Result<Split> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(BenchError::contract(format!("train fraction must lie in (0, 1), got {train_frac}")));
    }
    let n = ds.len();
    if n < MIN_ROWS {
        return Err(BenchError::contract(format!("{}: need at least {MIN_ROWS} rows, have {n}", ds.name)));
    }
    let n_train = ((train_frac * n as f64).round() as usize).clamp(2, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut itergp::rng::stream_rng(seed, 0));
    let (train_rows, test_rows) = (order[..n_train].to_vec(), order[n_train..].to_vec());

    let mut warnings = Vec::new();
    let (mut kept, mut dropped, mut x_mean, mut x_std) = (vec![], vec![], vec![], vec![]);
    for j in 0..ds.dim() {
        let (m, s) = mean_std(train_rows.iter().map(|&i| ds.x[(i, j)]));
        if is_constant(m, s) {
            let name = ds.provenance.feature_columns.get(j).cloned().unwrap_or_else(|| format!("x{j}"));
            warnings.push(format!("dropped column {name}: zero variance on the training rows"));
            dropped.push(j);
        } else {
            kept.push(j);
            x_mean.push(m);
            x_std.push(s);
        }
    }
    if kept.is_empty() {
        return Err(BenchError::contract(format!("{}: every feature is constant on the training rows", ds.name)));
    }
    let (y_mean, y_std) = mean_std(train_rows.iter().map(|&i| ds.y[i]));
    if is_constant(y_mean, y_std) {
        return Err(BenchError::contract(format!("{}: target is constant on the training rows", ds.name)));
    }
    let stats = Standardization { kept_columns: kept, dropped_columns: dropped, x_mean, x_std, y_mean, y_std };

    let rows_of = |rows: &[usize]| Mat::from_fn(rows.len(), ds.dim(), |i, j| ds.x[(rows[i], j)]);
    let targets_of = |rows: &[usize]| stats.apply_y(&rows.iter().map(|&i| ds.y[i]).collect::<Vec<_>>());
    Ok(Split {
        train_x: stats.apply_x(rows_of(&train_rows).as_ref()),
        train_y: targets_of(&train_rows),
        test_x: stats.apply_x(rows_of(&test_rows).as_ref()),
        test_y: targets_of(&test_rows),
        train_rows,
        test_rows,
        stats,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(n: usize) -> Dataset {
        let x = Mat::from_fn(n, 3, |i, j| ((i * (j + 2)) % 7) as f64 + j as f64);
        let y = (0..n).map(|i| (i as f64).sqrt()).collect();
        Dataset::new("d", x, y).unwrap()
    }

    #[test]
    fn train_columns_are_standardized() {
        let s = split_and_standardize(&dataset(40), 1, 0.8).unwrap();
        assert_eq!(s.train_y.len(), 32);
        assert_eq!(s.test_y.len(), 8);
        for j in 0..s.train_x.ncols() {
            let (m, sd) = mean_std(s.train_x.col_as_slice(j).iter().copied());
            assert!(m.abs() < 1e-10 && (sd * sd - 1.0).abs() < 1e-10);
        }
        let (m, sd) = mean_std(s.train_y.iter().copied());
        assert!(m.abs() < 1e-10 && (sd * sd - 1.0).abs() < 1e-10);
    }

    #[test]
    fn split_is_deterministic_and_partitions_rows() {
        let ds = dataset(30);
        let a = split_and_standardize(&ds, 9, 0.7).unwrap();
        let b = split_and_standardize(&ds, 9, 0.7).unwrap();
        assert_eq!(a.train_rows, b.train_rows);
        assert_eq!(a.train_x, b.train_x);
        let mut all: Vec<usize> = a.train_rows.iter().chain(&a.test_rows).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..30).collect::<Vec<_>>());
        assert_ne!(a.train_rows, split_and_standardize(&ds, 10, 0.7).unwrap().train_rows);
    }

    #[test]
    fn constant_column_is_dropped() {
        let mut ds = dataset(20);
        for i in 0..20 {
            ds.x[(i, 1)] = 4.0;
        }
        let s = split_and_standardize(&ds, 0, 0.5).unwrap();
        assert_eq!(s.stats.kept_columns, vec![0, 2]);
        assert_eq!(s.stats.dropped_columns, vec![1]);
        assert_eq!(s.test_x.ncols(), 2);
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn contract_errors() {
        assert!(split_and_standardize(&dataset(20), 0, 1.0).is_err());
        assert!(split_and_standardize(&dataset(20), 0, 0.0).is_err());
        assert!(split_and_standardize(&dataset(9), 0, 0.5).is_err());
        let mut ds = dataset(20);
        ds.y = vec![1.0; 20];
        assert!(split_and_standardize(&ds, 0, 0.5).is_err());
    }

    #[test]
    fn unscaling_inverts_standardization() {
        let ds = dataset(25);
        let s = split_and_standardize(&ds, 2, 0.8).unwrap();
        let raw = ds.y[s.test_rows[0]];
        assert!((s.stats.unscale_mean(s.test_y[0]) - raw).abs() < 1e-12);
    }
}
