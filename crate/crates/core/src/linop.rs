//! Symmetric positive semi-definite linear operators.
//!
//! Solvers only ever see [`LinearOperator`]: a dimension, a diagonal, and a
//! batched product. The shifted kernel operator evaluates kernel rows on
//! demand unless it is explicitly materialized.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{matern52_unit, HyperParams, ScaledInputs};

pub const DEFAULT_DENSE_CAP: usize = 20_000;

/// Arithmetic used inside an operator's products.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "f32" | "float32" | "float" => Ok(Precision::F32),
            "f64" | "float64" | "double" => Ok(Precision::F64),
            other => Err(format!("unknown precision {other:?}")),
        }
    }
}

pub trait LinearOperator: Send + Sync {
    fn dim(&self) -> usize;

    fn diagonal(&self) -> Vec<f64>;

    /// `A * rhs`, column by column. Callers guarantee `rhs.nrows() == dim()`;
    /// use [`LinearOperator::matmat`] for a checked product.
    fn multiply(&self, rhs: MatRef<'_, f64>) -> Mat<f64>;

    fn precision(&self) -> Precision {
        Precision::F64
    }

    fn dense_cap(&self) -> usize {
        DEFAULT_DENSE_CAP
    }

    fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        Error::check_len(self.dim(), v.len())?;
        if let Some(bad) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::contract(format!("non-finite entry at index {bad}")));
        }
        let out = self.multiply(MatRef::from_column_major_slice(v, v.len(), 1));
        Ok(out.col_as_slice(0).to_vec())
    }

    fn matmat(&self, rhs: MatRef<'_, f64>) -> Result<Mat<f64>> {
        Error::check_len(self.dim(), rhs.nrows())?;
        Ok(self.multiply(rhs))
    }

    /// Dense matrix obtained by applying the operator to the standard basis.
    fn to_dense(&self) -> Result<Mat<f64>> {
        let n = self.dim();
        if n > self.dense_cap() {
            return Err(Error::Capacity { n, cap: self.dense_cap() });
        }
        let mut dense = Mat::<f64>::zeros(n, n);
        const CHUNK: usize = 64;
        let mut start = 0;
        while start < n {
            let width = CHUNK.min(n - start);
            let basis = Mat::<f64>::from_fn(n, width, |i, j| if i == start + j { 1.0 } else { 0.0 });
            let cols = self.multiply(basis.as_ref());
            dense.subcols_mut(start, width).copy_from(&cols);
            start += width;
        }
        Ok(dense)
    }
}

pub(crate) fn gemm(lhs: MatRef<'_, f64>, rhs: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::<f64>::zeros(lhs.nrows(), rhs.ncols());
    matmul(out.as_mut(), Accum::Replace, lhs, rhs, 1.0, Par::Seq);
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Debug)]
pub struct IdentityOperator {
    n: usize,
}

impl IdentityOperator {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl LinearOperator for IdentityOperator {
    fn dim(&self) -> usize {
        self.n
    }

    fn diagonal(&self) -> Vec<f64> {
        vec![1.0; self.n]
    }

    fn multiply(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        rhs.to_owned()
    }
}

#[derive(Clone, Debug)]
pub struct DiagonalOperator {
    diag: Vec<f64>,
}

impl DiagonalOperator {
    pub fn new(diag: Vec<f64>) -> Self {
        Self { diag }
    }

    pub fn scaled_identity(n: usize, scale: f64) -> Self {
        Self { diag: vec![scale; n] }
    }
}

impl LinearOperator for DiagonalOperator {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn diagonal(&self) -> Vec<f64> {
        self.diag.clone()
    }

    fn multiply(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        Mat::from_fn(rhs.nrows(), rhs.ncols(), |i, j| self.diag[i] * rhs[(i, j)])
    }
}

/// Explicit symmetric matrix. Products are plain row-by-row dot products in
/// the selected precision.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    mat: Mat<f64>,
    precision: Precision,
}

impl DenseOperator {
    pub fn new(mat: Mat<f64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::contract(format!(
                "dense operator must be square, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        Ok(Self { mat, precision: Precision::F64 })
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn matrix(&self) -> MatRef<'_, f64> {
        self.mat.as_ref()
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.mat.nrows()
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.mat[(i, i)]).collect()
    }

    fn precision(&self) -> Precision {
        self.precision
    }

    fn multiply(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        let n = self.dim();
        let mut out = Mat::<f64>::zeros(n, rhs.ncols());
        match self.precision {
            Precision::F64 => {
                for c in 0..rhs.ncols() {
                    for i in 0..n {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += self.mat[(i, j)] * rhs[(j, c)];
                        }
                        out[(i, c)] = acc;
                    }
                }
            }
            Precision::F32 => {
                for c in 0..rhs.ncols() {
                    for i in 0..n {
                        let mut acc = 0.0f32;
                        for j in 0..n {
                            acc += self.mat[(i, j)] as f32 * rhs[(j, c)] as f32;
                        }
                        out[(i, c)] = acc as f64;
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
enum DenseStore {
    F64(Mat<f64>),
    F32(Mat<f32>),
}

/// `K + noise * I` for the Matern-5/2 ARD kernel.
///
/// Lazy by default: each product recomputes kernel rows from the scaled
/// inputs, so memory stays at `O(n d)`. [`ShiftedKernelOperator::materialize`]
/// trades that for one dense `n x n` buffer when `n` is within the dense cap.
#[derive(Clone, Debug)]
pub struct ShiftedKernelOperator {
    inputs: ScaledInputs,
    outputscale: f64,
    noise: f64,
    precision: Precision,
    cap: usize,
    dense: Option<DenseStore>,
}

impl ShiftedKernelOperator {
    pub fn new(x: MatRef<'_, f64>, theta: &HyperParams, precision: Precision) -> Result<Self> {
        let inputs = ScaledInputs::new(x, &theta.lengthscales())?;
        Ok(Self {
            inputs,
            outputscale: theta.outputscale(),
            noise: theta.noise(),
            precision,
            cap: DEFAULT_DENSE_CAP,
            dense: None,
        })
    }

    pub fn with_dense_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    /// Caches the full matrix so products become dense matrix multiplies.
    pub fn materialize(mut self) -> Result<Self> {
        let n = self.inputs.len();
        if n > self.cap {
            return Err(Error::Capacity { n, cap: self.cap });
        }
        let mut k = Mat::<f64>::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = self.entry(i, j);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        self.dense = Some(match self.precision {
            Precision::F64 => DenseStore::F64(k),
            Precision::F32 => DenseStore::F32(Mat::from_fn(n, n, |i, j| k[(i, j)] as f32)),
        });
        Ok(self)
    }

    pub fn is_materialized(&self) -> bool {
        self.dense.is_some()
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn outputscale(&self) -> f64 {
        self.outputscale
    }

    pub fn inputs(&self) -> &ScaledInputs {
        &self.inputs
    }

    /// Kernel entry without the noise shift.
    pub fn kernel_entry(&self, i: usize, j: usize) -> f64 {
        self.outputscale * matern52_unit(self.inputs.distance(i, j))
    }

    /// Column `j` of the unshifted kernel matrix.
    pub fn kernel_column(&self, j: usize) -> Vec<f64> {
        (0..self.inputs.len()).map(|i| self.kernel_entry(i, j)).collect()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        let k = self.kernel_entry(i, j);
        if i == j {
            k + self.noise
        } else {
            k
        }
    }

    fn fill_row(&self, i: usize, row: &mut [f64]) {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = self.entry(i, j);
        }
    }
}

impl LinearOperator for ShiftedKernelOperator {
    fn dim(&self) -> usize {
        self.inputs.len()
    }

    fn diagonal(&self) -> Vec<f64> {
        vec![self.outputscale + self.noise; self.dim()]
    }

    fn precision(&self) -> Precision {
        self.precision
    }

    fn dense_cap(&self) -> usize {
        self.cap
    }

    fn multiply(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        let n = self.dim();
        let t = rhs.ncols();
        match &self.dense {
            Some(DenseStore::F64(k)) => gemm(k.as_ref(), rhs),
            Some(DenseStore::F32(k)) => {
                let rhs32 = Mat::<f32>::from_fn(n, t, |i, j| rhs[(i, j)] as f32);
                let mut out = Mat::<f32>::zeros(n, t);
                matmul(out.as_mut(), Accum::Replace, k.as_ref(), rhs32.as_ref(), 1.0f32, Par::Seq);
                Mat::from_fn(n, t, |i, j| out[(i, j)] as f64)
            }
            None => {
                let mut out = Mat::<f64>::zeros(n, t);
                let mut row = vec![0.0; n];
                match self.precision {
                    Precision::F64 => {
                        let cols: Vec<Vec<f64>> =
                            (0..t).map(|c| (0..n).map(|i| rhs[(i, c)]).collect()).collect();
                        for i in 0..n {
                            self.fill_row(i, &mut row);
                            for (c, col) in cols.iter().enumerate() {
                                out[(i, c)] = dot(&row, col);
                            }
                        }
                    }
                    Precision::F32 => {
                        let cols: Vec<Vec<f32>> =
                            (0..t).map(|c| (0..n).map(|i| rhs[(i, c)] as f32).collect()).collect();
                        let mut row32 = vec![0.0f32; n];
                        for i in 0..n {
                            self.fill_row(i, &mut row);
                            for (dst, src) in row32.iter_mut().zip(&row) {
                                *dst = *src as f32;
                            }
                            for (c, col) in cols.iter().enumerate() {
                                let acc: f32 = row32.iter().zip(col).map(|(a, b)| a * b).sum();
                                out[(i, c)] = acc as f64;
                            }
                        }
                    }
                }
                out
            }
        }
    }
}
