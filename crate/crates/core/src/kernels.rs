//! Matern-5/2 ARD kernel, positive-parameter transforms, and analytic
//! derivatives with respect to the raw (unconstrained) hyperparameters.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linop::{LinearOperator, DEFAULT_DENSE_CAP};

pub(crate) const SQRT5: f64 = 2.236_067_977_499_79;

/// `log(1 + e^x)`, stable for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`], i.e. the logistic sigmoid.
pub fn softplus_derivative(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn inverse_softplus(y: f64) -> f64 {
    // y + log(1 - e^{-y}) = log(e^y - 1)
    y + (-(-y).exp_m1()).ln()
}

/// `(1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r)`: the Matern-5/2 correlation at
/// scaled distance `r`.
pub fn matern52_unit(r: f64) -> f64 {
    let s = SQRT5 * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// `(5/3)(1 + sqrt5 r) exp(-sqrt5 r)`. Multiplying by `s2 * delta_j^2 / l_j`
/// (with `delta_j` the lengthscale-scaled difference) gives `dk / dl_j`.
pub(crate) fn matern52_lengthscale_coeff(r: f64) -> f64 {
    let s = SQRT5 * r;
    (5.0 / 3.0) * (1.0 + s) * (-s).exp()
}

/// Kernel hyperparameters in unconstrained coordinates. Lengthscales,
/// outputscale and noise are recovered through [`softplus`]; the constant
/// mean is used as is.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub raw_lengthscales: Vec<f64>,
    pub raw_outputscale: f64,
    pub raw_noise: f64,
    pub mean_constant: f64,
}

/// Names one entry of [`HyperParams`], in the order of
/// [`HyperParams::to_vector`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamId {
    Lengthscale(usize),
    Outputscale,
    Noise,
    Mean,
}

impl HyperParams {
    pub fn from_constrained(
        lengthscales: &[f64],
        outputscale: f64,
        noise: f64,
        mean_constant: f64,
    ) -> Result<Self> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(inverse_softplus(v))
            } else {
                Err(Error::contract(format!("{name} must be positive and finite, got {v}")))
            }
        };
        if lengthscales.is_empty() {
            return Err(Error::contract("at least one lengthscale is required"));
        }
        Ok(Self {
            raw_lengthscales: lengthscales
                .iter()
                .map(|&l| positive("lengthscale", l))
                .collect::<Result<_>>()?,
            raw_outputscale: positive("outputscale", outputscale)?,
            raw_noise: positive("noise", noise)?,
            mean_constant,
        })
    }

    /// Starting point used when nothing better is known: unit lengthscales
    /// and outputscale, noise 0.1, zero mean (targets are standardized).
    pub fn default_init(d: usize) -> Self {
        Self::from_constrained(&vec![1.0; d], 1.0, 0.1, 0.0).expect("positive defaults")
    }

    pub fn input_dim(&self) -> usize {
        self.raw_lengthscales.len()
    }

    pub fn num_params(&self) -> usize {
        self.input_dim() + 3
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.raw_lengthscales.iter().map(|&r| softplus(r)).collect()
    }

    pub fn outputscale(&self) -> f64 {
        softplus(self.raw_outputscale)
    }

    pub fn noise(&self) -> f64 {
        softplus(self.raw_noise)
    }

    pub fn with_noise(&self, noise: f64) -> Result<Self> {
        if !(noise > 0.0 && noise.is_finite()) {
            return Err(Error::contract(format!("noise must be positive, got {noise}")));
        }
        Ok(Self { raw_noise: inverse_softplus(noise), ..self.clone() })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        (0..self.input_dim())
            .map(ParamId::Lengthscale)
            .chain([ParamId::Outputscale, ParamId::Noise, ParamId::Mean])
            .collect()
    }

    pub fn index_of(&self, id: ParamId) -> Result<usize> {
        let d = self.input_dim();
        match id {
            ParamId::Lengthscale(j) if j < d => Ok(j),
            ParamId::Lengthscale(j) => Err(Error::contract(format!(
                "lengthscale index {j} out of range for {d} input dimensions"
            ))),
            ParamId::Outputscale => Ok(d),
            ParamId::Noise => Ok(d + 1),
            ParamId::Mean => Ok(d + 2),
        }
    }

    /// `[raw lengthscales.., raw outputscale, raw noise, mean]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.raw_lengthscales.clone();
        v.extend([self.raw_outputscale, self.raw_noise, self.mean_constant]);
        v
    }

    pub fn from_vector(d: usize, v: &[f64]) -> Result<Self> {
        Error::check_len(d + 3, v.len())?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::contract("hyperparameter vector has non-finite entries"));
        }
        Ok(Self {
            raw_lengthscales: v[..d].to_vec(),
            raw_outputscale: v[d],
            raw_noise: v[d + 1],
            mean_constant: v[d + 2],
        })
    }
}

/// Inputs divided by their per-dimension lengthscales, stored row-major.
#[derive(Clone, Debug)]
pub struct ScaledInputs {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl ScaledInputs {
    pub fn new(x: MatRef<'_, f64>, lengthscales: &[f64]) -> Result<Self> {
        let (n, d) = (x.nrows(), x.ncols());
        Error::check_len(lengthscales.len(), d)?;
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            for (j, l) in lengthscales.iter().enumerate() {
                let v = x[(i, j)];
                if !v.is_finite() {
                    return Err(Error::contract(format!("non-finite input at ({i}, {j})")));
                }
                data.push(v / l);
            }
        }
        Ok(Self { data, n, d })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        sq_dist(self.row(i), self.row(j)).sqrt()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Cross-covariance `K(X, Z)` of the Matern-5/2 ARD kernel.
pub fn matern52(x: MatRef<'_, f64>, z: MatRef<'_, f64>, theta: &HyperParams) -> Result<Mat<f64>> {
    let ls = theta.lengthscales();
    let xs = ScaledInputs::new(x, &ls)?;
    let zs = ScaledInputs::new(z, &ls)?;
    Ok(cross_covariance(&xs, &zs, theta.outputscale()))
}

pub(crate) fn cross_covariance(xs: &ScaledInputs, zs: &ScaledInputs, outputscale: f64) -> Mat<f64> {
    Mat::from_fn(xs.len(), zs.len(), |i, j| {
        outputscale * matern52_unit(sq_dist(xs.row(i), zs.row(j)).sqrt())
    })
}

/// `dK_hat / d theta` for one raw parameter, applied lazily.
#[derive(Clone, Debug)]
pub struct KernelGradOperator {
    inputs: ScaledInputs,
    param: ParamId,
    outputscale: f64,
    /// softplus'(raw) for the parameter, divided by the lengthscale when the
    /// parameter is a lengthscale.
    scale: f64,
}

impl KernelGradOperator {
    pub fn param(&self) -> ParamId {
        self.param
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match self.param {
            ParamId::Lengthscale(l) => {
                let (a, b) = (self.inputs.row(i), self.inputs.row(j));
                let r = sq_dist(a, b).sqrt();
                let delta = a[l] - b[l];
                self.outputscale * matern52_lengthscale_coeff(r) * delta * delta * self.scale
            }
            ParamId::Outputscale => {
                matern52_unit(self.inputs.distance(i, j)) * self.scale
            }
            ParamId::Noise => {
                if i == j {
                    self.scale
                } else {
                    0.0
                }
            }
            ParamId::Mean => 0.0,
        }
    }
}

impl LinearOperator for KernelGradOperator {
    fn dim(&self) -> usize {
        self.inputs.len()
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.entry(i, i)).collect()
    }

    fn dense_cap(&self) -> usize {
        DEFAULT_DENSE_CAP
    }

    fn multiply(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        let n = self.dim();
        let t = rhs.ncols();
        match self.param {
            ParamId::Noise => Mat::from_fn(n, t, |i, c| self.scale * rhs[(i, c)]),
            ParamId::Mean => Mat::zeros(n, t),
            _ => {
                let mut out = Mat::<f64>::zeros(n, t);
                let mut row = vec![0.0; n];
                for i in 0..n {
                    for (j, slot) in row.iter_mut().enumerate() {
                        *slot = self.entry(i, j);
                    }
                    for c in 0..t {
                        out[(i, c)] = (0..n).map(|j| row[j] * rhs[(j, c)]).sum();
                    }
                }
                out
            }
        }
    }
}

/// Derivative of `K + noise * I` with respect to one raw parameter, chained
/// through the softplus transform. The mean does not enter the covariance,
/// so its operator is zero.
pub fn kernel_hyper_grad(
    x: MatRef<'_, f64>,
    theta: &HyperParams,
    param: ParamId,
) -> Result<KernelGradOperator> {
    theta.index_of(param)?;
    let ls = theta.lengthscales();
    let inputs = ScaledInputs::new(x, &ls)?;
    let scale = match param {
        ParamId::Lengthscale(j) => softplus_derivative(theta.raw_lengthscales[j]) / ls[j],
        ParamId::Outputscale => softplus_derivative(theta.raw_outputscale),
        ParamId::Noise => softplus_derivative(theta.raw_noise),
        ParamId::Mean => 0.0,
    };
    Ok(KernelGradOperator { inputs, param, outputscale: theta.outputscale(), scale })
}
