use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::ScoreModel;
use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::kernels::TiltedKernel;

/// Largest accepted condition estimate for the regularized normal equations.
pub const MAX_CONDITION: f64 = 1e12;

/// `(φ_l(x), φ_l'(x))` for `φ_l(x) = x^l / √(l!) · exp(-x²/2)`.
pub fn kef_basis(l: usize, x: f64) -> (f64, f64) {
    assert!(l >= 1, "basis index starts at 1");
    // c_k = x^k / √(k!) by a running product, so no factorial overflows.
    let mut prev = 1.0;
    let mut cur = 1.0;
    for k in 1..=l {
        prev = cur;
        cur *= x / (k as f64).sqrt();
    }
    let g = (-0.5 * x * x).exp();
    (cur * g, ((l as f64).sqrt() * prev - x * cur) * g)
}

/// Affine map applied to the data before fitting: `z = (x - mean) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub scale: f64,
}

impl Standardization {
    pub fn of(data: &DataSet) -> Result<Self> {
        let n = data.n();
        if n < 2 {
            return Err(Error::TooFewPoints { needed: 2, got: n });
        }
        let xs = data.view();
        let mean = xs.column(0).sum() / n as f64;
        let var = xs.column(0).iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        if var == 0.0 {
            return Err(Error::DegenerateSample);
        }
        Ok(Self {
            mean,
            scale: var.sqrt(),
        })
    }

    pub fn apply(&self, data: &DataSet) -> DataSet {
        let z = data.view().mapv(|x| (x - self.mean) / self.scale);
        DataSet::new(z).expect("finite input stays finite")
    }
}

/// `D²_V(η) = ηᵀAη - 2vᵀη + constant` for the KEF with coefficients `η`.
#[derive(Debug, Clone, PartialEq)]
pub struct KefObjective {
    pub a: DMatrix<f64>,
    pub v: DVector<f64>,
    pub constant: f64,
}

impl KefObjective {
    /// Assembles the quadratic form on `data` as given (no standardization).
    pub fn build(data: &DataSet, kernel: &TiltedKernel, basis_size: usize) -> Result<Self> {
        if data.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: data.dim(),
            });
        }
        if basis_size == 0 {
            return Err(Error::invalid("basis size must be at least 1"));
        }
        let n = data.n();
        if n == 0 {
            return Err(Error::EmptyData);
        }
        let xs: Vec<f64> = data.rows().map(|r| r[0]).collect();
        let mut w = Array1::<f64>::zeros(n);
        let mut a0 = Array1::<f64>::zeros(n);
        let mut phi = Array2::<f64>::zeros((n, basis_size));
        let mut g = [0.0];
        for (i, &x) in xs.iter().enumerate() {
            let wi = kernel.weight.eval_into(&[x], &mut g);
            w[i] = wi;
            a0[i] = -wi * x + g[0];
            for l in 0..basis_size {
                phi[[i, l]] = -wi * kef_basis(l + 1, x).1;
            }
        }
        let mut h = Array2::<f64>::zeros((n, n));
        let mut e = Array2::<f64>::zeros((n, n));
        let mut lap_sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                let u = xs[i] - xs[j];
                let t = kernel.base.radial(u * u, 1);
                h[[i, j]] = t.h;
                e[[i, j]] = t.g * u;
                lap_sum += w[i] * w[j] * t.laplacian;
            }
        }
        let h_phi = h.dot(&phi);
        let m = phi.t().dot(&h_phi);
        let ha0 = h.dot(&a0);
        let etw = e.t().dot(&w);
        let lin = phi.t().dot(&ha0) + phi.t().dot(&etw);
        let constant = a0.dot(&ha0) + 2.0 * w.dot(&e.dot(&a0)) - lap_sum;
        let n2 = (n * n) as f64;
        Ok(Self {
            a: DMatrix::from_fn(basis_size, basis_size, |r, c| m[[r, c]] / n2),
            v: DVector::from_fn(basis_size, |r, _| -lin[r] / n2),
            constant: constant / n2,
        })
    }

    pub fn eval(&self, eta: &[f64]) -> f64 {
        let e = DVector::from_column_slice(eta);
        (e.transpose() * &self.a * &e)[(0, 0)] - 2.0 * self.v.dot(&e) + self.constant
    }

    /// Gradient of the ridge-regularized objective, `2((A + ridge I)η - v)`.
    pub fn gradient(&self, eta: &[f64], ridge: f64) -> Vec<f64> {
        let e = DVector::from_column_slice(eta);
        let g = (&self.a * &e + ridge * &e - &self.v) * 2.0;
        g.iter().copied().collect()
    }

    pub fn default_ridge(&self) -> f64 {
        1e-8 * self.a.trace() / self.a.nrows() as f64
    }

    /// Solves `(A + ridge I)η = v`.
    pub fn solve(&self, ridge: f64) -> Result<Vec<f64>> {
        if !(ridge.is_finite() && ridge >= 0.0) {
            return Err(Error::invalid(format!(
                "ridge must be nonnegative, got {ridge}"
            )));
        }
        let l = self.a.nrows();
        let mut sys = self.a.clone();
        for i in 0..l {
            sys[(i, i)] += ridge;
        }
        let sym = (&sys + sys.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        let cond = if lo <= 0.0 { f64::INFINITY } else { hi / lo };
        if cond > MAX_CONDITION {
            return Err(Error::IllConditioned(cond));
        }
        let chol = sym.cholesky().ok_or(Error::IllConditioned(cond))?;
        Ok(chol.solve(&self.v).iter().copied().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedKEF {
    pub eta_hat: Vec<f64>,
    pub ridge: f64,
    pub objective_value: f64,
    /// Transform applied to the data before fitting. The fitted model lives
    /// on the standardized scale.
    pub standardization: Standardization,
}

impl FittedKEF {
    pub fn model(&self) -> ScoreModel {
        ScoreModel::Kef {
            eta: self.eta_hat.clone(),
        }
    }
}

/// Minimum-KSD fit of the `L`-term KEF. The data are standardized first; a
/// `ridge` of `None` uses `1e-8 · trace(A) / L`.
pub fn fit_kef_min_ksd(
    data: &DataSet,
    kernel: &TiltedKernel,
    basis_size: usize,
    ridge: Option<f64>,
) -> Result<FittedKEF> {
    if data.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: data.dim(),
        });
    }
    let standardization = Standardization::of(data)?;
    let z = standardization.apply(data);
    let obj = KefObjective::build(&z, kernel, basis_size)?;
    let ridge = ridge.unwrap_or_else(|| obj.default_ridge());
    let eta_hat = obj.solve(ridge)?;
    let objective_value = obj.eval(&eta_hat).max(0.0);
    Ok(FittedKEF {
        eta_hat,
        ridge,
        objective_value,
        standardization,
    })
}
