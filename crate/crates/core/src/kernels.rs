//! Stationary base kernels, weighting functions and the tilted kernel
//! `k(x, x') = w(x) h(x - x') w(x')`.
//!
//! Every base kernel here is radial, `h(u) = φ(‖u‖²)`, so its gradient is a
//! scalar multiple of the displacement, `∇h(u) = g(‖u‖²) u`. [`RadialTerms`]
//! carries `h`, that multiplier `g` and the Laplacian `Δh`, which is all the
//! Stein kernel needs from the base kernel.

use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::error::{Error, Result};

/// Stationary base kernel `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BaseKernel {
    /// `(1 + ‖u‖²/λ²)^(-b)`.
    Imq { lambda2: f64, exponent: f64 },
    /// `exp(-‖u‖²/(2λ²))`.
    SquaredExponential { lambda2: f64 },
    /// `Σ_λ² (1 + ‖u‖²/(c λ²))^(-b)` with `c = 2` when `half_bandwidth` is set
    /// and `c = 1` otherwise.
    SumImq {
        lambda2s: Vec<f64>,
        exponent: f64,
        #[serde(default)]
        half_bandwidth: bool,
    },
}

/// `h`, the gradient multiplier `g` with `∇h(u) = g u`, and `Δh`, all at one
/// displacement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialTerms {
    pub h: f64,
    pub g: f64,
    pub laplacian: f64,
}

#[inline]
fn imq_terms(r2: f64, lambda2: f64, b: f64, d: f64) -> RadialTerms {
    let t = 1.0 + r2 / lambda2;
    let h = if b == 0.5 { 1.0 / t.sqrt() } else { t.powf(-b) };
    let p1 = h / t; // t^(-b-1)
    let p2 = p1 / t; // t^(-b-2)
    let g = -2.0 * b / lambda2 * p1;
    let laplacian = d * g + 4.0 * b * (b + 1.0) / (lambda2 * lambda2) * p2 * r2;
    RadialTerms { h, g, laplacian }
}

impl BaseKernel {
    pub fn imq(lambda2: f64, exponent: f64) -> Result<Self> {
        let k = BaseKernel::Imq { lambda2, exponent };
        k.validate()?;
        Ok(k)
    }

    pub fn squared_exponential(lambda2: f64) -> Result<Self> {
        let k = BaseKernel::SquaredExponential { lambda2 };
        k.validate()?;
        Ok(k)
    }

    pub fn sum_imq(lambda2s: Vec<f64>, exponent: f64, half_bandwidth: bool) -> Result<Self> {
        let k = BaseKernel::SumImq {
            lambda2s,
            exponent,
            half_bandwidth,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, what: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{what} must be positive and finite, got {v}"
                )))
            }
        };
        match self {
            BaseKernel::Imq { lambda2, exponent } => {
                pos(*lambda2, "bandwidth²")?;
                pos(*exponent, "exponent")
            }
            BaseKernel::SquaredExponential { lambda2 } => pos(*lambda2, "bandwidth²"),
            BaseKernel::SumImq {
                lambda2s, exponent, ..
            } => {
                if lambda2s.is_empty() {
                    return Err(Error::invalid("sum-IMQ needs at least one bandwidth"));
                }
                for l in lambda2s {
                    pos(*l, "bandwidth²")?;
                }
                pos(*exponent, "exponent")
            }
        }
    }

    /// Returns the same kernel family with its bandwidth replaced. Sum kernels
    /// keep their own bandwidth list.
    pub fn with_bandwidth(&self, lambda2: f64) -> Self {
        match self {
            BaseKernel::Imq { exponent, .. } => BaseKernel::Imq {
                lambda2,
                exponent: *exponent,
            },
            BaseKernel::SquaredExponential { .. } => BaseKernel::SquaredExponential { lambda2 },
            k @ BaseKernel::SumImq { .. } => k.clone(),
        }
    }

    /// Radial terms at squared distance `r2` in dimension `d`.
    #[inline]
    pub fn radial(&self, r2: f64, d: usize) -> RadialTerms {
        let df = d as f64;
        match self {
            BaseKernel::Imq { lambda2, exponent } => imq_terms(r2, *lambda2, *exponent, df),
            BaseKernel::SquaredExponential { lambda2 } => {
                let h = (-r2 / (2.0 * lambda2)).exp();
                RadialTerms {
                    h,
                    g: -h / lambda2,
                    laplacian: (-df / lambda2 + r2 / (lambda2 * lambda2)) * h,
                }
            }
            BaseKernel::SumImq {
                lambda2s,
                exponent,
                half_bandwidth,
            } => {
                let c = if *half_bandwidth { 2.0 } else { 1.0 };
                lambda2s.iter().fold(
                    RadialTerms {
                        h: 0.0,
                        g: 0.0,
                        laplacian: 0.0,
                    },
                    |acc, l2| {
                        let t = imq_terms(r2, c * l2, *exponent, df);
                        RadialTerms {
                            h: acc.h + t.h,
                            g: acc.g + t.g,
                            laplacian: acc.laplacian + t.laplacian,
                        }
                    },
                )
            }
        }
    }

    /// `h(u)`.
    pub fn eval_h(&self, u: &[f64]) -> f64 {
        self.radial(norm2(u), u.len()).h
    }

    /// `∇h(u)`, the gradient with respect to the displacement.
    pub fn grad_h(&self, u: &[f64]) -> Vec<f64> {
        let g = self.radial(norm2(u), u.len()).g;
        u.iter().map(|ui| g * ui).collect()
    }

    /// `Δh(u) = Σ_j ∂²h/∂u_j²`.
    pub fn laplacian_h(&self, u: &[f64]) -> f64 {
        self.radial(norm2(u), u.len()).laplacian
    }
}

/// Weighting function `w` of a tilted kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Weight {
    /// `w ≡ 1`.
    #[default]
    Unit,
    /// `w(x) = (1 + ‖x - a‖²/c)^(-b)`.
    Imq {
        center: Vec<f64>,
        scale: f64,
        exponent: f64,
    },
}

impl Weight {
    pub fn imq(center: Vec<f64>, scale: f64, exponent: f64) -> Result<Self> {
        let w = Weight::Imq {
            center,
            scale,
            exponent,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Weight::Unit => Ok(()),
            Weight::Imq {
                center,
                scale,
                exponent,
            } => {
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(Error::invalid(format!(
                        "weight scale must be positive, got {scale}"
                    )));
                }
                if !(exponent.is_finite() && *exponent > 0.0) {
                    return Err(Error::invalid(format!(
                        "weight exponent must be positive, got {exponent}"
                    )));
                }
                if center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::invalid("weight center must be finite"));
                }
                Ok(())
            }
        }
    }

    /// Writes `∇w(x)` into `grad` and returns `w(x)`. An empty `center` is
    /// read as the origin in whatever dimension `x` has.
    #[inline]
    pub fn eval_into(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            Weight::Unit => {
                grad.iter_mut().for_each(|g| *g = 0.0);
                1.0
            }
            Weight::Imq {
                center,
                scale,
                exponent,
            } => {
                let at = |j: usize| center.get(j).copied().unwrap_or(0.0);
                let r2: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(j, xj)| (xj - at(j)).powi(2))
                    .sum();
                let t = 1.0 + r2 / scale;
                let w = if *exponent == 0.5 {
                    1.0 / t.sqrt()
                } else {
                    t.powf(-exponent)
                };
                let coef = -2.0 * exponent / scale * w / t;
                for (j, (g, xj)) in grad.iter_mut().zip(x).enumerate() {
                    *g = coef * (xj - at(j));
                }
                w
            }
        }
    }

    /// `w(x)`.
    pub fn eval_w(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; x.len()];
        self.eval_into(x, &mut g)
    }

    /// `∇w(x)`.
    pub fn grad_w(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.eval_into(x, &mut g);
        g
    }
}

/// `k(x, x') = w(x) h(x - x') w(x')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltedKernel {
    pub base: BaseKernel,
    #[serde(default)]
    pub weight: Weight,
}

impl TiltedKernel {
    pub fn new(base: BaseKernel, weight: Weight) -> Result<Self> {
        base.validate()?;
        weight.validate()?;
        Ok(Self { base, weight })
    }

    /// Untilted stationary kernel.
    pub fn stationary(base: BaseKernel) -> Result<Self> {
        Self::new(base, Weight::Unit)
    }

    /// IMQ base with exponent ½ tilted by `(1 + ‖x‖²)^(-1/2)`, the default
    /// robust configuration.
    pub fn tilted_imq(lambda2: f64) -> Result<Self> {
        Self::new(
            BaseKernel::imq(lambda2, 0.5)?,
            Weight::imq(Vec::new(), 1.0, 0.5)?,
        )
    }

    pub fn is_tilted(&self) -> bool {
        !matches!(self.weight, Weight::Unit)
    }

    pub fn with_bandwidth(&self, lambda2: f64) -> Self {
        Self {
            base: self.base.with_bandwidth(lambda2),
            weight: self.weight.clone(),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        let h = self.base.radial(r2, x.len()).h;
        (self.weight.eval_w(x) * self.weight.eval_w(y)) * h
    }
}

#[inline]
pub(crate) fn norm2(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum()
}

/// Median of the pairwise Euclidean distances `‖X_i - X_j‖`, `i < j`. Even
/// counts take the lower of the two middle values.
pub fn median_heuristic(data: &DataSet) -> Result<f64> {
    let n = data.n();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let xi = data.row(i);
        for j in (i + 1)..n {
            let r2: f64 = xi
                .iter()
                .zip(data.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dists.push(r2);
        }
    }
    let k = (dists.len() - 1) / 2;
    let (_, med, _) = dists.select_nth_unstable_by(k, f64::total_cmp);
    let med = med.sqrt();
    if med == 0.0 && dists.iter().all(|&d| d == 0.0) {
        return Err(Error::DegenerateSample);
    }
    Ok(med)
}
