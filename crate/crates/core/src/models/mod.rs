//! Score models: unnormalized densities exposing `s_p = ∇ log p`.

mod kef;
mod rbm;

pub use kef::{fit_kef_min_ksd, kef_basis, FittedKEF, KefObjective, Standardization};
pub use rbm::rbm_gibbs_sample;

use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Largest latent width for which the RBM log density is summed exactly.
pub const RBM_MAX_EXACT_LATENT: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ScoreModel {
    Gaussian {
        mean: Vec<f64>,
        variances: Vec<f64>,
    },
    /// Unit-covariance mixture.
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
    },
    /// Gaussian-Bernoulli RBM with joint `exp(xᵀBh + bᵀx + cᵀh - ½‖x‖²)`,
    /// `h ∈ {±1}^{d'}`. `B` is `d × d'`, row-major.
    Rbm {
        #[serde(rename = "B")]
        weights: Vec<Vec<f64>>,
        b: Vec<f64>,
        c: Vec<f64>,
    },
    /// `p(x) ∝ exp(-‖x‖^r)` in any dimension.
    PowerExponential {
        r: f64,
    },
    /// One-dimensional kernel exponential family
    /// `p_η(x) ∝ N(x; 0, 1) exp(-Σ_l η_l φ_l(x))`.
    Kef {
        eta: Vec<f64>,
    },
}

impl ScoreModel {
    pub fn standard_normal(d: usize) -> Self {
        ScoreModel::Gaussian {
            mean: vec![0.0; d],
            variances: vec![1.0; d],
        }
    }

    pub fn gaussian(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let m = ScoreModel::Gaussian { mean, variances };
        m.validate()?;
        Ok(m)
    }

    pub fn mixture(weights: Vec<f64>, means: Vec<Vec<f64>>) -> Result<Self> {
        let m = ScoreModel::GaussianMixture { weights, means };
        m.validate()?;
        Ok(m)
    }

    pub fn rbm(weights: Vec<Vec<f64>>, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let m = ScoreModel::Rbm { weights, b, c };
        m.validate()?;
        Ok(m)
    }

    /// RBM with every entry of `B`, `b` and `c` drawn from `N(0, 1)`.
    pub fn random_rbm(d: usize, d_hidden: usize, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, 0);
        let mut normal =
            |k: usize| -> Vec<f64> { (0..k).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let weights = (0..d).map(|_| normal(d_hidden)).collect();
        let b = normal(d);
        let c = normal(d_hidden);
        Self::rbm(weights, b, c)
    }

    /// Data dimension, or `None` for models defined in every dimension.
    pub fn dim(&self) -> Option<usize> {
        match self {
            ScoreModel::Gaussian { mean, .. } => Some(mean.len()),
            ScoreModel::GaussianMixture { means, .. } => means.first().map(Vec::len),
            ScoreModel::Rbm { b, .. } => Some(b.len()),
            ScoreModel::PowerExponential { .. } => None,
            ScoreModel::Kef { .. } => Some(1),
        }
    }

    /// True for `N(0, I)` in one dimension.
    pub fn is_standard_normal_1d(&self) -> bool {
        matches!(self, ScoreModel::Gaussian { mean, variances }
            if mean.len() == 1 && mean[0] == 0.0 && variances[0] == 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64], what: &str| {
            if v.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{what} must be finite")))
            }
        };
        match self {
            ScoreModel::Gaussian { mean, variances } => {
                if mean.is_empty() || mean.len() != variances.len() {
                    return Err(Error::invalid(
                        "mean and variances must be nonempty and equal length",
                    ));
                }
                finite(mean, "mean")?;
                if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::invalid("variances must be positive"));
                }
                Ok(())
            }
            ScoreModel::GaussianMixture { weights, means } => {
                check_simplex(weights)?;
                if means.len() != weights.len() {
                    return Err(Error::invalid("one mean per mixture weight"));
                }
                let d = means[0].len();
                if d == 0 || means.iter().any(|m| m.len() != d) {
                    return Err(Error::invalid(
                        "mixture means must share a nonzero dimension",
                    ));
                }
                means.iter().try_for_each(|m| finite(m, "mixture mean"))
            }
            ScoreModel::Rbm { weights, b, c } => {
                if b.is_empty() || c.is_empty() {
                    return Err(Error::invalid("RBM needs d ≥ 1 and d' ≥ 1"));
                }
                if weights.len() != b.len() || weights.iter().any(|row| row.len() != c.len()) {
                    return Err(Error::invalid(format!(
                        "RBM B must be {} × {}",
                        b.len(),
                        c.len()
                    )));
                }
                finite(b, "b")?;
                finite(c, "c")?;
                weights.iter().try_for_each(|r| finite(r, "B"))
            }
            ScoreModel::PowerExponential { r } => {
                if r.is_finite() && *r >= 1.0 {
                    Ok(())
                } else {
                    Err(Error::invalid(format!(
                        "power-exponential r must be ≥ 1, got {r}"
                    )))
                }
            }
            ScoreModel::Kef { eta } => {
                if eta.is_empty() {
                    return Err(Error::invalid("KEF needs at least one basis function"));
                }
                finite(eta, "eta")
            }
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        match self.dim() {
            Some(d) if d != x.len() => Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            }),
            _ => Ok(()),
        }
    }

    /// Writes `s_p(x)` into `out`.
    pub fn score_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_dim(x)?;
        match self {
            ScoreModel::Gaussian { mean, variances } => {
                for j in 0..x.len() {
                    out[j] = (mean[j] - x[j]) / variances[j];
                }
            }
            ScoreModel::GaussianMixture { weights, means } => {
                let resp = mixture_responsibilities(weights, means, x);
                out.iter_mut().for_each(|o| *o = 0.0);
                for (r, m) in resp.iter().zip(means) {
                    if *r > 0.0 {
                        for j in 0..x.len() {
                            out[j] += r * (m[j] - x[j]);
                        }
                    }
                }
            }
            ScoreModel::Rbm { weights, b, c } => {
                let t = rbm::latent_field(weights, c, x);
                for j in 0..x.len() {
                    let coupling: f64 = weights[j]
                        .iter()
                        .zip(&t)
                        .map(|(bj, tk)| bj * tk.tanh())
                        .sum();
                    out[j] = b[j] - x[j] + coupling;
                }
            }
            ScoreModel::PowerExponential { r } => {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    if *r < 2.0 {
                        return Err(Error::SingularPoint);
                    }
                    out.iter_mut().for_each(|o| *o = 0.0);
                } else {
                    let f = -r * norm.powf(r - 2.0);
                    for j in 0..x.len() {
                        out[j] = f * x[j];
                    }
                }
            }
            ScoreModel::Kef { eta } => {
                let mut s = -x[0];
                for (l, e) in eta.iter().enumerate() {
                    s -= e * kef_basis(l + 1, x[0]).1;
                }
                out[0] = s;
            }
        }
        Ok(())
    }

    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.score_into(x, &mut out)?;
        Ok(out)
    }

    /// Unnormalized log density. Additive constants are dropped, so a
    /// Gaussian returns `-½ Σ (x_j - μ_j)²/σ_j²`.
    pub fn log_density_unnorm(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(match self {
            ScoreModel::Gaussian { mean, variances } => {
                -0.5 * (0..x.len())
                    .map(|j| (x[j] - mean[j]).powi(2) / variances[j])
                    .sum::<f64>()
            }
            ScoreModel::GaussianMixture { weights, means } => {
                let logs: Vec<f64> = weights
                    .iter()
                    .zip(means)
                    .map(|(w, m)| w.ln() - 0.5 * sq_dist(x, m))
                    .collect();
                log_sum_exp(&logs)
            }
            ScoreModel::Rbm { weights, b, c } => {
                if c.len() > RBM_MAX_EXACT_LATENT {
                    return Err(Error::Unavailable(format!(
                        "exact RBM log density needs d' ≤ {RBM_MAX_EXACT_LATENT}, got {}",
                        c.len()
                    )));
                }
                rbm::log_density(weights, b, c, x)
            }
            ScoreModel::PowerExponential { r } => {
                -x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(*r)
            }
            ScoreModel::Kef { eta } => {
                let mut v = -0.5 * x[0] * x[0];
                for (l, e) in eta.iter().enumerate() {
                    v -= e * kef_basis(l + 1, x[0]).0;
                }
                v
            }
        })
    }

    /// I.i.d. draws from a Gaussian or Gaussian mixture.
    pub fn sample(&self, n: usize, seed: u64) -> Result<DataSet> {
        let mut rng = stream_rng(seed, 0);
        match self {
            ScoreModel::Gaussian { mean, variances } => {
                let d = mean.len();
                let mut v = Vec::with_capacity(n * d);
                for _ in 0..n {
                    for j in 0..d {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        v.push(mean[j] + variances[j].sqrt() * z);
                    }
                }
                DataSet::new(ndarray::Array2::from_shape_vec((n, d), v).expect("shape"))
            }
            ScoreModel::GaussianMixture { weights, means } => {
                let d = means[0].len();
                let cum = cumulative(weights);
                let unif = Uniform::new(0.0, 1.0).expect("unit interval");
                let mut v = Vec::with_capacity(n * d);
                for _ in 0..n {
                    let u: f64 = unif.sample(&mut rng);
                    let k = pick(&cum, u);
                    for j in 0..d {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        v.push(means[k][j] + z);
                    }
                }
                DataSet::new(ndarray::Array2::from_shape_vec((n, d), v).expect("shape"))
            }
            other => Err(Error::Unsupported(format!(
                "direct sampling is not available for {}",
                other.name()
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScoreModel::Gaussian { .. } => "gaussian",
            ScoreModel::GaussianMixture { .. } => "gaussian_mixture",
            ScoreModel::Rbm { .. } => "rbm",
            ScoreModel::PowerExponential { .. } => "power_exponential",
            ScoreModel::Kef { .. } => "kef",
        }
    }
}

pub(crate) fn check_simplex(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::BadSimplex("empty weight vector".into()));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::BadSimplex("weights must be nonnegative".into()));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::BadSimplex(format!("weights sum to {s}")));
    }
    Ok(())
}

pub(crate) fn cumulative(w: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    w.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// Index of the first cumulative weight exceeding `u`, skipping
/// zero-weight components.
pub(crate) fn pick(cum: &[f64], u: f64) -> usize {
    let mut k = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
    while k > 0 && cum[k] == cum[k - 1] {
        k -= 1;
    }
    k
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn mixture_responsibilities(weights: &[f64], means: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = weights
        .iter()
        .zip(means)
        .map(|(w, m)| {
            if *w > 0.0 {
                w.ln() - 0.5 * sq_dist(x, m)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let lse = log_sum_exp(&logs);
    logs.iter().map(|l| (l - lse).exp()).collect()
}
