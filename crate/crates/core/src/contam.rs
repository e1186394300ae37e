//! Data-generating distributions for contaminated and misspecified data.
//!
//! Three contamination mechanisms are kept apart: per-row Bernoulli mixing
//! ([`AlternativeSpec::Huber`]), exact-count replacement
//! ([`perturb_fraction`]) and appending ([`append_outliers`]).

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::models::{check_simplex, rbm_gibbs_sample, ScoreModel};
use crate::rng::stream_rng;

/// Burn-in and thinning used whenever an RBM serves as a base sampler.
pub const RBM_BURN_IN: usize = 2000;
pub const RBM_THINNING: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContaminationSpec {
    DiracOutlier {
        z: Vec<f64>,
    },
    GaussianNoise {
        mean: Vec<f64>,
        var: f64,
    },
    /// One-dimensional unit-variance scaled t.
    ScaledT {
        nu: f64,
    },
    None,
}

impl ContaminationSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ContaminationSpec::DiracOutlier { z } if z.iter().any(|v| !v.is_finite()) => {
                Err(Error::invalid("outlier location must be finite"))
            }
            ContaminationSpec::GaussianNoise { mean, var } => {
                if !(var.is_finite() && *var > 0.0) {
                    return Err(Error::invalid(format!(
                        "noise variance must be positive, got {var}"
                    )));
                }
                if mean.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("noise mean must be finite"));
                }
                Ok(())
            }
            ContaminationSpec::ScaledT { nu } => check_nu(*nu),
            _ => Ok(()),
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            ContaminationSpec::DiracOutlier { z } => Some(z.len()),
            ContaminationSpec::GaussianNoise { mean, .. } => Some(mean.len()),
            ContaminationSpec::ScaledT { .. } => Some(1),
            ContaminationSpec::None => None,
        }
    }

    /// One contamination draw written into `out`. `None` leaves `out` as is.
    fn draw_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            ContaminationSpec::DiracOutlier { z } => out.copy_from_slice(z),
            ContaminationSpec::GaussianNoise { mean, var } => {
                let s = var.sqrt();
                for (o, m) in out.iter_mut().zip(mean) {
                    let e: f64 = StandardNormal.sample(rng);
                    *o = m + s * e;
                }
            }
            ContaminationSpec::ScaledT { nu } => out[0] = scaled_t_draw(*nu, rng),
            ContaminationSpec::None => {}
        }
    }
}

fn check_nu(nu: f64) -> Result<()> {
    if nu > 2.0 && nu.is_finite() {
        Ok(())
    } else {
        Err(Error::BadNu(nu))
    }
}

/// `t_ν √((ν - 2)/ν)`, with `t_ν = Z / √(χ²_ν / ν)`.
fn scaled_t_draw(nu: f64, rng: &mut ChaCha8Rng) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    let chi = ChiSquared::new(nu).expect("nu checked").sample(rng);
    z / (chi / nu).sqrt() * ((nu - 2.0) / nu).sqrt()
}

fn check_contamination_dim(c: &ContaminationSpec, d: usize) -> Result<()> {
    match c.dim() {
        Some(k) if k != d => Err(Error::DimensionMismatch {
            expected: d,
            got: k,
        }),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AlternativeSpec {
    /// Each row independently comes from `contamination` with probability
    /// `eps` and from `base` otherwise.
    Huber {
        base: ScoreModel,
        contamination: ContaminationSpec,
        eps: f64,
    },
    ScaledTData {
        nu: f64,
    },
    /// `N(mu0 · direction, I)`.
    MeanShift {
        mu0: f64,
        direction: Vec<f64>,
    },
    /// The base mixture's components with different weights.
    MixtureRatioPerturb {
        base: ScoreModel,
        new_weights: Vec<f64>,
    },
}

/// Draws from a base model: direct sampling for Gaussians and mixtures,
/// block Gibbs for an RBM.
pub fn sample_base(model: &ScoreModel, n: usize, seed: u64) -> Result<DataSet> {
    match model {
        ScoreModel::Rbm { .. } => rbm_gibbs_sample(model, n, RBM_BURN_IN, RBM_THINNING, seed),
        _ => model.sample(n, seed),
    }
}

pub fn sample_alternative(spec: &AlternativeSpec, n: usize, seed: u64) -> Result<DataSet> {
    match spec {
        AlternativeSpec::Huber {
            base,
            contamination,
            eps,
        } => {
            if !(0.0..=1.0).contains(eps) {
                return Err(Error::invalid(format!("eps must lie in [0, 1], got {eps}")));
            }
            contamination.validate()?;
            let clean = sample_base(base, n, seed)?;
            check_contamination_dim(contamination, clean.dim())?;
            let mut values = clean.into_array();
            let mut rng = stream_rng(seed, 1);
            for mut row in values.rows_mut() {
                if rng.random::<f64>() < *eps {
                    contamination.draw_into(&mut rng, row.as_slice_mut().expect("standard layout"));
                }
            }
            DataSet::new(values)
        }
        AlternativeSpec::ScaledTData { nu } => {
            check_nu(*nu)?;
            let mut rng = stream_rng(seed, 0);
            let xs: Vec<f64> = (0..n).map(|_| scaled_t_draw(*nu, &mut rng)).collect();
            DataSet::from_scalars(&xs)
        }
        AlternativeSpec::MeanShift { mu0, direction } => {
            let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
            if direction.is_empty() || (norm - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("mean-shift direction must be a unit vector"));
            }
            let mean = direction.iter().map(|v| mu0 * v).collect();
            ScoreModel::gaussian(mean, vec![1.0; direction.len()])?.sample(n, seed)
        }
        AlternativeSpec::MixtureRatioPerturb { base, new_weights } => {
            let ScoreModel::GaussianMixture { means, .. } = base else {
                return Err(Error::invalid(
                    "ratio perturbation needs a Gaussian mixture base",
                ));
            };
            check_simplex(new_weights)?;
            if new_weights.len() != means.len() {
                return Err(Error::BadSimplex(format!(
                    "{} weights for {} components",
                    new_weights.len(),
                    means.len()
                )));
            }
            ScoreModel::mixture(new_weights.clone(), means.clone())?.sample(n, seed)
        }
    }
}

/// Replaces exactly `round(frac · n)` rows, chosen uniformly without
/// replacement, by contamination draws.
pub fn perturb_fraction(
    data: &DataSet,
    frac: f64,
    contamination: &ContaminationSpec,
    seed: u64,
) -> Result<DataSet> {
    if !(0.0..=1.0).contains(&frac) {
        return Err(Error::invalid(format!(
            "fraction must lie in [0, 1], got {frac}"
        )));
    }
    contamination.validate()?;
    check_contamination_dim(contamination, data.dim())?;
    let n = data.n();
    let m = ((frac * n as f64).round() as usize).min(n);
    let mut rng = stream_rng(seed, 0);
    let picked = index::sample(&mut rng, n, m);
    let mut values = data.view().to_owned();
    for i in picked.iter() {
        let mut row = values.row_mut(i);
        contamination.draw_into(&mut rng, row.as_slice_mut().expect("standard layout"));
    }
    DataSet::new(values)
}

/// Appends `n_ol` contamination draws below the data.
pub fn append_outliers(
    data: &DataSet,
    n_ol: usize,
    contamination: &ContaminationSpec,
    seed: u64,
) -> Result<DataSet> {
    contamination.validate()?;
    if matches!(contamination, ContaminationSpec::None) {
        return Err(Error::invalid(
            "appending needs a contamination distribution",
        ));
    }
    check_contamination_dim(contamination, data.dim())?;
    let d = data.dim();
    let mut rng = stream_rng(seed, 0);
    let mut extra = ndarray::Array2::<f64>::zeros((n_ol, d));
    for mut row in extra.rows_mut() {
        contamination.draw_into(&mut rng, row.as_slice_mut().expect("standard layout"));
    }
    data.concat(&DataSet::new(extra)?)
}

/// `π_j ∝ u_j` with `u_j ~ Uniform(0, 1)`.
pub fn random_simplex<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let u: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
    let s: f64 = u.iter().sum();
    let mut w: Vec<f64> = u.iter().map(|v| v / s).collect();
    // Put the rounding residue on the largest weight so the sum is 1 to
    // within one ulp.
    let resid = 1.0 - w.iter().sum::<f64>();
    let imax = (0..k).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap_or(0);
    w[imax] += resid;
    w
}

/// `Σ_j π_j N(γ μ_j, I)` with random weights `π_j ∝ u_j` and mean entries
/// `Uniform(-2, 2)`, all drawn from `seed`.
pub fn random_mixture_model(k: usize, d: usize, gamma: f64, seed: u64) -> Result<ScoreModel> {
    let mut rng = stream_rng(seed, 0);
    let weights = random_simplex(k, &mut rng);
    let means = (0..k)
        .map(|_| {
            (0..d)
                .map(|_| gamma * rng.random_range(-2.0..2.0))
                .collect()
        })
        .collect();
    ScoreModel::mixture(weights, means)
}
