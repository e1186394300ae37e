//! Weighted (multinomial) and wild bootstrap replicates of the KSD
//! statistics, and the Monte-Carlo quantile
//!
//! ```text
//! q²_{B,1-α} = inf{ u : 1 - α ≤ (#{D² ≤ u} + #{b : D²_b ≤ u}) / (B + 1) }.
//! ```
//!
//! The infimum is the `k`-th smallest element of `{D²} ∪ {D²_b}` with
//! `k = ⌈(1 - α)(B + 1)⌉`. Replicate `b` draws its weights from
//! `stream_rng(seed, b)`, so replicates can be computed in any order.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::stein::SteinGram;

pub const DEFAULT_B: usize = 500;

/// Replicates evaluated per matrix product.
const BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Weighted,
    Wild,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    V,
    U,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub scheme: Scheme,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn new(scheme: Scheme, b: usize, seed: u64) -> Result<Self> {
        if b == 0 {
            return Err(Error::invalid("bootstrap size B must be at least 1"));
        }
        Ok(Self { scheme, b, seed })
    }

    pub fn weighted(b: usize, seed: u64) -> Result<Self> {
        Self::new(Scheme::Weighted, b, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileEstimate {
    pub q_squared: f64,
    pub q: f64,
    pub samples_used: usize,
}

/// Weighted scheme: a multinomial count vector built from `n` uniform
/// category draws. Wild scheme: independent ±1 signs.
pub fn draw_weights<R: Rng + ?Sized>(scheme: Scheme, n: usize, rng: &mut R) -> Vec<i64> {
    match scheme {
        Scheme::Weighted => {
            let mut w = vec![0i64; n];
            for _ in 0..n {
                w[rng.random_range(0..n)] += 1;
            }
            w
        }
        Scheme::Wild => (0..n)
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect(),
    }
}

/// The multipliers entering the quadratic form: `W_i - 1` for the weighted
/// scheme and the signs themselves for the wild scheme.
fn centered(scheme: Scheme, w: &[i64]) -> impl Iterator<Item = f64> + '_ {
    let shift = match scheme {
        Scheme::Weighted => 1,
        Scheme::Wild => 0,
    };
    w.iter().map(move |&v| (v - shift) as f64)
}

/// `n⁻² Σ_ij (W_i - 1)(W_j - 1) u_ij`.
pub fn boot_stat_weighted(gram: &SteinGram, w: &[i64]) -> Result<f64> {
    let n = gram.n();
    if w.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: w.len(),
        });
    }
    let sum: i64 = w.iter().sum();
    if sum != n as i64 || w.iter().any(|&v| v < 0) {
        return Err(Error::BadWeights { sum, n });
    }
    let c: Vec<f64> = centered(Scheme::Weighted, w).collect();
    Ok(quad_form(gram.values.view(), &c) / (n * n) as f64)
}

/// `n⁻² Σ_ij ε_i ε_j u_ij` for signs `ε`.
pub fn boot_stat_wild(gram: &SteinGram, signs: &[i64]) -> Result<f64> {
    let n = gram.n();
    if signs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: signs.len(),
        });
    }
    let c: Vec<f64> = signs.iter().map(|&s| s as f64).collect();
    Ok(quad_form(gram.values.view(), &c) / (n * n) as f64)
}

fn quad_form(u: ArrayView2<f64>, c: &[f64]) -> f64 {
    let mut s = 0.0;
    for (i, row) in u.rows().into_iter().enumerate() {
        let inner: f64 = row.iter().zip(c).map(|(a, b)| a * b).sum();
        s += c[i] * inner;
    }
    s
}

/// Replicates `start..start + count` for the given estimator.
fn replicate_batch(
    gram: &SteinGram,
    config: &BootstrapConfig,
    estimator: Estimator,
    start: usize,
    count: usize,
) -> Vec<f64> {
    let n = gram.n();
    let mut wc = Array2::<f64>::zeros((n, count));
    for col in 0..count {
        let mut rng = stream_rng(config.seed, (start + col) as u64);
        let w = draw_weights(config.scheme, n, &mut rng);
        for (i, v) in centered(config.scheme, &w).enumerate() {
            wc[[i, col]] = v;
        }
    }
    let uw = gram.values.dot(&wc);
    let diag = gram.values.diag();
    let nf = n as f64;
    (0..count)
        .map(|col| {
            let c = wc.index_axis(Axis(1), col);
            let full = c.dot(&uw.index_axis(Axis(1), col));
            match estimator {
                Estimator::V => full / (nf * nf),
                Estimator::U => {
                    let on_diag: f64 = c.iter().zip(diag.iter()).map(|(ci, d)| ci * ci * d).sum();
                    (full - on_diag) / (nf * (nf - 1.0))
                }
            }
        })
        .collect()
}

/// All `B` replicates, in replicate order.
pub fn bootstrap_samples(
    gram: &SteinGram,
    config: &BootstrapConfig,
    estimator: Estimator,
) -> Result<Vec<f64>> {
    if estimator == Estimator::U && gram.n() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: gram.n(),
        });
    }
    let starts: Vec<usize> = (0..config.b).step_by(BATCH).collect();
    let parts: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&s| replicate_batch(gram, config, estimator, s, BATCH.min(config.b - s)))
        .collect();
    Ok(parts.concat())
}

/// Rank of the quantile within the `B + 1` values.
pub fn quantile_rank(alpha: f64, b: usize) -> usize {
    let k = ((1.0 - alpha) * (b + 1) as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(b + 1)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// The `k`-th smallest of `{observed} ∪ samples`.
pub fn quantile_from_samples(observed: f64, samples: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let mut all = Vec::with_capacity(samples.len() + 1);
    all.push(observed);
    all.extend_from_slice(samples);
    let k = quantile_rank(alpha, samples.len());
    let (_, v, _) = all.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*v)
}

pub fn boot_quantile(
    gram: &SteinGram,
    observed: f64,
    config: &BootstrapConfig,
    alpha: f64,
) -> Result<QuantileEstimate> {
    boot_quantile_with(gram, observed, config, alpha, Estimator::V)
}

pub fn boot_quantile_with(
    gram: &SteinGram,
    observed: f64,
    config: &BootstrapConfig,
    alpha: f64,
    estimator: Estimator,
) -> Result<QuantileEstimate> {
    check_alpha(alpha)?;
    let samples = bootstrap_samples(gram, config, estimator)?;
    let q_squared = quantile_from_samples(observed, &samples, alpha)?;
    Ok(QuantileEstimate {
        q_squared,
        q: q_squared.max(0.0).sqrt(),
        samples_used: config.b,
    })
}

/// Whether at least `k = ⌈(1 - α)(B + 1)⌉` members of `{observed} ∪ {D²_b}`
/// satisfy `below`. For a predicate of the form `v ↦ f(v) < c` with `f`
/// nondecreasing this is exactly `f(q²_{B,1-α}) < c`, the rejection event of
/// every bootstrap test here. Replicates are generated in small batches
/// until the count is settled either way, so a clear decision usually needs
/// only a fraction of the `B` replicates. Agrees with
/// [`boot_quantile_with`] replicate for replicate.
pub fn quantile_precedes(
    gram: &SteinGram,
    observed: f64,
    config: &BootstrapConfig,
    alpha: f64,
    estimator: Estimator,
    below: impl Fn(f64) -> bool,
) -> Result<bool> {
    check_alpha(alpha)?;
    if estimator == Estimator::U && gram.n() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: gram.n(),
        });
    }
    let k = quantile_rank(alpha, config.b);
    let mut hits = usize::from(below(observed));
    let mut done = 0;
    while done < config.b {
        if hits >= k {
            return Ok(true);
        }
        if hits + (config.b - done) < k {
            return Ok(false);
        }
        let count = (BATCH / 2).min(config.b - done);
        hits += replicate_batch(gram, config, estimator, done, count)
            .into_iter()
            .filter(|v| below(*v))
            .count();
        done += count;
    }
    Ok(hits >= k)
}
