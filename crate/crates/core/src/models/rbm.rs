use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ScoreModel;
use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// `t = Bᵀx + c`.
pub(super) fn latent_field(weights: &[Vec<f64>], c: &[f64], x: &[f64]) -> Vec<f64> {
    let mut t = c.to_vec();
    for (xj, row) in x.iter().zip(weights) {
        for (tk, bjk) in t.iter_mut().zip(row) {
            *tk += xj * bjk;
        }
    }
    t
}

/// `bᵀx - ½‖x‖² + Σ_k log(e^{t_k} + e^{-t_k})`.
pub(super) fn log_density(weights: &[Vec<f64>], b: &[f64], c: &[f64], x: &[f64]) -> f64 {
    let t = latent_field(weights, c, x);
    let quad: f64 = b
        .iter()
        .zip(x)
        .map(|(bj, xj)| bj * xj - 0.5 * xj * xj)
        .sum();
    // log(2 cosh t) = |t| + log(1 + e^{-2|t|})
    quad + t
        .iter()
        .map(|tk| tk.abs() + (-2.0 * tk.abs()).exp().ln_1p())
        .sum::<f64>()
}

/// Block Gibbs sampler: `P(h_k = +1 | x) = σ(2 t_k)` and `x | h ~ N(Bh + b, I)`.
///
/// The chain starts at `x = b`, runs `burn_in` sweeps, then records the state
/// after every `thinning` further sweeps until `n` states are kept.
pub fn rbm_gibbs_sample(
    model: &ScoreModel,
    n: usize,
    burn_in: usize,
    thinning: usize,
    seed: u64,
) -> Result<DataSet> {
    let ScoreModel::Rbm { weights, b, c } = model else {
        return Err(Error::Unsupported(format!(
            "Gibbs sampling needs an RBM, got {}",
            model.name()
        )));
    };
    if thinning == 0 {
        return Err(Error::invalid("thinning must be at least 1"));
    }
    let d = b.len();
    let mut rng = stream_rng(seed, 0);
    let mut x = b.clone();
    let mut h = vec![0.0; c.len()];
    let mut sweep = |x: &mut Vec<f64>, rng: &mut rand_chacha::ChaCha8Rng| {
        let t = latent_field(weights, c, x);
        for (hk, tk) in h.iter_mut().zip(&t) {
            let p = 1.0 / (1.0 + (-2.0 * tk).exp());
            *hk = if rng.random::<f64>() < p { 1.0 } else { -1.0 };
        }
        for j in 0..d {
            let mean: f64 = b[j] + weights[j].iter().zip(&h).map(|(w, hk)| w * hk).sum::<f64>();
            let z: f64 = StandardNormal.sample(rng);
            x[j] = mean + z;
        }
    };
    for _ in 0..burn_in {
        sweep(&mut x, &mut rng);
    }
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        for _ in 0..thinning {
            sweep(&mut x, &mut rng);
        }
        out.extend_from_slice(&x);
    }
    DataSet::new(ndarray::Array2::from_shape_vec((n, d), out).expect("shape"))
}
