//! The Langevin Stein kernel, its Gram matrix, KSD estimators, `τ_∞`
//! estimation and a one-dimensional quadrature oracle for population KSD.
//!
//! With `k(x, x') = w(x) h(x - x') w(x')` and `a(x) = w(x) s_p(x) + ∇w(x)`,
//! the product rule collapses the four Stein-kernel terms to
//!
//! ```text
//! u_p(x, x') = h(u) a(x)·a(x') + ∇h(u)·(w(x) a(x') - w(x') a(x)) - w(x) w(x') Δh(u),
//! ```
//!
//! `u = x - x'`. Swapping the arguments negates both factors of the middle
//! term, so the floating-point result is exactly symmetric.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::kernels::{BaseKernel, TiltedKernel};
use crate::models::ScoreModel;

/// Per-point quantities the Stein kernel needs: `w(x)` and `a(x)`.
#[derive(Debug, Clone)]
pub struct PointTerms {
    pub w: f64,
    pub a: Vec<f64>,
}

pub fn point_terms(model: &ScoreModel, kernel: &TiltedKernel, x: &[f64]) -> Result<PointTerms> {
    let mut a = model.score(x)?;
    let mut grad = vec![0.0; x.len()];
    let w = kernel.weight.eval_into(x, &mut grad);
    for (aj, gj) in a.iter_mut().zip(&grad) {
        *aj = w * *aj + gj;
    }
    Ok(PointTerms { w, a })
}

/// `u_p(x, y)` from precomputed point terms.
#[inline]
pub fn pair_value(
    base: &BaseKernel,
    x: &[f64],
    px: &PointTerms,
    y: &[f64],
    py: &PointTerms,
) -> f64 {
    let d = x.len();
    let mut r2 = 0.0;
    let mut aa = 0.0;
    let mut cross = 0.0;
    for j in 0..d {
        let u = x[j] - y[j];
        r2 += u * u;
        aa += px.a[j] * py.a[j];
        cross += u * (px.w * py.a[j] - py.w * px.a[j]);
    }
    let t = base.radial(r2, d);
    t.h * aa + t.g * cross - (px.w * py.w) * t.laplacian
}

/// `u_p(x, x) = h(0)‖a(x)‖² - w(x)² Δh(0)`.
#[inline]
pub fn diag_value(base: &BaseKernel, p: &PointTerms) -> f64 {
    let t = base.radial(0.0, p.a.len());
    t.h * p.a.iter().map(|v| v * v).sum::<f64>() - p.w * p.w * t.laplacian
}

fn check_dim(model: &ScoreModel, d: usize) -> Result<()> {
    match model.dim() {
        Some(m) if m != d => Err(Error::DimensionMismatch {
            expected: m,
            got: d,
        }),
        _ => Ok(()),
    }
}

pub fn stein_kernel_eval(
    model: &ScoreModel,
    kernel: &TiltedKernel,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let px = point_terms(model, kernel, x)?;
    let py = point_terms(model, kernel, y)?;
    Ok(pair_value(&kernel.base, x, &px, y, &py))
}

/// `x ↦ u_p(x, x)`.
pub fn stein_diag(model: &ScoreModel, kernel: &TiltedKernel, x: &[f64]) -> Result<f64> {
    Ok(diag_value(&kernel.base, &point_terms(model, kernel, x)?))
}

/// Stein kernel values on a sample. `values` is symmetric and `diag_max` is
/// its largest diagonal entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SteinGram {
    pub values: Array2<f64>,
    pub diag_max: f64,
}

impl SteinGram {
    /// Wraps a precomputed symmetric matrix.
    pub fn from_matrix(values: Array2<f64>) -> Result<Self> {
        let (r, c) = values.dim();
        if r != c {
            return Err(Error::DimensionMismatch {
                expected: r,
                got: c,
            });
        }
        let diag_max = values
            .diag()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { values, diag_max })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Writes the matrix as headerless CSV.
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        for row in self.values.rows() {
            w.write_record(row.iter().map(|v| format!("{v:.16e}")))
                .map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_io(path: &std::path::Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// Assembles the Stein Gram. Each unordered pair is evaluated once and
/// mirrored; rows are computed in parallel.
pub fn stein_gram(model: &ScoreModel, kernel: &TiltedKernel, data: &DataSet) -> Result<SteinGram> {
    let n = data.n();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    check_dim(model, data.dim())?;
    let terms: Vec<PointTerms> = (0..n)
        .map(|i| {
            point_terms(model, kernel, data.row(i)).map_err(|e| Error::GramEntry {
                i,
                j: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let base = &kernel.base;
    let mut values = Array2::<f64>::zeros((n, n));
    values
        .as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| {
            let xi = data.row(i);
            row[i] = diag_value(base, &terms[i]);
            for j in (i + 1)..n {
                row[j] = pair_value(base, xi, &terms[i], data.row(j), &terms[j]);
            }
        });
    for i in 0..n {
        for j in 0..i {
            values[[i, j]] = values[[j, i]];
        }
    }
    let diag_max = values
        .diag()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SteinGram { values, diag_max })
}

/// Floating-point noise below this is clamped to zero.
pub const V_STAT_CLAMP: f64 = -1e-12;
/// A V-statistic below this means the Gram is broken.
pub const V_STAT_ERROR: f64 = -1e-8;

/// `D²_V = n⁻² Σ_ij u_ij`.
pub fn ksd_v_stat(gram: &SteinGram) -> Result<f64> {
    let n = gram.n();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let v = gram.values.sum() / (n * n) as f64;
    if v < V_STAT_ERROR {
        Err(Error::NegativeVStat(v))
    } else if v < 0.0 {
        if v >= V_STAT_CLAMP {
            Ok(0.0)
        } else {
            Ok(v)
        }
    } else {
        Ok(v)
    }
}

/// `D²_U = (n(n-1))⁻¹ Σ_{i≠j} u_ij`. May be negative.
pub fn ksd_u_stat(gram: &SteinGram) -> Result<f64> {
    let n = gram.n();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let off = gram.values.sum() - gram.values.diag().sum();
    Ok(off / (n * (n - 1)) as f64)
}

/// `D²_V` without storing the Gram, for samples too large for an `n × n`
/// matrix.
pub fn ksd_v_stat_streaming(
    model: &ScoreModel,
    kernel: &TiltedKernel,
    data: &DataSet,
) -> Result<f64> {
    let n = data.n();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    check_dim(model, data.dim())?;
    let terms: Vec<PointTerms> = (0..n)
        .map(|i| point_terms(model, kernel, data.row(i)))
        .collect::<Result<_>>()?;
    let base = &kernel.base;
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = data.row(i);
            let off: f64 = ((i + 1)..n)
                .map(|j| pair_value(base, xi, &terms[i], data.row(j), &terms[j]))
                .sum();
            diag_value(base, &terms[i]) + 2.0 * off
        })
        .sum();
    Ok((total / (n * n) as f64).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum TauMethod {
    /// Largest diagonal value over the sample.
    DataMax,
    /// Numerical search over the ball of radius `bound` around the
    /// coordinatewise data median.
    GridLocal { bound: f64 },
}

/// Fixed search protocol for [`TauMethod::GridLocal`].
pub const GRID_POINTS: usize = 2048;
pub const GRID_RESTARTS: usize = 5;
pub const GOLDEN_ITERATIONS: usize = 200;
pub const GOLDEN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauEstimate {
    pub value: f64,
    pub method: TauMethod,
    pub argmax: Vec<f64>,
}

pub fn tau_inf(
    model: &ScoreModel,
    kernel: &TiltedKernel,
    data: &DataSet,
    method: TauMethod,
) -> Result<TauEstimate> {
    match method {
        TauMethod::DataMax => {
            if data.is_empty() {
                return Err(Error::EmptyData);
            }
            check_dim(model, data.dim())?;
            let mut best = (f64::NEG_INFINITY, 0);
            for (i, x) in data.rows().enumerate() {
                let v = stein_diag(model, kernel, x)?;
                if v > best.0 {
                    best = (v, i);
                }
            }
            Ok(TauEstimate {
                value: best.0,
                method,
                argmax: data.row(best.1).to_vec(),
            })
        }
        TauMethod::GridLocal { bound } => {
            if !(bound.is_finite() && bound > 0.0) {
                return Err(Error::invalid(format!(
                    "locality bound must be positive, got {bound}"
                )));
            }
            if data.is_empty() {
                return Err(Error::EmptyData);
            }
            check_dim(model, data.dim())?;
            grid_local(model, kernel, data, bound, method)
        }
    }
}

/// Diagonal value, with points where the score is undefined scored as -∞ so
/// the search steps around them.
fn diag_or_floor(model: &ScoreModel, kernel: &TiltedKernel, x: &[f64]) -> f64 {
    stein_diag(model, kernel, x).unwrap_or(f64::NEG_INFINITY)
}

fn grid_local(
    model: &ScoreModel,
    kernel: &TiltedKernel,
    data: &DataSet,
    bound: f64,
    method: TauMethod,
) -> Result<TauEstimate> {
    let d = data.dim();
    let center = data.coordinate_median();
    let step = 2.0 * bound / (GRID_POINTS - 1) as f64;
    let in_ball = |x: &[f64]| -> bool {
        x.iter()
            .zip(&center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
            <= bound * bound
    };

    let mut cands: Vec<(f64, Vec<f64>)> = Vec::new();
    for j in 0..d {
        for k in 0..GRID_POINTS {
            let mut x = center.clone();
            x[j] += -bound + k as f64 * step;
            let v = diag_or_floor(model, kernel, &x);
            cands.push((v, x));
        }
    }
    for x in data.rows().filter(|x| in_ball(x)) {
        cands.push((diag_or_floor(model, kernel, x), x.to_vec()));
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0));
    cands.truncate(GRID_RESTARTS);

    let mut best = cands[0].clone();
    for (v0, x0) in cands {
        let (v, x) = refine(model, kernel, &center, bound, step, v0, x0);
        if v > best.0 {
            best = (v, x);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::SingularPoint);
    }
    Ok(TauEstimate {
        value: best.0,
        method,
        argmax: best.1,
    })
}

/// Cyclic coordinate ascent, golden-section search on each coordinate within
/// one grid step of the current point, clipped to the ball. Moves are only
/// accepted when they improve the objective.
fn refine(
    model: &ScoreModel,
    kernel: &TiltedKernel,
    center: &[f64],
    bound: f64,
    step: f64,
    mut best: f64,
    mut x: Vec<f64>,
) -> (f64, Vec<f64>) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let d = x.len();
    for _cycle in 0..50 {
        let before = best;
        for j in 0..d {
            let others: f64 = (0..d)
                .filter(|&k| k != j)
                .map(|k| (x[k] - center[k]).powi(2))
                .sum();
            let half = (bound * bound - others).max(0.0).sqrt();
            let mut lo = (x[j] - step).max(center[j] - half);
            let mut hi = (x[j] + step).min(center[j] + half);
            if hi <= lo {
                continue;
            }
            let f = |t: f64, x: &mut Vec<f64>| {
                let keep = x[j];
                x[j] = t;
                let v = diag_or_floor(model, kernel, x);
                x[j] = keep;
                v
            };
            let mut c = hi - INV_PHI * (hi - lo);
            let mut e = lo + INV_PHI * (hi - lo);
            let mut fc = f(c, &mut x);
            let mut fe = f(e, &mut x);
            for _ in 0..GOLDEN_ITERATIONS {
                if hi - lo <= GOLDEN_TOL {
                    break;
                }
                if fc >= fe {
                    hi = e;
                    e = c;
                    fe = fc;
                    c = hi - INV_PHI * (hi - lo);
                    fc = f(c, &mut x);
                } else {
                    lo = c;
                    c = e;
                    fc = fe;
                    e = lo + INV_PHI * (hi - lo);
                    fe = f(e, &mut x);
                }
            }
            let t = 0.5 * (lo + hi);
            let ft = f(t, &mut x);
            if ft > best {
                best = ft;
                x[j] = t;
            }
        }
        if best - before <= 1e-14 * best.abs().max(1.0) {
            break;
        }
    }
    (best, x)
}

/// Composite Simpson nodes and weights over one or more abutting segments.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadGrid {
    pub fn uniform(lo: f64, hi: f64, points: usize) -> Result<Self> {
        Self::segments(&[(lo, hi, points)])
    }

    /// Concatenates Simpson rules over `(lo, hi, points)` segments, each with
    /// an odd number of points. Shared endpoints are merged.
    pub fn segments(segs: &[(f64, f64, usize)]) -> Result<Self> {
        if segs.is_empty() {
            return Err(Error::BadGrid("no segments".into()));
        }
        let mut nodes: Vec<f64> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for &(lo, hi, m) in segs {
            if m < 3 {
                return Err(Error::BadGrid(format!("need at least 3 points, got {m}")));
            }
            if m % 2 == 0 {
                return Err(Error::BadGrid(format!(
                    "Simpson needs an even number of intervals, got {} points",
                    m
                )));
            }
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::BadGrid(format!("bad interval [{lo}, {hi}]")));
            }
            if let Some(&last) = nodes.last() {
                if lo < last {
                    return Err(Error::BadGrid("segments must be increasing".into()));
                }
            }
            let dx = (hi - lo) / (m - 1) as f64;
            for k in 0..m {
                let x = if k == m - 1 { hi } else { lo + k as f64 * dx };
                let c = if k == 0 || k == m - 1 {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let wt = c * dx / 3.0;
                if k == 0 && nodes.last() == Some(&x) {
                    *weights.last_mut().expect("nonempty") += wt;
                } else {
                    nodes.push(x);
                    weights.push(wt);
                }
            }
        }
        Ok(Self { nodes, weights })
    }

    /// `[μ - 12σ, μ + 12σ]` with 4001 points.
    pub fn default_for(mu: f64, sigma: f64) -> Result<Self> {
        Self::uniform(mu - 12.0 * sigma, mu + 12.0 * sigma, 4001)
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(*x))
            .sum()
    }
}

/// `∬ u_p(x, x') q(x) q(x') dx dx'` by tensor-product Simpson quadrature.
pub fn ksd_quadrature_1d(
    model: &ScoreModel,
    q_density: impl Fn(f64) -> f64,
    kernel: &TiltedKernel,
    grid: &QuadGrid,
) -> Result<f64> {
    check_dim(model, 1)?;
    let mut pts: Vec<(f64, f64, PointTerms)> = Vec::new();
    for (x, w) in grid.nodes.iter().zip(&grid.weights) {
        let m = w * q_density(*x);
        if m != 0.0 {
            pts.push((*x, m, point_terms(model, kernel, &[*x])?));
        }
    }
    let base = &kernel.base;
    let total: f64 = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let (xi, mi, ref ti) = pts[i];
            let mut s = 0.5 * mi * mi * diag_value(base, ti);
            for (xj, mj, tj) in &pts[(i + 1)..] {
                s += mi * mj * pair_value(base, &[xi], ti, &[*xj], tj);
            }
            s
        })
        .sum();
    Ok((2.0 * total).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Weight;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn imq() -> TiltedKernel {
        TiltedKernel::stationary(BaseKernel::imq(1.0, 0.5).unwrap()).unwrap()
    }

    fn tilted() -> TiltedKernel {
        TiltedKernel::tilted_imq(1.0).unwrap()
    }

    fn normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
        (-(x - mu) * (x - mu) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    /// The four-term definition, with derivatives of `k` taken by central
    /// differences.
    fn stein_by_differences(m: &ScoreModel, k: &TiltedKernel, x: f64, y: f64) -> f64 {
        let e = 1e-4;
        let kk = |a: f64, b: f64| k.eval(&[a], &[b]);
        let sx = m.score(&[x]).unwrap()[0];
        let sy = m.score(&[y]).unwrap()[0];
        let d1 = (kk(x + e, y) - kk(x - e, y)) / (2.0 * e);
        let d2 = (kk(x, y + e) - kk(x, y - e)) / (2.0 * e);
        let d12 = (kk(x + e, y + e) - kk(x + e, y - e) - kk(x - e, y + e) + kk(x - e, y - e))
            / (4.0 * e * e);
        sx * sy * kk(x, y) + sx * d2 + d1 * sy + d12
    }

    #[test]
    fn untilted_gaussian_diagonal() {
        let m = ScoreModel::standard_normal(1);
        assert_eq!(stein_kernel_eval(&m, &imq(), &[0.0], &[0.0]).unwrap(), 1.0);
        assert_eq!(stein_kernel_eval(&m, &imq(), &[2.0], &[2.0]).unwrap(), 5.0);
        let fd = stein_by_differences(&m, &imq(), 2.0, 2.0);
        assert!((fd - 5.0).abs() < 1e-5);
    }

    #[test]
    fn general_formula_matches_finite_differences() {
        let m = ScoreModel::gaussian(vec![0.3], vec![1.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in [imq(), tilted()] {
            for _ in 0..50 {
                let x = rng.random_range(-3.0..3.0);
                let y = rng.random_range(-3.0..3.0);
                let a = stein_kernel_eval(&m, &k, &[x], &[y]).unwrap();
                let b = stein_by_differences(&m, &k, x, y);
                assert!((a - b).abs() < 1e-5 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn tilted_diagonal_matches_closed_form() {
        // ‖s w‖² h(0) + 2⟨s w, ∇w⟩ h(0) + ‖∇w‖² h(0) - w² Δh(0), h(0) = 1,
        // Δh(0) = -1 for IMQ(1, ½) in one dimension.
        let m = ScoreModel::standard_normal(1);
        let k = tilted();
        for i in 0..1000 {
            let x = -25.0 + 50.0 * i as f64 / 999.0;
            let w = (1.0 + x * x).powf(-0.5);
            let gw = -x * (1.0 + x * x).powf(-1.5);
            let sw = -x * w;
            let expect = sw * sw + 2.0 * sw * gw + gw * gw + w * w;
            let got = stein_kernel_eval(&m, &k, &[x], &[x]).unwrap();
            assert!(
                (got - expect).abs() <= 1e-10 * expect.abs(),
                "{x}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn exact_symmetry() {
        let m = ScoreModel::mixture(vec![0.4, 0.6], vec![vec![0.0, 1.0], vec![-1.0, 2.0]]).unwrap();
        let k = TiltedKernel::new(
            BaseKernel::imq(0.7, 0.5).unwrap(),
            Weight::imq(vec![0.2, 0.0], 1.0, 0.5).unwrap(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-4.0..4.0)).collect();
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-4.0..4.0)).collect();
            assert_eq!(
                stein_kernel_eval(&m, &k, &x, &y).unwrap(),
                stein_kernel_eval(&m, &k, &y, &x).unwrap()
            );
        }
    }

    #[test]
    fn gram_examples_and_invariants() {
        let m = ScoreModel::standard_normal(1);
        let one = stein_gram(&m, &imq(), &DataSet::from_scalars(&[2.0]).unwrap()).unwrap();
        assert_eq!(one.values.dim(), (1, 1));
        assert_eq!(one.values[[0, 0]], 5.0);
        let two = stein_gram(&m, &imq(), &DataSet::from_scalars(&[0.0, 2.0]).unwrap()).unwrap();
        assert_eq!((two.values[[0, 0]], two.values[[1, 1]]), (1.0, 5.0));
        assert_eq!(two.diag_max, 5.0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m2 = ScoreModel::standard_normal(2);
        let data = DataSet::from_rows(
            &(0..20)
                .map(|_| (0..2).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        for k in [imq(), tilted()] {
            let g = stein_gram(&m2, &k, &data).unwrap();
            for i in 0..20 {
                assert!(g.values[[i, i]] >= -1e-10);
                for j in 0..20 {
                    assert_eq!(g.values[[i, j]], g.values[[j, i]]);
                    let cs = (g.values[[i, i]] * g.values[[j, j]]).sqrt();
                    assert!(g.values[[i, j]].abs() <= cs + 1e-8);
                }
            }
        }
    }

    #[test]
    fn gram_reports_offending_index() {
        let m = ScoreModel::PowerExponential { r: 1.5 };
        let data = DataSet::from_scalars(&[1.0, 0.0, 2.0]).unwrap();
        match stein_gram(&m, &imq(), &data) {
            Err(Error::GramEntry { i: 1, j: 1, source }) => {
                assert!(matches!(*source, Error::SingularPoint))
            }
            other => panic!("{other:?}"),
        }
        let m = ScoreModel::standard_normal(2);
        assert!(matches!(
            stein_gram(&m, &imq(), &data),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn v_and_u_statistics() {
        let g = SteinGram::from_matrix(ndarray::array![[3.0]]).unwrap();
        assert_eq!(ksd_v_stat(&g).unwrap(), 3.0);
        assert!(matches!(ksd_u_stat(&g), Err(Error::TooFewPoints { .. })));
        let g = SteinGram::from_matrix(Array2::from_elem((4, 4), 0.7)).unwrap();
        assert!((ksd_v_stat(&g).unwrap() - 0.7).abs() < 1e-15);
        assert!((ksd_u_stat(&g).unwrap() - 0.7).abs() < 1e-15);
        let g = SteinGram::from_matrix(ndarray::array![[1.0, 0.5], [0.5, 1.0]]).unwrap();
        assert_eq!(ksd_u_stat(&g).unwrap(), 0.5);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [3, 4] {
            let a = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
            let m = a.dot(&a.t());
            let g = SteinGram::from_matrix(m.clone()).unwrap();
            let (mut all, mut off) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    all += m[[i, j]];
                    if i != j {
                        off += m[[i, j]];
                    }
                }
            }
            let nf = n as f64;
            assert!((ksd_v_stat(&g).unwrap() - all / (nf * nf)).abs() < 1e-14);
            assert!((ksd_u_stat(&g).unwrap() - off / (nf * (nf - 1.0))).abs() < 1e-14);
        }
    }

    #[test]
    fn negative_v_stat_is_rejected() {
        let g = SteinGram::from_matrix(ndarray::array![[-1e-13]]).unwrap();
        assert_eq!(ksd_v_stat(&g).unwrap(), 0.0);
        let g = SteinGram::from_matrix(ndarray::array![[-1e-3]]).unwrap();
        assert!(matches!(ksd_v_stat(&g), Err(Error::NegativeVStat(_))));
    }

    #[test]
    fn tau_examples() {
        let m = ScoreModel::standard_normal(1);
        let data = DataSet::from_scalars(&[0.0, 2.0, -3.0]).unwrap();
        let t = tau_inf(&m, &imq(), &data, TauMethod::DataMax).unwrap();
        assert_eq!((t.value, t.argmax.clone()), (10.0, vec![-3.0]));
        let one = DataSet::from_scalars(&[1.5]).unwrap();
        let t1 = tau_inf(&m, &imq(), &one, TauMethod::DataMax).unwrap();
        assert_eq!(t1.value, 1.5 * 1.5 + 1.0);
        assert!(matches!(
            tau_inf(&m, &imq(), &DataSet::empty(1), TauMethod::DataMax),
            Err(Error::EmptyData)
        ));

        let dm = tau_inf(&m, &tilted(), &data, TauMethod::DataMax).unwrap();
        let gl = tau_inf(&m, &tilted(), &data, TauMethod::GridLocal { bound: 10.0 }).unwrap();
        assert!(gl.value >= dm.value);
        let again = stein_diag(&m, &tilted(), &gl.argmax).unwrap();
        assert!((again - gl.value).abs() <= 1e-12);
    }

    #[test]
    fn grid_local_finds_the_tilted_peak() {
        // u_p(x, x) = (1 + x²)⁻¹ (1 + (x + x(1 + x²)⁻¹)²); compare against a fine scan.
        let m = ScoreModel::standard_normal(1);
        let data = DataSet::from_scalars(&[0.1, -0.2, 0.3]).unwrap();
        let gl = tau_inf(&m, &tilted(), &data, TauMethod::GridLocal { bound: 10.0 }).unwrap();
        let mut scan: f64 = 0.0;
        for i in 0..=200_000 {
            let x = -10.0 + 20.0 * i as f64 / 200_000.0;
            scan = scan.max(stein_diag(&m, &tilted(), &[x]).unwrap());
        }
        assert!(gl.value >= scan - 1e-9, "{} vs {scan}", gl.value);
        assert!(gl.value <= scan + 1e-6);
    }

    #[test]
    fn quadrature_grid_validation() {
        assert!(matches!(
            QuadGrid::uniform(0.0, 1.0, 2),
            Err(Error::BadGrid(_))
        ));
        assert!(matches!(
            QuadGrid::uniform(0.0, 1.0, 4),
            Err(Error::BadGrid(_))
        ));
        let g = QuadGrid::segments(&[(-1.0, 0.0, 5), (0.0, 2.0, 7)]).unwrap();
        assert_eq!(g.nodes.len(), 11);
        assert!((g.integrate(|x| x * x) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn quadrature_vanishes_under_the_model() {
        let m = ScoreModel::standard_normal(1);
        let grid = QuadGrid::uniform(-10.0, 10.0, 2001).unwrap();
        let v = ksd_quadrature_1d(&m, |x| normal_pdf(x, 0.0, 1.0), &tilted(), &grid).unwrap();
        assert!(v.abs() < 1e-6, "{v}");
    }

    #[test]
    fn quadrature_increases_with_mean_shift() {
        let m = ScoreModel::standard_normal(1);
        let grid = QuadGrid::uniform(-12.0, 12.0, 2001).unwrap();
        let vals: Vec<f64> = [0.1, 0.2, 0.3]
            .iter()
            .map(|mu| ksd_quadrature_1d(&m, |x| normal_pdf(x, *mu, 1.0), &tilted(), &grid).unwrap())
            .collect();
        assert!(
            vals[0] > 0.0 && vals[0] < vals[1] && vals[1] < vals[2],
            "{vals:?}"
        );
    }

    #[test]
    fn quadrature_spike_limit() {
        let (eps, z, var): (f64, f64, f64) = (0.05, 3.0, 1e-4);
        let m = ScoreModel::standard_normal(1);
        let k = tilted();
        let s = var.sqrt();
        let grid = QuadGrid::segments(&[
            (-12.0, z - 12.0 * s, 2001),
            (z - 12.0 * s, z + 12.0 * s, 801),
            (z + 12.0 * s, 15.0, 1001),
        ])
        .unwrap();
        let q = |x: f64| (1.0 - eps) * normal_pdf(x, 0.0, 1.0) + eps * normal_pdf(x, z, var);
        let v = ksd_quadrature_1d(&m, q, &k, &grid).unwrap();
        let limit = eps * eps * stein_diag(&m, &k, &[z]).unwrap();
        assert!((v - limit).abs() < 0.05 * limit, "{v} vs {limit}");
    }

    #[test]
    fn v_u_identity() {
        let m = ScoreModel::standard_normal(1);
        let data = m.sample(50, 8).unwrap();
        let g = stein_gram(&m, &tilted(), &data).unwrap();
        let n = 50.0;
        let lhs = ksd_v_stat(&g).unwrap();
        let rhs = (n - 1.0) / n * ksd_u_stat(&g).unwrap() + g.values.diag().sum() / (n * n);
        assert!((lhs - rhs).abs() <= 1e-15 * lhs.abs().max(1e-3));
    }
}
