//! Radius selection for KSD-ball nulls and the special functions it needs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ScoreModel;
use crate::stein::TauEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RadiusSpec {
    Explicit {
        theta: f64,
    },
    /// `θ = ε₀ √τ̂_∞`.
    Huber {
        eps0: f64,
    },
    /// `θ = δ₀ √τ̂_∞`.
    DensityBand {
        delta0: f64,
    },
    /// `θ = δ₀(ν₀) √τ̂_∞` with `δ₀(ν₀)` the L1 distance between the
    /// unit-variance scaled t and the standard normal.
    ScaledTTail {
        nu0: f64,
    },
}

impl RadiusSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RadiusSpec::Explicit { theta } if !(theta.is_finite() && theta >= 0.0) => Err(
                Error::invalid(format!("theta must be nonnegative, got {theta}")),
            ),
            RadiusSpec::Huber { eps0 } if !(0.0..=1.0).contains(&eps0) => Err(Error::invalid(
                format!("eps0 must lie in [0, 1], got {eps0}"),
            )),
            RadiusSpec::DensityBand { delta0 } if !(delta0.is_finite() && delta0 >= 0.0) => Err(
                Error::invalid(format!("delta0 must be nonnegative, got {delta0}")),
            ),
            RadiusSpec::ScaledTTail { nu0 } if !(nu0 > 2.0 && nu0.is_finite()) => {
                Err(Error::BadNu(nu0))
            }
            _ => Ok(()),
        }
    }

    /// True when the radius scales with `√τ̂_∞`.
    pub fn needs_tau(&self) -> bool {
        !matches!(self, RadiusSpec::Explicit { .. })
    }
}

/// Turns a radius rule into `θ`. The scaled-t rule is only defined for a
/// one-dimensional standard normal model.
pub fn resolve_theta(spec: &RadiusSpec, tau: &TauEstimate, model: &ScoreModel) -> Result<f64> {
    if let RadiusSpec::ScaledTTail { .. } = spec {
        if !model.is_standard_normal_1d() {
            return Err(Error::ModelMismatch(
                "the scaled-t tail radius needs a one-dimensional standard normal model".into(),
            ));
        }
    }
    resolve_theta_value(spec, tau.value)
}

/// [`resolve_theta`] from a bare `τ̂_∞` value, without the model check.
pub fn resolve_theta_value(spec: &RadiusSpec, tau: f64) -> Result<f64> {
    spec.validate()?;
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::invalid(format!(
            "tau must be nonnegative, got {tau}"
        )));
    }
    Ok(match *spec {
        RadiusSpec::Explicit { theta } => theta,
        RadiusSpec::Huber { eps0 } => eps0 * tau.sqrt(),
        RadiusSpec::DensityBand { delta0 } => delta0 * tau.sqrt(),
        RadiusSpec::ScaledTTail { nu0 } => scaled_t_delta(nu0)? * tau.sqrt(),
    })
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x) Γ(1 - x) = π / sin(πx).
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

const CF_MAX_ITER: usize = 300;
const CF_TOL: f64 = 1e-14;

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_TOL {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (-x).ln_1p();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Student-t CDF with `nu` degrees of freedom.
pub fn student_t_cdf(t: f64, nu: f64) -> f64 {
    let x = nu / (nu + t * t);
    let tail = 0.5 * incomplete_beta(0.5 * nu, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn check_nu(nu: f64) -> Result<()> {
    if nu > 2.0 && !nu.is_nan() {
        Ok(())
    } else {
        Err(Error::DomainError(format!(
            "degrees of freedom must exceed 2, got {nu}"
        )))
    }
}

/// CDF of `t_ν √((ν - 2)/ν)`, the unit-variance scaled t.
pub fn scaled_t_cdf(x: f64, nu: f64) -> Result<f64> {
    check_nu(nu)?;
    Ok(student_t_cdf(x * (nu / (nu - 2.0)).sqrt(), nu))
}

/// Density of the unit-variance scaled t,
/// `Z_ν (1 + x²/(ν - 2))^{-(ν+1)/2}`.
pub fn scaled_t_pdf(x: f64, nu: f64) -> Result<f64> {
    check_nu(nu)?;
    let ln_z = ln_gamma(0.5 * (nu + 1.0))
        - ln_gamma(0.5 * nu)
        - 0.5 * (std::f64::consts::PI * (nu - 2.0)).ln();
    Ok((ln_z - 0.5 * (nu + 1.0) * (x * x / (nu - 2.0)).ln_1p()).exp())
}

/// The two positive crossings of the scaled-t and standard normal densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TIntersections {
    pub a1: f64,
    pub a2: f64,
    pub nu: f64,
    pub residuals: (f64, f64),
}

pub const ROOT_SCAN_POINTS: usize = 10_000;
pub const ROOT_SCAN_RANGE: (f64, f64) = (1e-6, 60.0);

fn density_gap(x: f64, nu: f64) -> f64 {
    scaled_t_pdf(x, nu).expect("nu checked") - normal_pdf(x)
}

fn bisect(mut lo: f64, mut hi: f64, nu: f64) -> f64 {
    let mut glo = density_gap(lo, nu);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let gm = density_gap(mid, nu);
        if gm == 0.0 || (gm.abs() <= 1e-12 && hi - lo <= 1e-12) {
            return mid;
        }
        if (gm > 0.0) == (glo > 0.0) {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

pub fn find_intersections(nu: f64) -> Result<TIntersections> {
    check_nu(nu)?;
    if nu > 1e6 {
        return Err(Error::DomainError(format!(
            "nu = {nu} is beyond 1e6, where the two densities are numerically indistinguishable"
        )));
    }
    let (lo, hi) = ROOT_SCAN_RANGE;
    let ratio = (hi / lo).ln() / (ROOT_SCAN_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..ROOT_SCAN_POINTS)
        .map(|i| {
            if i == ROOT_SCAN_POINTS - 1 {
                hi
            } else {
                lo * (ratio * i as f64).exp()
            }
        })
        .collect();
    let mut roots = Vec::new();
    let mut prev = density_gap(grid[0], nu);
    for w in grid.windows(2) {
        let g = density_gap(w[1], nu);
        if g == 0.0 {
            roots.push(w[1]);
        } else if prev != 0.0 && (g > 0.0) != (prev > 0.0) {
            roots.push(bisect(w[0], w[1], nu));
        }
        prev = g;
    }
    if roots.len() != 2 {
        return Err(Error::RootCountError(roots.len()));
    }
    Ok(TIntersections {
        a1: roots[0],
        a2: roots[1],
        nu,
        residuals: (
            density_gap(roots[0], nu).abs(),
            density_gap(roots[1], nu).abs(),
        ),
    })
}

/// `δ₀(ν) = 4(F_ν(a₁) - Φ(a₁) + Φ(a₂) - F_ν(a₂))`.
pub fn scaled_t_delta(nu: f64) -> Result<f64> {
    let r = find_intersections(nu)?;
    Ok(4.0
        * (scaled_t_cdf(r.a1, nu)? - normal_cdf(r.a1) + normal_cdf(r.a2) - scaled_t_cdf(r.a2, nu)?))
}
