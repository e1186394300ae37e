//! Goodness-of-fit tests built on one Stein Gram: the standard KSD test, the
//! robust KSD test against a KSD ball of radius `θ`, its bootstrap-free
//! deviation-bound variant, and a U-statistic backend for the robust test.
//!
//! Every rejection uses a strict inequality.
//!
//! The U-statistic backend is experimental: when the bootstrap quantile is
//! negative the test never rejects and reports no threshold.

use serde::{Deserialize, Serialize};

use crate::bootstrap::{boot_quantile_with, quantile_precedes, BootstrapConfig, Estimator};
use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::kernels::TiltedKernel;
use crate::models::ScoreModel;
use crate::stein::{ksd_u_stat, ksd_v_stat, stein_gram, SteinGram, TauEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Standard,
    RobustBootstrap,
    RobustDev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    /// `D²` for the standard test, `Δ_θ` for the robust tests.
    pub statistic: f64,
    /// `None` when the U-statistic quantile is negative and the test
    /// abstains.
    pub threshold: Option<f64>,
    pub threshold_undefined: bool,
    pub reject: bool,
    pub theta: f64,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub b: Option<usize>,
    pub seed: Option<u64>,
    pub estimator: Estimator,
    pub test_kind: TestKind,
    /// The squared discrepancy estimate the statistic was built from.
    pub ksd_squared: f64,
    pub n: usize,
    pub version: String,
}

impl TestOutcome {
    fn new(kind: TestKind, estimator: Estimator, n: usize, alpha: f64, theta: f64) -> Self {
        Self {
            statistic: 0.0,
            threshold: None,
            threshold_undefined: false,
            reject: false,
            theta,
            alpha,
            b: None,
            seed: None,
            estimator,
            test_kind: kind,
            ksd_squared: 0.0,
            n,
            version: crate::VERSION.to_string(),
        }
    }
}

/// `Δ_θ = max(0, D - θ)`.
pub fn delta_stat(d: f64, theta: f64) -> f64 {
    (d - theta).max(0.0)
}

/// `γ_n = √(τ/n) + √(-2τ ln α / n)`.
pub fn dev_threshold(tau: f64, n: usize, alpha: f64) -> f64 {
    let n = n as f64;
    (tau / n).sqrt() + (-2.0 * tau * alpha.ln() / n).sqrt()
}

fn check_common(n: usize, alpha: f64, theta: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if !(theta.is_finite() && theta >= 0.0) {
        return Err(Error::invalid(format!(
            "theta must be nonnegative, got {theta}"
        )));
    }
    Ok(())
}

/// Rejects when `D²_V > q²_{B,1-α}`.
pub fn standard_from_gram(
    gram: &SteinGram,
    alpha: f64,
    boot: &BootstrapConfig,
) -> Result<TestOutcome> {
    check_common(gram.n(), alpha, 0.0)?;
    let d2 = ksd_v_stat(gram)?;
    let q = boot_quantile_with(gram, d2, boot, alpha, Estimator::V)?;
    let mut out = TestOutcome::new(TestKind::Standard, Estimator::V, gram.n(), alpha, 0.0);
    out.statistic = d2;
    out.ksd_squared = d2;
    out.threshold = Some(q.q_squared);
    out.reject = d2 > q.q_squared;
    out.b = Some(boot.b);
    out.seed = Some(boot.seed);
    Ok(out)
}

pub fn standard_ksd_test(
    data: &DataSet,
    model: &ScoreModel,
    kernel: &TiltedKernel,
    alpha: f64,
    boot: &BootstrapConfig,
) -> Result<TestOutcome> {
    check_common(data.n(), alpha, 0.0)?;
    standard_from_gram(&stein_gram(model, kernel, data)?, alpha, boot)
}

/// Rejects when `Δ_θ = max(0, √D²_V - θ) > √max(0, q²_{B,1-α})`.
pub fn robust_from_gram(
    gram: &SteinGram,
    theta: f64,
    alpha: f64,
    boot: &BootstrapConfig,
) -> Result<TestOutcome> {
    check_common(gram.n(), alpha, theta)?;
    let d2 = ksd_v_stat(gram)?;
    let q = boot_quantile_with(gram, d2, boot, alpha, Estimator::V)?;
    let delta = delta_stat(d2.sqrt(), theta);
    let mut out = TestOutcome::new(
        TestKind::RobustBootstrap,
        Estimator::V,
        gram.n(),
        alpha,
        theta,
    );
    out.statistic = delta;
    out.ksd_squared = d2;
    out.threshold = Some(q.q);
    out.reject = delta > q.q;
    out.b = Some(boot.b);
    out.seed = Some(boot.seed);
    Ok(out)
}

pub fn robust_ksd_test(
    data: &DataSet,
    model: &ScoreModel,
    kernel: &TiltedKernel,
    theta: f64,
    alpha: f64,
    boot: &BootstrapConfig,
) -> Result<TestOutcome> {
    check_common(data.n(), alpha, theta)?;
    robust_from_gram(&stein_gram(model, kernel, data)?, theta, alpha, boot)
}

/// Rejects when `Δ_θ > γ_n`. No bootstrap and no randomness.
pub fn robust_dev_from_gram(
    gram: &SteinGram,
    theta: f64,
    alpha: f64,
    tau: f64,
) -> Result<TestOutcome> {
    let n = gram.n();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::invalid(format!(
            "tau must be finite and nonnegative, got {tau}"
        )));
    }
    if !(theta.is_finite() && theta >= 0.0) {
        return Err(Error::invalid(format!(
            "theta must be nonnegative, got {theta}"
        )));
    }
    let d2 = ksd_v_stat(gram)?;
    let delta = delta_stat(d2.sqrt(), theta);
    let gamma = dev_threshold(tau, n, alpha);
    let mut out = TestOutcome::new(TestKind::RobustDev, Estimator::V, n, alpha, theta);
    out.statistic = delta;
    out.ksd_squared = d2;
    out.threshold = Some(gamma);
    out.reject = delta > gamma;
    Ok(out)
}

pub fn robust_ksd_dev_test(
    data: &DataSet,
    model: &ScoreModel,
    kernel: &TiltedKernel,
    theta: f64,
    alpha: f64,
    tau: &TauEstimate,
) -> Result<TestOutcome> {
    robust_dev_from_gram(&stein_gram(model, kernel, data)?, theta, alpha, tau.value)
}

/// U-statistic robust test. A negative bootstrap quantile means the test
/// never rejects; otherwise it rejects when
/// `max(0, √max(0, D²_U) - θ) > √q²`.
pub fn robust_ustat_from_gram(
    gram: &SteinGram,
    theta: f64,
    alpha: f64,
    boot: &BootstrapConfig,
) -> Result<TestOutcome> {
    check_common(gram.n(), alpha, theta)?;
    let d2 = ksd_u_stat(gram)?;
    let q = boot_quantile_with(gram, d2, boot, alpha, Estimator::U)?;
    let delta = delta_stat(d2.max(0.0).sqrt(), theta);
    let mut out = TestOutcome::new(
        TestKind::RobustBootstrap,
        Estimator::U,
        gram.n(),
        alpha,
        theta,
    );
    out.statistic = delta;
    out.ksd_squared = d2;
    out.b = Some(boot.b);
    out.seed = Some(boot.seed);
    if q.q_squared < 0.0 {
        out.threshold_undefined = true;
        out.reject = false;
    } else {
        out.threshold = Some(q.q);
        out.reject = delta > q.q;
    }
    Ok(out)
}

pub fn robust_ksd_test_ustat(
    data: &DataSet,
    model: &ScoreModel,
    kernel: &TiltedKernel,
    theta: f64,
    alpha: f64,
    boot: &BootstrapConfig,
) -> Result<TestOutcome> {
    check_common(data.n(), alpha, theta)?;
    robust_ustat_from_gram(&stein_gram(model, kernel, data)?, theta, alpha, boot)
}

/// Which test to run, for callers that choose at run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSpec {
    pub kind: TestKind,
    #[serde(default)]
    pub estimator: Estimator,
}

/// The full outcome of the chosen test. A standard test with the U backend
/// runs the robust U-statistic test at `θ = 0`.
pub fn run_from_gram(
    gram: &SteinGram,
    spec: TestSpec,
    theta: f64,
    alpha: f64,
    boot: &BootstrapConfig,
    tau: f64,
) -> Result<TestOutcome> {
    match (spec.kind, spec.estimator) {
        (TestKind::Standard, Estimator::V) => standard_from_gram(gram, alpha, boot),
        (TestKind::Standard, Estimator::U) => {
            let mut out = robust_ustat_from_gram(gram, 0.0, alpha, boot)?;
            out.test_kind = TestKind::Standard;
            Ok(out)
        }
        (TestKind::RobustBootstrap, Estimator::V) => robust_from_gram(gram, theta, alpha, boot),
        (TestKind::RobustBootstrap, Estimator::U) => {
            robust_ustat_from_gram(gram, theta, alpha, boot)
        }
        (TestKind::RobustDev, _) => robust_dev_from_gram(gram, theta, alpha, tau),
    }
}

/// Only the decision of [`run_from_gram`], computed with as few bootstrap
/// replicates as settle it. Always equal to `run_from_gram(..).reject`.
pub fn decide_from_gram(
    gram: &SteinGram,
    spec: TestSpec,
    theta: f64,
    alpha: f64,
    boot: &BootstrapConfig,
    tau: f64,
) -> Result<bool> {
    match (spec.kind, spec.estimator) {
        (TestKind::Standard, Estimator::V) => {
            check_common(gram.n(), alpha, 0.0)?;
            let d2 = ksd_v_stat(gram)?;
            quantile_precedes(gram, d2, boot, alpha, Estimator::V, |v| v < d2)
        }
        (TestKind::RobustBootstrap, Estimator::V) => {
            check_common(gram.n(), alpha, theta)?;
            let d2 = ksd_v_stat(gram)?;
            let delta = delta_stat(d2.sqrt(), theta);
            if delta == 0.0 {
                return Ok(false);
            }
            quantile_precedes(gram, d2, boot, alpha, Estimator::V, |v| {
                v.max(0.0).sqrt() < delta
            })
        }
        _ => Ok(run_from_gram(gram, spec, theta, alpha, boot, tau)?.reject),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::BaseKernel;
    use ndarray::Array2;

    fn boot(seed: u64) -> BootstrapConfig {
        BootstrapConfig::weighted(200, seed).unwrap()
    }

    #[test]
    fn delta_examples() {
        assert!((delta_stat(0.5, 0.2) - 0.3).abs() < 1e-16);
        assert_eq!(delta_stat(0.1, 0.2), 0.0);
        assert_eq!(delta_stat(0.7, 0.0), 0.7);
    }

    #[test]
    fn dev_threshold_examples() {
        let direct = 0.1 + (2.0 * 20f64.ln() / 100.0).sqrt();
        assert!((dev_threshold(1.0, 100, 0.05) - direct).abs() < 1e-15);
        assert!((dev_threshold(1.0, 100, 0.05) - 0.344776).abs() < 2e-6);
        let limit = dev_threshold(2.0, 50, 1.0 - 1e-15);
        assert!((limit - (2.0f64 / 50.0).sqrt()).abs() < 1e-7);
    }

    #[test]
    fn zero_gram_never_rejects() {
        let g = SteinGram::from_matrix(Array2::zeros((5, 5))).unwrap();
        let s = standard_from_gram(&g, 0.05, &boot(1)).unwrap();
        assert_eq!(
            (s.statistic, s.threshold, s.reject),
            (0.0, Some(0.0), false)
        );
        assert!(!robust_from_gram(&g, 0.0, 0.05, &boot(1)).unwrap().reject);
        assert!(
            !robust_ustat_from_gram(&g, 0.0, 0.05, &boot(1))
                .unwrap()
                .reject
        );
        assert!(!robust_dev_from_gram(&g, 0.0, 0.05, 1.0).unwrap().reject);
    }

    #[test]
    fn theta_above_d_never_rejects() {
        let m = ScoreModel::standard_normal(1);
        let data =
            DataSet::from_scalars(&(0..40).map(|i| 2.0 + 0.01 * i as f64).collect::<Vec<_>>())
                .unwrap();
        let k = TiltedKernel::tilted_imq(1.0).unwrap();
        let g = stein_gram(&m, &k, &data).unwrap();
        let d = ksd_v_stat(&g).unwrap().sqrt();
        let out = robust_from_gram(&g, d * 1.01, 0.05, &boot(3)).unwrap();
        assert_eq!(out.statistic, 0.0);
        assert!(!out.reject);
        assert!(standard_from_gram(&g, 0.05, &boot(3)).unwrap().reject);
    }

    #[test]
    fn reduction_and_fast_path() {
        let m = ScoreModel::standard_normal(1);
        let k = TiltedKernel::stationary(BaseKernel::imq(1.0, 0.5).unwrap()).unwrap();
        for seed in 0..30u64 {
            let shift = 0.05 * (seed % 6) as f64;
            let data = ScoreModel::gaussian(vec![shift], vec![1.0])
                .unwrap()
                .sample(60, seed)
                .unwrap();
            let g = stein_gram(&m, &k, &data).unwrap();
            let b = boot(seed);
            let s = standard_from_gram(&g, 0.05, &b).unwrap();
            let r = robust_from_gram(&g, 0.0, 0.05, &b).unwrap();
            assert_eq!(s.reject, r.reject);
            for (kind, est) in [
                (TestKind::Standard, Estimator::V),
                (TestKind::RobustBootstrap, Estimator::V),
                (TestKind::RobustBootstrap, Estimator::U),
                (TestKind::Standard, Estimator::U),
                (TestKind::RobustDev, Estimator::V),
            ] {
                let spec = TestSpec {
                    kind,
                    estimator: est,
                };
                for theta in [0.0, 0.02, 0.1] {
                    let full = run_from_gram(&g, spec, theta, 0.05, &b, 2.0)
                        .unwrap()
                        .reject;
                    let fast = decide_from_gram(&g, spec, theta, 0.05, &b, 2.0).unwrap();
                    assert_eq!(full, fast, "{spec:?} theta {theta} seed {seed}");
                }
            }
        }
    }

    #[test]
    fn outcome_metadata() {
        let g = SteinGram::from_matrix(ndarray::array![[1.0, 0.2], [0.2, 1.0]]).unwrap();
        let s = standard_from_gram(&g, 0.05, &boot(4)).unwrap();
        assert_eq!(s.theta, 0.0);
        assert_eq!(s.b, Some(200));
        assert_eq!(s.seed, Some(4));
        let d = robust_dev_from_gram(&g, 0.1, 0.05, 1.0).unwrap();
        assert_eq!((d.b, d.seed), (None, None));
        let json = serde_json::to_value(&s).unwrap();
        assert_eq!(json["test_kind"], "standard");
        assert_eq!(json["B"], 200);
    }

    #[test]
    fn too_few_points() {
        let g = SteinGram::from_matrix(ndarray::array![[1.0]]).unwrap();
        assert!(matches!(
            standard_from_gram(&g, 0.05, &boot(0)),
            Err(Error::TooFewPoints { .. })
        ));
        assert!(matches!(
            robust_ustat_from_gram(&g, 0.0, 0.05, &boot(0)),
            Err(Error::TooFewPoints { .. })
        ));
        assert!(robust_dev_from_gram(&g, 0.0, 0.05, 1.0).is_ok());
    }
}
