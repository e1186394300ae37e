//! Seeded experiment sweeps: for every grid value and repetition, draw data,
//! run a test, and aggregate rejection rates.
//!
//! Repetition `r` (counted from 1) of the grid value at sorted position `g`
//! uses data seed `mix(&[base_seed, g, r])` and bootstrap seed
//! `mix(&[data_seed, 1])`, so any single cell can be replayed on its own and
//! results do not depend on scheduling.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{BootstrapConfig, Estimator, Scheme, DEFAULT_B};
use crate::contam::{
    perturb_fraction, random_mixture_model, random_simplex, sample_alternative, sample_base,
    AlternativeSpec, ContaminationSpec,
};
use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::hypothesis::{decide_from_gram, TestKind, TestSpec};
use crate::kernels::{median_heuristic, BaseKernel, TiltedKernel, Weight};
use crate::models::ScoreModel;
use crate::radius::{resolve_theta, RadiusSpec};
use crate::rng::{mix, stream_rng};
use crate::stein::{stein_gram, tau_inf, TauEstimate, TauMethod};

/// Largest fraction of failed repetitions a cell tolerates.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub model: ModelConfig,
    pub kernel: KernelConfig,
    pub radius: RadiusSpec,
    pub alternative: AlternativeConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSection {
    pub name: String,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub n: usize,
    pub repetitions: usize,
    pub base_seed: u64,
    pub test: TestKind,
    pub estimator: Estimator,
    pub scheme: Scheme,
    pub tau: TauRule,
}

/// Where `τ̂_∞` comes from in each repetition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum TauRule {
    DataMax,
    GridLocal { bound: f64 },
    Fixed { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelConfig {
    StandardNormal {
        dim: usize,
    },
    Explicit {
        model: ScoreModel,
    },
    /// Mixture of `components` unit Gaussians with weights `∝ Uniform(0, 1)`
    /// and means `γ · Uniform(-2, 2)^dim`.
    RandomMixture {
        components: usize,
        dim: usize,
        gamma: f64,
        seed: u64,
    },
    /// RBM with `N(0, 1)` parameters.
    RandomRbm {
        dim: usize,
        hidden: usize,
        seed: u64,
    },
}

impl ModelConfig {
    pub fn build(&self) -> Result<ScoreModel> {
        match self {
            ModelConfig::StandardNormal { dim } => {
                if *dim == 0 {
                    return Err(Error::invalid("dimension must be at least 1"));
                }
                Ok(ScoreModel::standard_normal(*dim))
            }
            ModelConfig::Explicit { model } => {
                model.validate()?;
                Ok(model.clone())
            }
            ModelConfig::RandomMixture {
                components,
                dim,
                gamma,
                seed,
            } => random_mixture_model(*components, *dim, *gamma, *seed),
            ModelConfig::RandomRbm { dim, hidden, seed } => {
                ScoreModel::random_rbm(*dim, *hidden, *seed)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Bandwidth {
    /// `λ² = λ_med²`, recomputed on every sample.
    Median,
    Fixed {
        lambda2: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Imq,
    Se,
    SumImq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub bandwidth: Bandwidth,
    pub exponent: f64,
    pub lambda2s: Vec<f64>,
    pub half_bandwidth: bool,
    pub weight: Weight,
}

impl KernelConfig {
    /// The kernel for one sample. Returns it with the `λ²` used (`NaN` for
    /// sum kernels).
    pub fn build(&self, data: &DataSet) -> Result<(TiltedKernel, f64)> {
        if self.family == KernelFamily::SumImq {
            let base =
                BaseKernel::sum_imq(self.lambda2s.clone(), self.exponent, self.half_bandwidth)?;
            return Ok((TiltedKernel::new(base, self.weight.clone())?, f64::NAN));
        }
        let lambda2 = match self.bandwidth {
            Bandwidth::Median => median_heuristic(data)?.powi(2),
            Bandwidth::Fixed { lambda2 } => lambda2,
        };
        let base = match self.family {
            KernelFamily::Imq => BaseKernel::imq(lambda2, self.exponent)?,
            KernelFamily::Se => BaseKernel::squared_exponential(lambda2)?,
            KernelFamily::SumImq => unreachable!(),
        };
        Ok((TiltedKernel::new(base, self.weight.clone())?, lambda2))
    }
}

/// Outlier distributions with scalar parameters broadcast to every
/// coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContaminationConfig {
    Dirac { z: f64 },
    Gaussian { mean: f64, var: f64 },
}

impl ContaminationConfig {
    fn spec(&self, dim: usize) -> ContaminationSpec {
        match *self {
            ContaminationConfig::Dirac { z } => ContaminationSpec::DiracOutlier { z: vec![z; dim] },
            ContaminationConfig::Gaussian { mean, var } => ContaminationSpec::GaussianNoise {
                mean: vec![mean; dim],
                var,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AlternativeConfig {
    /// Data from the model itself.
    Null,
    /// Per-row Bernoulli(`eps`) mixing with the contamination.
    Huber {
        contamination: ContaminationConfig,
        eps: f64,
    },
    /// Exactly `round(eps · n)` model draws replaced by contamination.
    Perturb {
        contamination: ContaminationConfig,
        eps: f64,
    },
    ScaledT {
        nu: f64,
    },
    /// `N(mu0 e₁, I)`.
    MeanShift {
        mu0: f64,
    },
    /// The model's mixture components with weights drawn once from
    /// `ratio_seed`.
    MixtureRatio {
        ratio_seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    Eps,
    Z,
    Nu,
    Mu0,
    Gamma,
    N,
    Dim,
    /// The single parameter of the radius rule.
    Radius,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub csv: PathBuf,
    pub json: Option<PathBuf>,
}

impl OutputConfig {
    pub fn json_path(&self) -> PathBuf {
        self.json
            .clone()
            .unwrap_or_else(|| self.csv.with_extension("json"))
    }
}

fn as_count(v: f64, what: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::invalid(format!(
            "{what} must be a nonnegative integer, got {v}"
        )))
    }
}

impl ExperimentConfig {
    /// Grid values in ascending order. Cell seeds use these positions.
    pub fn sorted_grid(&self) -> Vec<f64> {
        let mut g = self.sweep.values.clone();
        g.sort_by(f64::total_cmp);
        g
    }

    /// The configuration with the sweep variable set to `value`.
    pub fn at(&self, value: f64) -> Result<ExperimentConfig> {
        let mut c = self.clone();
        let mismatch = |what: &str| {
            Error::invalid(format!(
                "sweep variable {:?} does not apply to this {what}",
                self.sweep.variable
            ))
        };
        match self.sweep.variable {
            SweepVariable::Eps => match &mut c.alternative {
                AlternativeConfig::Huber { eps, .. } | AlternativeConfig::Perturb { eps, .. } => {
                    *eps = value
                }
                _ => return Err(mismatch("alternative")),
            },
            SweepVariable::Z => match &mut c.alternative {
                AlternativeConfig::Huber { contamination, .. }
                | AlternativeConfig::Perturb { contamination, .. } => match contamination {
                    ContaminationConfig::Dirac { z } => *z = value,
                    ContaminationConfig::Gaussian { mean, .. } => *mean = value,
                },
                _ => return Err(mismatch("alternative")),
            },
            SweepVariable::Nu => match &mut c.alternative {
                AlternativeConfig::ScaledT { nu } => *nu = value,
                _ => return Err(mismatch("alternative")),
            },
            SweepVariable::Mu0 => match &mut c.alternative {
                AlternativeConfig::MeanShift { mu0 } => *mu0 = value,
                _ => return Err(mismatch("alternative")),
            },
            SweepVariable::Gamma => match &mut c.model {
                ModelConfig::RandomMixture { gamma, .. } => *gamma = value,
                _ => return Err(mismatch("model")),
            },
            SweepVariable::N => c.experiment.n = as_count(value, "n")?,
            SweepVariable::Dim => {
                let d = as_count(value, "dim")?;
                match &mut c.model {
                    ModelConfig::StandardNormal { dim }
                    | ModelConfig::RandomMixture { dim, .. }
                    | ModelConfig::RandomRbm { dim, .. } => *dim = d,
                    ModelConfig::Explicit { .. } => return Err(mismatch("model")),
                }
            }
            SweepVariable::Radius => {
                c.radius = match c.radius {
                    RadiusSpec::Explicit { .. } => RadiusSpec::Explicit { theta: value },
                    RadiusSpec::Huber { .. } => RadiusSpec::Huber { eps0: value },
                    RadiusSpec::DensityBand { .. } => RadiusSpec::DensityBand { delta0: value },
                    RadiusSpec::ScaledTTail { .. } => RadiusSpec::ScaledTTail { nu0: value },
                }
            }
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if !(e.alpha > 0.0 && e.alpha < 1.0) {
            return Err(Error::invalid(format!(
                "alpha must lie in (0, 1), got {}",
                e.alpha
            )));
        }
        if e.repetitions == 0 {
            return Err(Error::invalid("repetitions must be at least 1"));
        }
        if e.b == 0 {
            return Err(Error::invalid("B must be at least 1"));
        }
        if self.sweep.values.is_empty() {
            return Err(Error::invalid("the sweep grid is empty"));
        }
        if self.sweep.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sweep values must be finite"));
        }
        self.radius.validate()?;
        for v in &self.sweep.values {
            let c = self.at(*v)?;
            c.radius.validate()?;
            c.model.build()?;
            if c.experiment.n < 2 {
                return Err(Error::invalid("n must be at least 2"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub value: f64,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Means over completed repetitions.
    pub theta: f64,
    pub tau: f64,
    pub lambda: f64,
    pub n: usize,
    pub repetitions: usize,
    pub completed: usize,
    pub rejections: usize,
    pub failed: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionCurve {
    pub variable: SweepVariable,
    pub cells: Vec<CellResult>,
}

/// `rate ± 1.96 √(rate (1 - rate) / R)`, clamped to `[0, 1]`.
pub fn normal_ci(rate: f64, reps: usize) -> (f64, f64) {
    let half = 1.96 * (rate * (1.0 - rate) / reps as f64).sqrt();
    ((rate - half).clamp(0.0, 1.0), (rate + half).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy)]
struct RepResult {
    reject: bool,
    theta: f64,
    tau: f64,
    lambda: f64,
}

/// Data for one repetition of a resolved cell.
pub fn sample_cell(cell: &ExperimentConfig, model: &ScoreModel, seed: u64) -> Result<DataSet> {
    let n = cell.experiment.n;
    let dim = model.dim().unwrap_or(1);
    match &cell.alternative {
        AlternativeConfig::Null => sample_base(model, n, seed),
        AlternativeConfig::Huber { contamination, eps } => sample_alternative(
            &AlternativeSpec::Huber {
                base: model.clone(),
                contamination: contamination.spec(dim),
                eps: *eps,
            },
            n,
            seed,
        ),
        AlternativeConfig::Perturb { contamination, eps } => {
            let clean = sample_base(model, n, seed)?;
            perturb_fraction(&clean, *eps, &contamination.spec(dim), mix(&[seed, 2]))
        }
        AlternativeConfig::ScaledT { nu } => {
            sample_alternative(&AlternativeSpec::ScaledTData { nu: *nu }, n, seed)
        }
        AlternativeConfig::MeanShift { mu0 } => {
            let mut direction = vec![0.0; dim];
            direction[0] = 1.0;
            sample_alternative(
                &AlternativeSpec::MeanShift {
                    mu0: *mu0,
                    direction,
                },
                n,
                seed,
            )
        }
        AlternativeConfig::MixtureRatio { ratio_seed } => {
            let ScoreModel::GaussianMixture { weights, .. } = model else {
                return Err(Error::invalid(
                    "mixture-ratio alternative needs a mixture model",
                ));
            };
            let new_weights = random_simplex(weights.len(), &mut stream_rng(*ratio_seed, 0));
            sample_alternative(
                &AlternativeSpec::MixtureRatioPerturb {
                    base: model.clone(),
                    new_weights,
                },
                n,
                seed,
            )
        }
    }
}

fn run_rep(cell: &ExperimentConfig, model: &ScoreModel, seed: u64) -> Result<RepResult> {
    let e = &cell.experiment;
    let data = sample_cell(cell, model, seed)?;
    let (kernel, lambda2) = cell.kernel.build(&data)?;
    let gram = stein_gram(model, &kernel, &data)?;
    let tau = match e.tau {
        TauRule::DataMax => TauEstimate {
            value: gram.diag_max,
            method: TauMethod::DataMax,
            argmax: Vec::new(),
        },
        TauRule::GridLocal { bound } => {
            tau_inf(model, &kernel, &data, TauMethod::GridLocal { bound })?
        }
        TauRule::Fixed { value } => TauEstimate {
            value,
            method: TauMethod::DataMax,
            argmax: Vec::new(),
        },
    };
    let theta = match e.test {
        TestKind::Standard => 0.0,
        _ => resolve_theta(&cell.radius, &tau, model)?,
    };
    let boot = BootstrapConfig::new(e.scheme, e.b, mix(&[seed, 1]))?;
    let spec = TestSpec {
        kind: e.test,
        estimator: e.estimator,
    };
    let reject = decide_from_gram(&gram, spec, theta, e.alpha, &boot, tau.value)?;
    Ok(RepResult {
        reject,
        theta,
        tau: tau.value,
        lambda: lambda2.sqrt(),
    })
}

/// Runs every (grid value, repetition) pair and aggregates per grid value.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RejectionCurve> {
    config.validate()?;
    let grid = config.sorted_grid();
    let reps = config.experiment.repetitions;
    let cells: Vec<(ExperimentConfig, ScoreModel)> = grid
        .iter()
        .map(|v| {
            let c = config.at(*v)?;
            let m = c.model.build()?;
            Ok((c, m))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (1..=reps).map(move |r| (g, r)))
        .collect();
    let results: Vec<Result<RepResult>> = jobs
        .par_iter()
        .map(|&(g, r)| {
            let seed = mix(&[config.experiment.base_seed, g as u64, r as u64]);
            run_rep(&cells[g].0, &cells[g].1, seed)
        })
        .collect();

    let mut out = Vec::with_capacity(grid.len());
    for (g, value) in grid.iter().enumerate() {
        let chunk = &results[g * reps..(g + 1) * reps];
        let ok: Vec<&RepResult> = chunk.iter().filter_map(|r| r.as_ref().ok()).collect();
        let failed = reps - ok.len();
        let first_error = chunk
            .iter()
            .find_map(|r| r.as_ref().err())
            .map(|e| e.to_string());
        let n = cells[g].0.experiment.n;
        if failed as f64 > MAX_FAILURE_FRACTION * reps as f64 || ok.is_empty() {
            out.push(CellResult {
                value: *value,
                rate: f64::NAN,
                ci_low: f64::NAN,
                ci_high: f64::NAN,
                theta: f64::NAN,
                tau: f64::NAN,
                lambda: f64::NAN,
                n,
                repetitions: reps,
                completed: ok.len(),
                rejections: ok.iter().filter(|r| r.reject).count(),
                failed,
                error: first_error,
            });
            continue;
        }
        let k = ok.len() as f64;
        let rejections = ok.iter().filter(|r| r.reject).count();
        let rate = rejections as f64 / k;
        let (ci_low, ci_high) = normal_ci(rate, ok.len());
        out.push(CellResult {
            value: *value,
            rate,
            ci_low,
            ci_high,
            theta: ok.iter().map(|r| r.theta).sum::<f64>() / k,
            tau: ok.iter().map(|r| r.tau).sum::<f64>() / k,
            lambda: ok.iter().map(|r| r.lambda).sum::<f64>() / k,
            n,
            repetitions: reps,
            completed: ok.len(),
            rejections,
            failed,
            error: first_error,
        });
    }
    if out.iter().all(|c| c.rate.is_nan()) {
        let msg = out
            .iter()
            .find_map(|c| c.error.clone())
            .unwrap_or_else(|| "no repetition completed".into());
        return Err(Error::Experiment(format!("every cell aborted: {msg}")));
    }
    Ok(RejectionCurve {
        variable: config.sweep.variable,
        cells: out,
    })
}

pub const CSV_COMMENT: &str =
    "# ci_low/ci_high: normal-approximation 95% interval rate +/- 1.96*sqrt(rate*(1-rate)/R); theta, tau, lambda are means over repetitions";
pub const CSV_COLUMNS: [&str; 9] = [
    "value", "rate", "ci_low", "ci_high", "theta", "tau", "lambda", "n", "R",
];

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// The CSV text for a curve: a comment line, a header, one row per cell.
pub fn curve_csv(curve: &RejectionCurve) -> Result<String> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for c in &curve.cells {
        w.write_record([
            fmt(c.value),
            fmt(c.rate),
            fmt(c.ci_low),
            fmt(c.ci_high),
            fmt(c.theta),
            fmt(c.tau),
            fmt(c.lambda),
            c.n.to_string(),
            c.completed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let body = String::from_utf8(
        w.into_inner()
            .map_err(|e| Error::Experiment(e.to_string()))?,
    )
    .expect("csv output is UTF-8");
    Ok(format!("{CSV_COMMENT}\n{body}"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Experiment(e.to_string())
}

#[derive(Serialize)]
struct Sidecar<'a> {
    version: &'a str,
    confidence_interval: &'a str,
    config: &'a ExperimentConfig,
    curve: &'a RejectionCurve,
}

/// Writes the CSV and its JSON sidecar (configuration echo, library version
/// and per-cell counts).
pub fn persist(
    curve: &RejectionCurve,
    config: &ExperimentConfig,
    csv_path: &Path,
    json_path: &Path,
) -> Result<()> {
    std::fs::write(csv_path, curve_csv(curve)?).map_err(|e| Error::io(csv_path, e))?;
    let side = Sidecar {
        version: crate::VERSION,
        confidence_interval:
            "normal approximation, rate +/- 1.96*sqrt(rate*(1-rate)/R), clamped to [0, 1]",
        config,
        curve,
    };
    let mut text = serde_json::to_string_pretty(&side)?;
    text.push('\n');
    std::fs::write(json_path, text).map_err(|e| Error::io(json_path, e))
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub value: f64,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub theta: f64,
    pub tau: f64,
    pub lambda: f64,
    pub n: usize,
    pub reps: usize,
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurveRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i as u64 + 3;
        let f = |k: usize| -> Result<f64> {
            rec.get(k).and_then(|s| s.parse().ok()).ok_or(Error::Data {
                line,
                message: format!("bad field {}", CSV_COLUMNS[k]),
            })
        };
        rows.push(CurveRow {
            value: f(0)?,
            rate: f(1)?,
            ci_low: f(2)?,
            ci_high: f(3)?,
            theta: f(4)?,
            tau: f(5)?,
            lambda: f(6)?,
            n: f(7)? as usize,
            reps: f(8)? as usize,
        });
    }
    Ok(rows)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Reads one TOML table, remembering which keys were consumed so leftovers
/// can be reported.
struct Section<'a> {
    table: &'a toml::Table,
    seen: RefCell<BTreeSet<String>>,
}

impl<'a> Section<'a> {
    fn new(table: &'a toml::Table) -> Self {
        Self {
            table,
            seen: RefCell::new(BTreeSet::new()),
        }
    }

    fn raw(&self, key: &str) -> Option<&'a toml::Value> {
        self.seen.borrow_mut().insert(key.to_string());
        self.table.get(key)
    }

    fn opt_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(toml::Value::Float(v)) => Ok(Some(*v)),
            Some(toml::Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(_) => Err(Error::Schema(key.into())),
        }
    }

    fn f64(&self, key: &str) -> Result<f64> {
        self.opt_f64(key)?.ok_or_else(|| Error::Schema(key.into()))
    }

    fn opt_u64(&self, key: &str) -> Result<Option<u64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(toml::Value::Integer(v)) if *v >= 0 => Ok(Some(*v as u64)),
            Some(_) => Err(Error::Schema(key.into())),
        }
    }

    fn u64(&self, key: &str) -> Result<u64> {
        self.opt_u64(key)?.ok_or_else(|| Error::Schema(key.into()))
    }

    fn usize(&self, key: &str) -> Result<usize> {
        Ok(self.u64(key)? as usize)
    }

    fn opt_str(&self, key: &str) -> Result<Option<&'a str>> {
        match self.raw(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.as_str())),
            Some(_) => Err(Error::Schema(key.into())),
        }
    }

    fn str(&self, key: &str) -> Result<&'a str> {
        self.opt_str(key)?.ok_or_else(|| Error::Schema(key.into()))
    }

    fn opt_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.raw(key) {
            None => Ok(None),
            Some(toml::Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => Err(Error::Schema(key.into())),
        }
    }

    fn opt_vec(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => Ok(Some(value_vec(v).ok_or_else(|| Error::Schema(key.into()))?)),
        }
    }

    fn vec(&self, key: &str) -> Result<Vec<f64>> {
        self.opt_vec(key)?.ok_or_else(|| Error::Schema(key.into()))
    }

    fn matrix(&self, key: &str) -> Result<Vec<Vec<f64>>> {
        match self.raw(key) {
            Some(toml::Value::Array(rows)) => rows
                .iter()
                .map(|r| value_vec(r).ok_or_else(|| Error::Schema(key.into())))
                .collect(),
            _ => Err(Error::Schema(key.into())),
        }
    }

    /// Fails on the first key that was never asked for.
    fn finish(self) -> Result<()> {
        let seen = self.seen.borrow();
        match self.table.keys().find(|k| !seen.contains(*k)) {
            Some(k) => Err(Error::Schema(k.clone())),
            None => Ok(()),
        }
    }
}

fn value_vec(v: &toml::Value) -> Option<Vec<f64>> {
    v.as_array()?
        .iter()
        .map(|x| match x {
            toml::Value::Float(f) => Some(*f),
            toml::Value::Integer(i) => Some(*i as f64),
            _ => None,
        })
        .collect()
}

fn pick<T: Copy>(key: &str, value: &str, options: &[(&str, T)]) -> Result<T> {
    options
        .iter()
        .find(|(name, _)| *name == value)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::Schema(key.into()))
}

const SECTIONS: [&str; 7] = [
    "experiment",
    "model",
    "kernel",
    "radius",
    "alternative",
    "sweep",
    "output",
];

/// Parses a TOML experiment description. Missing, mistyped or unknown keys
/// produce [`Error::Schema`] naming the key.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let root: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Schema(e.message().to_string()))?;
    if let Some(k) = root.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
        return Err(Error::Schema(k.clone()));
    }
    let empty = toml::Table::new();
    let section = |name: &str| -> Result<&toml::Table> {
        match root.get(name) {
            Some(toml::Value::Table(t)) => Ok(t),
            Some(_) => Err(Error::Schema(name.into())),
            None if name == "radius" => Ok(&empty),
            None => Err(Error::Schema(name.into())),
        }
    };

    let s = Section::new(section("experiment")?);
    let test = pick(
        "test",
        s.opt_str("test")?.unwrap_or("standard"),
        &[
            ("standard", TestKind::Standard),
            ("robust", TestKind::RobustBootstrap),
            ("dev", TestKind::RobustDev),
        ],
    )?;
    let estimator = pick(
        "estimator",
        s.opt_str("estimator")?.unwrap_or("v"),
        &[("v", Estimator::V), ("u", Estimator::U)],
    )?;
    let scheme = pick(
        "scheme",
        s.opt_str("scheme")?.unwrap_or("weighted"),
        &[("weighted", Scheme::Weighted), ("wild", Scheme::Wild)],
    )?;
    let tau = match s.opt_str("tau")?.unwrap_or("datamax") {
        "datamax" => TauRule::DataMax,
        "grid" => TauRule::GridLocal {
            bound: s.f64("tau_bound")?,
        },
        "fixed" => TauRule::Fixed {
            value: s.f64("tau_value")?,
        },
        _ => return Err(Error::Schema("tau".into())),
    };
    let experiment = ExperimentSection {
        name: s.opt_str("name")?.unwrap_or("experiment").to_string(),
        alpha: s.f64("alpha")?,
        b: s.opt_u64("B")?.map_or(DEFAULT_B, |v| v as usize),
        n: s.usize("n")?,
        repetitions: s.usize("repetitions")?,
        base_seed: s.u64("base_seed")?,
        test,
        estimator,
        scheme,
        tau,
    };
    s.finish()?;

    let s = Section::new(section("model")?);
    let model = match s.str("type")? {
        "standard_normal" => ModelConfig::StandardNormal {
            dim: s.opt_u64("dim")?.unwrap_or(1) as usize,
        },
        "gaussian" => ModelConfig::Explicit {
            model: ScoreModel::Gaussian {
                mean: s.vec("mean")?,
                variances: s.vec("variances")?,
            },
        },
        "mixture" => ModelConfig::Explicit {
            model: ScoreModel::GaussianMixture {
                weights: s.vec("weights")?,
                means: s.matrix("means")?,
            },
        },
        "rbm" => ModelConfig::Explicit {
            model: ScoreModel::Rbm {
                weights: s.matrix("B")?,
                b: s.vec("b")?,
                c: s.vec("c")?,
            },
        },
        "power_exponential" => ModelConfig::Explicit {
            model: ScoreModel::PowerExponential { r: s.f64("r")? },
        },
        "kef" => ModelConfig::Explicit {
            model: ScoreModel::Kef { eta: s.vec("eta")? },
        },
        "random_mixture" => ModelConfig::RandomMixture {
            components: s.usize("components")?,
            dim: s.usize("dim")?,
            gamma: s.f64("gamma")?,
            seed: s.u64("seed")?,
        },
        "random_rbm" => ModelConfig::RandomRbm {
            dim: s.usize("dim")?,
            hidden: s.usize("hidden")?,
            seed: s.u64("seed")?,
        },
        _ => return Err(Error::Schema("type".into())),
    };
    s.finish()?;

    let s = Section::new(section("kernel")?);
    let family = pick(
        "family",
        s.str("family")?,
        &[
            ("imq", KernelFamily::Imq),
            ("se", KernelFamily::Se),
            ("sum_imq", KernelFamily::SumImq),
        ],
    )?;
    let bandwidth = match s.raw("lambda2") {
        None => Bandwidth::Median,
        Some(toml::Value::String(m)) if m == "median" => Bandwidth::Median,
        Some(toml::Value::Float(v)) => Bandwidth::Fixed { lambda2: *v },
        Some(toml::Value::Integer(v)) => Bandwidth::Fixed { lambda2: *v as f64 },
        Some(_) => return Err(Error::Schema("lambda2".into())),
    };
    let lambda2s = if family == KernelFamily::SumImq {
        s.vec("lambda2s")?
    } else {
        Vec::new()
    };
    let half_bandwidth = s.opt_bool("half_bandwidth")?.unwrap_or(false);
    let exponent = s.opt_f64("exponent")?.unwrap_or(0.5);
    let weight = match s.opt_str("weight")?.unwrap_or("unit") {
        "unit" => Weight::Unit,
        "imq" => Weight::Imq {
            center: s.opt_vec("weight_center")?.unwrap_or_default(),
            scale: s.opt_f64("weight_scale")?.unwrap_or(1.0),
            exponent: s.opt_f64("weight_exponent")?.unwrap_or(0.5),
        },
        _ => return Err(Error::Schema("weight".into())),
    };
    weight.validate()?;
    let kernel = KernelConfig {
        family,
        bandwidth,
        exponent,
        lambda2s,
        half_bandwidth,
        weight,
    };
    s.finish()?;

    let s = Section::new(section("radius")?);
    let radius = match s.opt_str("rule")?.unwrap_or("explicit") {
        "explicit" => RadiusSpec::Explicit {
            theta: s.opt_f64("theta")?.unwrap_or(0.0),
        },
        "huber" => RadiusSpec::Huber {
            eps0: s.f64("eps0")?,
        },
        "band" => RadiusSpec::DensityBand {
            delta0: s.f64("delta0")?,
        },
        "t_tail" => RadiusSpec::ScaledTTail { nu0: s.f64("nu0")? },
        _ => return Err(Error::Schema("rule".into())),
    };
    s.finish()?;

    let s = Section::new(section("alternative")?);
    let contamination = |s: &Section| -> Result<ContaminationConfig> {
        match s.str("contamination")? {
            "dirac" => Ok(ContaminationConfig::Dirac { z: s.f64("z")? }),
            "gaussian" => Ok(ContaminationConfig::Gaussian {
                mean: s.opt_f64("noise_mean")?.unwrap_or(0.0),
                var: s.f64("noise_var")?,
            }),
            _ => Err(Error::Schema("contamination".into())),
        }
    };
    let alternative = match s.str("type")? {
        "null" => AlternativeConfig::Null,
        "huber" => AlternativeConfig::Huber {
            contamination: contamination(&s)?,
            eps: s.f64("eps")?,
        },
        "perturb" => AlternativeConfig::Perturb {
            contamination: contamination(&s)?,
            eps: s.f64("eps")?,
        },
        "scaled_t" => AlternativeConfig::ScaledT { nu: s.f64("nu")? },
        "mean_shift" => AlternativeConfig::MeanShift { mu0: s.f64("mu0")? },
        "mixture_ratio" => AlternativeConfig::MixtureRatio {
            ratio_seed: s.u64("ratio_seed")?,
        },
        _ => return Err(Error::Schema("type".into())),
    };
    s.finish()?;

    let s = Section::new(section("sweep")?);
    let variable = pick(
        "variable",
        s.str("variable")?,
        &[
            ("eps", SweepVariable::Eps),
            ("z", SweepVariable::Z),
            ("nu", SweepVariable::Nu),
            ("mu0", SweepVariable::Mu0),
            ("gamma", SweepVariable::Gamma),
            ("n", SweepVariable::N),
            ("dim", SweepVariable::Dim),
            ("radius", SweepVariable::Radius),
        ],
    )?;
    let sweep = SweepConfig {
        variable,
        values: s.vec("values")?,
    };
    s.finish()?;

    let s = Section::new(section("output")?);
    let output = OutputConfig {
        csv: PathBuf::from(s.str("csv")?),
        json: s.opt_str("json")?.map(PathBuf::from),
    };
    s.finish()?;

    let cfg = ExperimentConfig {
        experiment,
        model,
        kernel,
        radius,
        alternative,
        sweep,
        output,
    };
    cfg.validate()?;
    Ok(cfg)
}
