//! `robust-ksd`: kernel Stein discrepancy tests from the command line.
//!
//! Exit codes: 0 when a result was produced (including "reject"), 1 for
//! usage errors, 2 for runtime or data errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use robust_ksd::bootstrap::{BootstrapConfig, Estimator, Scheme, DEFAULT_B};
use robust_ksd::harness::{load_config, persist, run_experiment};
use robust_ksd::hypothesis::{run_from_gram, TestKind, TestSpec};
use robust_ksd::kernels::{median_heuristic, BaseKernel, TiltedKernel, Weight};
use robust_ksd::models::{fit_kef_min_ksd, Standardization};
use robust_ksd::radius::{resolve_theta, resolve_theta_value, RadiusSpec};
use robust_ksd::stein::{ksd_u_stat, ksd_v_stat, stein_gram, tau_inf, TauEstimate, TauMethod};
use robust_ksd::{DataSet, Error, ScoreModel};

const SEED_ENV: &str = "ROBUST_KSD_SEED";

#[derive(Parser)]
#[command(
    name = "robust-ksd",
    version,
    about = "Robust kernel Stein discrepancy goodness-of-fit tests"
)]
struct Cli {
    /// Worker threads for Gram and bootstrap computations.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a goodness-of-fit test and print the outcome as JSON.
    Test(TestArgs),
    /// Run an experiment sweep from a TOML configuration.
    Experiment(ExperimentArgs),
    /// Print the KSD estimate.
    Ksd(KsdArgs),
    /// Print the radius θ for a rule and τ̂_∞.
    Radius(RadiusArgs),
    /// Print the Stein-kernel supremum estimate τ̂_∞.
    Tau(TauArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Headerless CSV, one observation per row.
    #[arg(long)]
    data: PathBuf,
    /// Preset (gaussian, mixture[:k,gamma,seed], rbm[:hidden,seed],
    /// kef[:L], power-exp[:r]), inline JSON, or a JSON file.
    #[arg(long, default_value = "gaussian")]
    model: String,
    #[command(flatten)]
    kernel: KernelArgs,
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, value_enum, default_value_t = KernelPreset::TiltedImq)]
    kernel: KernelPreset,
    /// Squared bandwidth, or `median` for the median heuristic.
    #[arg(long, default_value = "median")]
    lambda2: String,
    /// Comma-separated squared bandwidths for `sum-imq`.
    #[arg(long, value_delimiter = ',')]
    lambda2s: Vec<f64>,
    /// IMQ exponent `b` in `(1 + r²/λ²)^(-b)`.
    #[arg(long, default_value_t = 0.5)]
    exponent: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelPreset {
    Imq,
    TiltedImq,
    Se,
    SumImq,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    V,
    U,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::V => Estimator::V,
            EstimatorArg::U => Estimator::U,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Weighted,
    Wild,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Datamax,
    Grid,
}

#[derive(Args)]
struct TauChoice {
    #[arg(long, value_enum, default_value_t = MethodArg::Datamax)]
    method: MethodArg,
    /// Search radius for `--method grid`.
    #[arg(long)]
    bound: Option<f64>,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Radius rule: explicit:θ, huber:ε₀, band:δ₀ or t-tail:ν₀. Without it
    /// the standard test runs.
    #[arg(long)]
    theta_spec: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long = "B", default_value_t = DEFAULT_B)]
    b: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = EstimatorArg::V)]
    estimator: EstimatorArg,
    #[arg(long, value_enum, default_value_t = SchemeArg::Weighted)]
    scheme: SchemeArg,
    /// Use the closed-form deviation threshold instead of the bootstrap.
    #[arg(long)]
    dev: bool,
    #[command(flatten)]
    tau: TauChoice,
    /// Also write the Stein Gram matrix to this CSV file.
    #[arg(long)]
    dump_gram: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the configured CSV path (the JSON sidecar follows it).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KsdArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value_t = EstimatorArg::V)]
    estimator: EstimatorArg,
    #[arg(long)]
    dump_gram: Option<PathBuf>,
}

#[derive(Args)]
struct RadiusArgs {
    /// Radius rule: explicit:θ, huber:ε₀, band:δ₀ or t-tail:ν₀.
    #[arg(long)]
    spec: String,
    /// τ̂_∞ to use. Without it `--data` is required and τ̂_∞ is estimated.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "gaussian")]
    model: String,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    method: TauChoice,
}

#[derive(Args)]
struct TauArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    method: TauChoice,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn bad_flag(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

type CliResult<T> = std::result::Result<T, Failure>;

enum ModelChoice {
    Gaussian,
    Mixture { k: usize, gamma: f64, seed: u64 },
    Rbm { hidden: usize, seed: u64 },
    Kef { basis: usize },
    PowerExp { r: f64 },
    Explicit(ScoreModel),
    File(PathBuf),
}

fn preset_params(rest: Option<&str>, defaults: &[f64]) -> CliResult<Vec<f64>> {
    let mut out = defaults.to_vec();
    if let Some(rest) = rest {
        let given: Vec<&str> = rest.split(',').collect();
        if given.len() > defaults.len() {
            return Err(usage(format!("too many preset parameters in {rest:?}")));
        }
        for (slot, s) in out.iter_mut().zip(given) {
            *slot = s
                .trim()
                .parse()
                .map_err(|_| usage(format!("bad preset parameter {s:?}")))?;
        }
    }
    Ok(out)
}

fn count(v: f64, what: &str) -> CliResult<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(usage(format!("{what} must be a positive integer, got {v}")))
    }
}

fn parse_model(s: &str) -> CliResult<ModelChoice> {
    let s = s.trim();
    if s.starts_with('{') {
        let m: ScoreModel =
            serde_json::from_str(s).map_err(|e| usage(format!("bad model JSON: {e}")))?;
        m.validate().map_err(bad_flag)?;
        return Ok(ModelChoice::Explicit(m));
    }
    let (name, rest) = match s.split_once(':') {
        Some((a, b)) => (a, Some(b)),
        None => (s, None),
    };
    Ok(match name {
        "gaussian" if rest.is_none() => ModelChoice::Gaussian,
        "mixture" => {
            let p = preset_params(rest, &[5.0, 1.0, 0.0])?;
            ModelChoice::Mixture {
                k: count(p[0], "mixture components")?,
                gamma: p[1],
                seed: p[2] as u64,
            }
        }
        "rbm" => {
            let p = preset_params(rest, &[3.0, 0.0])?;
            ModelChoice::Rbm {
                hidden: count(p[0], "latent width")?,
                seed: p[1] as u64,
            }
        }
        "kef" => {
            let p = preset_params(rest, &[5.0])?;
            ModelChoice::Kef {
                basis: count(p[0], "basis size")?,
            }
        }
        "power-exp" => {
            let p = preset_params(rest, &[2.0])?;
            if !(p[0] > 0.0) {
                return Err(usage("power-exp exponent must be positive"));
            }
            ModelChoice::PowerExp { r: p[0] }
        }
        _ if s.ends_with(".json") => ModelChoice::File(PathBuf::from(s)),
        _ => return Err(usage(format!("unknown model {s:?}"))),
    })
}

fn parse_radius(s: &str) -> CliResult<RadiusSpec> {
    let (name, value) = s
        .split_once(':')
        .ok_or_else(|| usage(format!("radius rule {s:?} must look like name:value")))?;
    let v: f64 = value
        .trim()
        .parse()
        .map_err(|_| usage(format!("bad radius parameter {value:?}")))?;
    let spec = match name {
        "explicit" => RadiusSpec::Explicit { theta: v },
        "huber" => RadiusSpec::Huber { eps0: v },
        "band" => RadiusSpec::DensityBand { delta0: v },
        "t-tail" => RadiusSpec::ScaledTTail { nu0: v },
        _ => return Err(usage(format!("unknown radius rule {name:?}"))),
    };
    spec.validate().map_err(bad_flag)?;
    Ok(spec)
}

enum Bandwidth {
    Median,
    Fixed(f64),
}

struct KernelChoice {
    preset: KernelPreset,
    bandwidth: Bandwidth,
    lambda2s: Vec<f64>,
    exponent: f64,
}

fn parse_kernel(k: &KernelArgs) -> CliResult<KernelChoice> {
    let bandwidth = match k.lambda2.as_str() {
        "median" => Bandwidth::Median,
        s => {
            let v: f64 = s
                .parse()
                .map_err(|_| usage(format!("bad --lambda2 {s:?}")))?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(usage("--lambda2 must be positive"));
            }
            Bandwidth::Fixed(v)
        }
    };
    if !(k.exponent > 0.0 && k.exponent.is_finite()) {
        return Err(usage("--exponent must be positive"));
    }
    if matches!(k.kernel, KernelPreset::SumImq) && k.lambda2s.is_empty() {
        return Err(usage("sum-imq needs --lambda2s"));
    }
    Ok(KernelChoice {
        preset: k.kernel,
        bandwidth,
        lambda2s: k.lambda2s.clone(),
        exponent: k.exponent,
    })
}

fn parse_method(m: &TauChoice) -> CliResult<TauMethod> {
    match (m.method, m.bound) {
        (MethodArg::Datamax, None) => Ok(TauMethod::DataMax),
        (MethodArg::Datamax, Some(_)) => Err(usage("--bound only applies to --method grid")),
        (MethodArg::Grid, Some(bound)) if bound > 0.0 && bound.is_finite() => {
            Ok(TauMethod::GridLocal { bound })
        }
        (MethodArg::Grid, _) => Err(usage("--method grid needs a positive --bound")),
    }
}

fn check_alpha(alpha: f64) -> CliResult<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(usage(format!("--alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Model, kernel and the data they are evaluated on. The KEF preset fits
/// to the data and works on its standardized version.
struct Setup {
    model: ScoreModel,
    kernel: TiltedKernel,
    data: DataSet,
    lambda2: Option<f64>,
    standardization: Option<Standardization>,
}

fn build_kernel(choice: &KernelChoice, data: &DataSet) -> CliResult<(TiltedKernel, Option<f64>)> {
    if let KernelPreset::SumImq = choice.preset {
        let base = BaseKernel::sum_imq(choice.lambda2s.clone(), choice.exponent, false)?;
        return Ok((TiltedKernel::stationary(base)?, None));
    }
    let lambda2 = match choice.bandwidth {
        Bandwidth::Median => median_heuristic(data)?.powi(2),
        Bandwidth::Fixed(v) => v,
    };
    let kernel = match choice.preset {
        KernelPreset::Imq => TiltedKernel::stationary(BaseKernel::imq(lambda2, choice.exponent)?)?,
        KernelPreset::TiltedImq => TiltedKernel::new(
            BaseKernel::imq(lambda2, choice.exponent)?,
            Weight::imq(Vec::new(), 1.0, 0.5)?,
        )?,
        KernelPreset::Se => TiltedKernel::stationary(BaseKernel::squared_exponential(lambda2)?)?,
        KernelPreset::SumImq => unreachable!(),
    };
    Ok((kernel, Some(lambda2)))
}

fn setup(model: &ModelChoice, kernel: &KernelChoice, data: DataSet) -> CliResult<Setup> {
    let d = data.dim();
    let (model, data, standardization) = match model {
        ModelChoice::Gaussian => (ScoreModel::standard_normal(d), data, None),
        ModelChoice::Mixture { k, gamma, seed } => (
            robust_ksd::contam::random_mixture_model(*k, d, *gamma, *seed)?,
            data,
            None,
        ),
        ModelChoice::Rbm { hidden, seed } => {
            (ScoreModel::random_rbm(d, *hidden, *seed)?, data, None)
        }
        ModelChoice::PowerExp { r } => (ScoreModel::PowerExponential { r: *r }, data, None),
        ModelChoice::Explicit(m) => (m.clone(), data, None),
        ModelChoice::File(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
            let m: ScoreModel = serde_json::from_str(&text).map_err(|e| {
                Failure::Runtime(format!("{}: bad model JSON: {e}", path.display()))
            })?;
            m.validate()?;
            (m, data, None)
        }
        ModelChoice::Kef { basis } => {
            let st = Standardization::of(&data)?;
            let z = st.apply(&data);
            let (fit_kernel, _) = build_kernel(kernel, &z)?;
            let fit = fit_kef_min_ksd(&data, &fit_kernel, *basis, None)?;
            (fit.model(), z, Some(st))
        }
    };
    if let Some(md) = model.dim() {
        if md != data.dim() {
            return Err(Failure::Runtime(format!(
                "model dimension {md} does not match data dimension {}",
                data.dim()
            )));
        }
    }
    let (kernel, lambda2) = build_kernel(kernel, &data)?;
    Ok(Setup {
        model,
        kernel,
        data,
        lambda2,
        standardization,
    })
}

fn read_data(path: &PathBuf) -> CliResult<DataSet> {
    Ok(DataSet::read_csv(path)?)
}

fn print(v: &Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v).expect("JSON values serialize");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn seed_override(seed: u64) -> CliResult<u64> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| usage(format!("{SEED_ENV} must be an unsigned integer, got {s:?}"))),
        Err(_) => Ok(seed),
    }
}

fn cmd_test(a: TestArgs) -> CliResult<()> {
    check_alpha(a.alpha)?;
    if a.b == 0 {
        return Err(usage("--B must be at least 1"));
    }
    let model = parse_model(&a.model.model)?;
    let kernel = parse_kernel(&a.model.kernel)?;
    let radius = a.theta_spec.as_deref().map(parse_radius).transpose()?;
    let method = parse_method(&a.tau)?;
    if a.dev && radius.is_none() {
        return Err(usage("--dev needs --theta-spec"));
    }
    let seed = seed_override(a.seed)?;
    let scheme = match a.scheme {
        SchemeArg::Weighted => Scheme::Weighted,
        SchemeArg::Wild => Scheme::Wild,
    };
    let boot = BootstrapConfig::new(scheme, a.b, seed).map_err(bad_flag)?;

    let s = setup(&model, &kernel, read_data(&a.model.data)?)?;
    let gram = stein_gram(&s.model, &s.kernel, &s.data)?;
    if let Some(path) = &a.dump_gram {
        gram.write_csv(path)?;
    }
    let kind = match (&radius, a.dev) {
        (None, _) => TestKind::Standard,
        (Some(_), false) => TestKind::RobustBootstrap,
        (Some(_), true) => TestKind::RobustDev,
    };
    let (theta, tau) = match &radius {
        None => (0.0, None),
        Some(spec) => {
            let tau = estimate_tau(&s, &gram, method)?;
            (resolve_theta(spec, &tau, &s.model)?, Some(tau))
        }
    };
    let spec = TestSpec {
        kind,
        estimator: a.estimator.into(),
    };
    let outcome = run_from_gram(
        &gram,
        spec,
        theta,
        a.alpha,
        &boot,
        tau.as_ref().map_or(0.0, |t| t.value),
    )?;
    let mut v = serde_json::to_value(&outcome).map_err(|e| Failure::Runtime(e.to_string()))?;
    let obj = v.as_object_mut().expect("outcome is an object");
    obj.insert("lambda2".into(), json!(s.lambda2));
    obj.insert("tau".into(), json!(tau.map(|t| t.value)));
    obj.insert("model".into(), json!(s.model.name()));
    if let Some(st) = s.standardization {
        obj.insert("standardization".into(), json!(st));
    }
    print(&v);
    Ok(())
}

fn estimate_tau(
    s: &Setup,
    gram: &robust_ksd::stein::SteinGram,
    method: TauMethod,
) -> CliResult<TauEstimate> {
    Ok(match method {
        TauMethod::DataMax => {
            let i = (0..gram.n())
                .max_by(|&i, &j| gram.values[[i, i]].total_cmp(&gram.values[[j, j]]))
                .expect("data are nonempty");
            TauEstimate {
                value: gram.diag_max,
                method,
                argmax: s.data.row(i).to_vec(),
            }
        }
        TauMethod::GridLocal { .. } => tau_inf(&s.model, &s.kernel, &s.data, method)?,
    })
}

fn cmd_ksd(a: KsdArgs) -> CliResult<()> {
    let model = parse_model(&a.model.model)?;
    let kernel = parse_kernel(&a.model.kernel)?;
    let s = setup(&model, &kernel, read_data(&a.model.data)?)?;
    let gram = stein_gram(&s.model, &s.kernel, &s.data)?;
    if let Some(path) = &a.dump_gram {
        gram.write_csv(path)?;
    }
    let estimator: Estimator = a.estimator.into();
    let d2 = match estimator {
        Estimator::V => ksd_v_stat(&gram)?,
        Estimator::U => ksd_u_stat(&gram)?,
    };
    print(&json!({
        "ksd_squared": d2,
        "ksd": d2.max(0.0).sqrt(),
        "estimator": estimator,
        "n": s.data.n(),
        "lambda2": s.lambda2,
        "model": s.model.name(),
        "version": robust_ksd::VERSION,
    }));
    Ok(())
}

fn cmd_radius(a: RadiusArgs) -> CliResult<()> {
    let spec = parse_radius(&a.spec)?;
    let method = parse_method(&a.method)?;
    let model = parse_model(&a.model)?;
    let kernel = parse_kernel(&a.kernel)?;
    let (theta, tau) = match (a.tau, &a.data) {
        (Some(_), Some(_)) => return Err(usage("give either --tau or --data, not both")),
        (None, None) => return Err(usage("--tau or --data is required")),
        (Some(t), None) => {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(usage("--tau must be nonnegative"));
            }
            (
                resolve_theta_value(&spec, t).map_err(bad_flag)?,
                TauEstimate {
                    value: t,
                    method,
                    argmax: Vec::new(),
                },
            )
        }
        (None, Some(path)) => {
            let s = setup(&model, &kernel, read_data(path)?)?;
            let tau = match method {
                TauMethod::DataMax => {
                    let gram = stein_gram(&s.model, &s.kernel, &s.data)?;
                    estimate_tau(&s, &gram, method)?
                }
                _ => tau_inf(&s.model, &s.kernel, &s.data, method)?,
            };
            (resolve_theta(&spec, &tau, &s.model)?, tau)
        }
    };
    print(&json!({
        "theta": theta,
        "tau": tau.value,
        "method": tau.method,
        "argmax": tau.argmax,
        "spec": spec,
        "version": robust_ksd::VERSION,
    }));
    Ok(())
}

fn cmd_tau(a: TauArgs) -> CliResult<()> {
    let method = parse_method(&a.method)?;
    let model = parse_model(&a.model.model)?;
    let kernel = parse_kernel(&a.model.kernel)?;
    let s = setup(&model, &kernel, read_data(&a.model.data)?)?;
    let tau = tau_inf(&s.model, &s.kernel, &s.data, method)?;
    print(&json!({
        "tau": tau.value,
        "method": tau.method,
        "argmax": tau.argmax,
        "lambda2": s.lambda2,
        "model": s.model.name(),
        "version": robust_ksd::VERSION,
    }));
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs) -> CliResult<()> {
    let mut config = load_config(&a.config).map_err(|e| match e {
        Error::Io { .. } => Failure::Runtime(e.to_string()),
        e => Failure::Usage(e.to_string()),
    })?;
    if let Some(out) = a.out {
        config.output.json = Some(out.with_extension("json"));
        config.output.csv = out;
    }
    let curve = run_experiment(&config)?;
    let json_path = config.output.json_path();
    persist(&curve, &config, &config.output.csv, &json_path)?;
    let cells: Vec<Value> = curve
        .cells
        .iter()
        .map(|c| {
            json!({
                "value": c.value,
                "rate": c.rate,
                "ci": [c.ci_low, c.ci_high],
                "completed": c.completed,
                "failed": c.failed,
                "error": c.error,
            })
        })
        .collect();
    print(&json!({
        "experiment": config.experiment.name,
        "csv": config.output.csv,
        "json": json_path,
        "cells": cells,
    }));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Ksd(a) => cmd_ksd(a),
        Command::Radius(a) => cmd_radius(a),
        Command::Tau(a) => cmd_tau(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
