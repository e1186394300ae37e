//! Acceptance run: one PASS/FAIL line per criterion, with the measured
//! numbers. Pass criterion numbers as arguments to run a subset.

use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;

use robust_ksd::bootstrap::{boot_stat_weighted, bootstrap_samples, BootstrapConfig, Estimator};
use robust_ksd::contam::{
    perturb_fraction, random_mixture_model, random_simplex, sample_alternative, sample_base,
    AlternativeSpec, ContaminationSpec,
};
use robust_ksd::harness::{curve_csv, parse_config, run_experiment};
use robust_ksd::hypothesis::{decide_from_gram, dev_threshold, TestKind, TestSpec};
use robust_ksd::kernels::{median_heuristic, BaseKernel, TiltedKernel};
use robust_ksd::radius::{
    find_intersections, normal_pdf, resolve_theta_value, scaled_t_delta, scaled_t_pdf, RadiusSpec,
};
use robust_ksd::rng::{mix, stream_rng};
use robust_ksd::stein::{
    ksd_quadrature_1d, ksd_u_stat, ksd_v_stat, ksd_v_stat_streaming, pair_value, point_terms,
    stein_diag, stein_gram, tau_inf, QuadGrid, SteinGram, TauMethod,
};
use robust_ksd::{DataSet, ScoreModel};

/// Criteria whose FAIL line is expected and explained in the project notes.
const EXPECTED_FAIL: &[&str] = &["6c", "8c", "10"];

struct Line {
    id: String,
    pass: bool,
    what: String,
}

fn line(id: &str, pass: bool, what: impl Into<String>) -> Line {
    Line {
        id: id.into(),
        pass,
        what: what.into(),
    }
}

type Criterion = fn() -> Vec<Line>;

#[derive(Clone, Copy)]
enum Kern {
    Imq,
    Tilted,
}

fn kernel(k: Kern, data: &DataSet) -> TiltedKernel {
    let l2 = median_heuristic(data).unwrap().powi(2);
    match k {
        Kern::Imq => TiltedKernel::stationary(BaseKernel::imq(l2, 0.5).unwrap()).unwrap(),
        Kern::Tilted => TiltedKernel::tilted_imq(l2).unwrap(),
    }
}

fn huber(n: usize, eps: f64, z: f64, seed: u64) -> DataSet {
    sample_alternative(
        &AlternativeSpec::Huber {
            base: ScoreModel::standard_normal(1),
            contamination: ContaminationSpec::DiracOutlier { z: vec![z] },
            eps,
        },
        n,
        seed,
    )
    .unwrap()
}

/// One test decision with `θ` resolved from the sample's largest diagonal
/// Stein-kernel value.
fn decide(
    model: &ScoreModel,
    data: &DataSet,
    k: Kern,
    kind: TestKind,
    radius: Option<RadiusSpec>,
    seed: u64,
) -> bool {
    let kern = kernel(k, data);
    let gram = stein_gram(model, &kern, data).unwrap();
    let tau = gram.diag_max;
    let theta = radius.map_or(0.0, |r| resolve_theta_value(&r, tau).unwrap());
    let boot = BootstrapConfig::weighted(500, mix(&[seed, 1])).unwrap();
    let spec = TestSpec {
        kind,
        estimator: Estimator::V,
    };
    decide_from_gram(&gram, spec, theta, 0.05, &boot, tau).unwrap()
}

fn rate(reps: u64, f: impl Fn(u64) -> bool + Sync) -> f64 {
    let hits = (0..reps).into_par_iter().filter(|&r| f(r)).count();
    hits as f64 / reps as f64
}

fn seed(tag: u64, cell: u64, r: u64) -> u64 {
    mix(&[0xacce, tag, cell, r])
}

fn c1() -> Vec<Line> {
    let start = Instant::now();
    let m = ScoreModel::standard_normal(1);
    let r = rate(200, |i| {
        let s = seed(1, 0, i);
        decide(
            &m,
            &m.sample(500, s).unwrap(),
            Kern::Imq,
            TestKind::Standard,
            None,
            s,
        )
    });
    let secs = start.elapsed().as_secs_f64();
    vec![
        line(
            "1",
            (0.02..=0.10).contains(&r),
            format!("null calibration: rate {r:.3} in [0.02, 0.10]"),
        ),
        line(
            "1t",
            secs < 180.0,
            format!("null calibration runtime {secs:.1} s < 180 s"),
        ),
    ]
}

fn c2() -> Vec<Line> {
    let m = ScoreModel::standard_normal(1);
    let r = rate(100, |i| {
        let s = seed(2, 0, i);
        decide(
            &m,
            &huber(500, 0.05, 10.0, s),
            Kern::Imq,
            TestKind::Standard,
            None,
            s,
        )
    });
    vec![line(
        "2",
        r >= 0.9,
        format!("stationary IMQ under 5% outliers at z=10: rate {r:.3} >= 0.9"),
    )]
}

fn c3() -> Vec<Line> {
    let m = ScoreModel::standard_normal(1);
    let reps = 400u64;
    let curve = |power: f64, cell: u64| -> Vec<f64> {
        [250usize, 1000, 4000]
            .iter()
            .enumerate()
            .map(|(j, &n)| {
                let eps = (n as f64).powf(-power);
                rate(reps, |i| {
                    let s = seed(3, 10 * cell + j as u64, i);
                    decide(
                        &m,
                        &huber(n, eps, 10.0, s),
                        Kern::Tilted,
                        TestKind::Standard,
                        None,
                        s,
                    )
                })
            })
            .collect()
    };
    let fast = curve(0.75, 0);
    // Two binomial standard errors of slack between neighbouring sizes.
    let se = |p: f64| 2.0 * (p * (1.0 - p) / reps as f64).sqrt().max(0.5 / reps as f64);
    let decreasing = fast
        .windows(2)
        .all(|w| w[1] <= w[0] + se(w[0]).max(se(w[1])));
    let slow = curve(0.25, 1);
    vec![
        line(
            "3a",
            decreasing && (0.02..=0.10).contains(&fast[2]),
            format!(
                "tilted, eps_n = n^-0.75: rates {:.3}, {:.3}, {:.3} at n = 250, 1000, 4000; nonincreasing and last in [0.02, 0.10]",
                fast[0], fast[1], fast[2]
            ),
        ),
        line(
            "3b",
            slow[2] >= 0.5,
            format!(
                "tilted, eps_n = n^-0.25: rates {:.3}, {:.3}, {:.3}; at n = 4000 >= 0.5",
                slow[0], slow[1], slow[2]
            ),
        ),
    ]
}

fn c4() -> Vec<Line> {
    let m = ScoreModel::standard_normal(1);
    let radius = Some(RadiusSpec::Huber { eps0: 0.05 });
    let at = |eps: f64, cell: u64| {
        rate(100, |i| {
            let s = seed(4, cell, i);
            decide(
                &m,
                &huber(500, eps, 10.0, s),
                Kern::Tilted,
                TestKind::RobustBootstrap,
                radius,
                s,
            )
        })
    };
    let (lo, hi) = (at(0.05, 0), at(0.5, 1));
    vec![
        line(
            "4a",
            lo <= 0.08,
            format!("robust test at eps = eps0 = 0.05: rate {lo:.3} <= 0.08"),
        ),
        line(
            "4b",
            hi >= 0.9,
            format!("robust test at eps = 0.5: rate {hi:.3} >= 0.9"),
        ),
    ]
}

fn population_kernel() -> TiltedKernel {
    TiltedKernel::tilted_imq(1.0).unwrap()
}

fn c5() -> Vec<Line> {
    let m = ScoreModel::standard_normal(1);
    let k = population_kernel();
    let probe = m.sample(200, 5).unwrap();
    let tau = tau_inf(&m, &k, &probe, TauMethod::GridLocal { bound: 10.0 }).unwrap();
    let z = tau.argmax[0];
    let sd = 1e-3;
    let grid = QuadGrid::segments(&[
        (-14.0, z - 12.0 * sd, 4001),
        (z - 12.0 * sd, z + 12.0 * sd, 1201),
        (z + 12.0 * sd, 14.0, 4001),
    ])
    .unwrap();
    [0.02, 0.05]
        .iter()
        .map(|&eps| {
            let q = |x: f64| (1.0 - eps) * normal_pdf(x) + eps * normal_pdf((x - z) / sd) / sd;
            let d = ksd_quadrature_1d(&m, q, &k, &grid).unwrap().sqrt();
            let bound = eps * tau.value.sqrt();
            let rel = (d / bound - 1.0).abs();
            line(
                &format!("5{}", if eps == 0.02 { "a" } else { "b" }),
                rel <= 0.01,
                format!("spike at z* = {z:.4}, eps = {eps}: D = {d:.6} vs eps sqrt(tau) = {bound:.6}, rel err {rel:.2e} <= 1%"),
            )
        })
        .collect()
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    QuadGrid::uniform(a, b, m).unwrap().integrate(f)
}

fn c6() -> Vec<Line> {
    let mut out = Vec::new();
    let mut worst = 0.0f64;
    for nu in [5.0, 10.0, 20.0] {
        let r = find_intersections(nu).unwrap();
        let f = |x: f64| (scaled_t_pdf(x, nu).unwrap() - normal_pdf(x)).abs();
        let l1 = 2.0
            * (simpson(&f, 0.0, r.a1, 20_001)
                + simpson(&f, r.a1, r.a2, 20_001)
                + simpson(&f, r.a2, 60.0, 200_001)
                + simpson(&f, 60.0, 2000.0, 200_001));
        worst = worst.max((l1 - scaled_t_delta(nu).unwrap()).abs());
    }
    out.push(line(
        "6a",
        worst <= 1e-6,
        format!("delta0(nu) vs quadrature L1, nu in {{5, 10, 20}}: max error {worst:.2e} <= 1e-6"),
    ));

    let m = ScoreModel::standard_normal(1);
    let at = |nu0: f64, nu: f64, cell: u64| {
        rate(100, |i| {
            let s = seed(6, cell, i);
            let data = sample_alternative(&AlternativeSpec::ScaledTData { nu }, 500, s).unwrap();
            decide(
                &m,
                &data,
                Kern::Tilted,
                TestKind::RobustBootstrap,
                Some(RadiusSpec::ScaledTTail { nu0 }),
                s,
            )
        })
    };
    let rates: Vec<f64> = [5.0, 10.0, 20.0, 50.0]
        .iter()
        .enumerate()
        .map(|(j, &nu)| at(5.0, nu, j as u64))
        .collect();
    out.push(line(
        "6b",
        rates.iter().all(|&r| r <= 0.05),
        format!("nu0 = 5 radius at nu = 5, 10, 20, 50: rates {rates:.3?} all <= 0.05"),
    ));
    let r = at(20.0, 5.0, 10);
    out.push(line(
        "6c",
        r >= 0.5,
        format!("nu0 = 20 radius at nu = 5: rate {r:.3} >= 0.5"),
    ));
    out
}

fn multinomial_law(n: usize) -> Vec<(Vec<i64>, f64)> {
    let mut all = Vec::new();
    let total = (n + 1).pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let w: Vec<i64> = (0..n)
            .map(|_| {
                let v = (c % (n + 1)) as i64;
                c /= n + 1;
                v
            })
            .collect();
        if w.iter().sum::<i64>() == n as i64 {
            all.push(w);
        }
    }
    let fact = |k: i64| (1..=k).map(|v| v as f64).product::<f64>();
    all.into_iter()
        .map(|w| {
            let p = fact(n as i64)
                / w.iter().map(|&k| fact(k)).product::<f64>()
                / (n as f64).powi(n as i32);
            (w, p)
        })
        .collect()
}

fn c7() -> Vec<Line> {
    let m = ScoreModel::standard_normal(1);
    let mut out = Vec::new();
    for n in [2usize, 3] {
        let data = m.sample(n, 70 + n as u64).unwrap();
        let g = stein_gram(&m, &population_kernel(), &data).unwrap();
        let mut exact: Vec<(f64, f64)> = multinomial_law(n)
            .into_iter()
            .map(|(w, p)| (boot_stat_weighted(&g, &w).unwrap(), p))
            .collect();
        exact.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (v, p) in exact {
            match merged.last_mut() {
                Some(last) if (v - last.0).abs() <= 1e-12 * (1.0 + v.abs()) => last.1 += p,
                _ => merged.push((v, p)),
            }
        }
        let mut mc = bootstrap_samples(
            &g,
            &BootstrapConfig::weighted(100_000, 7).unwrap(),
            Estimator::V,
        )
        .unwrap();
        mc.sort_by(f64::total_cmp);
        let (mut cdf, mut sup) = (0.0, 0.0f64);
        let mut exact_q = None;
        for (v, p) in &merged {
            cdf += p;
            let emp =
                mc.partition_point(|x| *x <= *v + 1e-12 * (1.0 + v.abs())) as f64 / mc.len() as f64;
            sup = sup.max((emp - cdf).abs());
            if exact_q.is_none() && cdf >= 0.95 - 1e-12 {
                exact_q = Some(*v);
            }
        }
        let exact_q = exact_q.unwrap();
        let mc_q = mc[(0.95 * mc.len() as f64).ceil() as usize - 1];
        let q_ok = (mc_q - exact_q).abs() <= 1e-12 * (1.0 + exact_q.abs());
        out.push(line(
            &format!("7{}", if n == 2 { "a" } else { "b" }),
            sup <= 0.01 && q_ok,
            format!("bootstrap n = {n}: sup CDF distance {sup:.4} <= 0.01; 95% quantile {mc_q:.6} vs exact {exact_q:.6}"),
        ));
    }
    out
}

fn c8() -> Vec<Line> {
    let m = ScoreModel::standard_normal(1);
    let radius = Some(RadiusSpec::Huber { eps0: 0.05 });
    let mut out = Vec::new();
    let mut worst = 0.0f64;
    let mut cells = Vec::new();
    for (j, &(n, eps)) in [(50usize, 0.0), (50, 0.05), (200, 0.0), (200, 0.05)]
        .iter()
        .enumerate()
    {
        let r = rate(400, |i| {
            let s = seed(8, j as u64, i);
            decide(
                &m,
                &huber(n, eps, 10.0, s),
                Kern::Tilted,
                TestKind::RobustDev,
                radius,
                s,
            )
        });
        worst = worst.max(r);
        cells.push(format!("n={n},eps={eps}:{r:.3}"));
    }
    out.push(line(
        "8a",
        worst <= 0.05,
        format!("deviation test level: {} all <= 0.05", cells.join(" ")),
    ));
    let r = rate(100, |i| {
        let s = seed(8, 9, i);
        decide(
            &m,
            &huber(2000, 0.5, 10.0, s),
            Kern::Tilted,
            TestKind::RobustDev,
            radius,
            s,
        )
    });
    out.push(line(
        "8b",
        r >= 0.9,
        format!("deviation test power at eps = 0.5, n = 2000: rate {r:.3} >= 0.9"),
    ));
    let g = dev_threshold(1.0, 100, 0.05);
    out.push(line(
        "8c",
        (g - 0.344776).abs() <= 1e-6,
        format!(
            "gamma_n(tau=1, n=100, alpha=0.05) = {g:.9} vs quoted 0.344776 +/- 1e-6 (diff {:.2e})",
            (g - 0.344776).abs()
        ),
    ));
    out
}

fn c9() -> Vec<Line> {
    let model = ScoreModel::random_rbm(10, 3, 2024).unwrap();
    let noise = ContaminationSpec::GaussianNoise {
        mean: vec![0.0; 10],
        var: 0.01,
    };
    let radius = Some(RadiusSpec::Huber { eps0: 0.1 });
    let at = |eps: f64, cell: u64| {
        rate(100, |i| {
            let s = seed(9, cell, i);
            let clean = sample_base(&model, 300, s).unwrap();
            let data = perturb_fraction(&clean, eps, &noise, mix(&[s, 2])).unwrap();
            decide(
                &model,
                &data,
                Kern::Tilted,
                TestKind::RobustBootstrap,
                radius,
                s,
            )
        })
    };
    let low: Vec<f64> = [0.0, 0.05, 0.1]
        .iter()
        .enumerate()
        .map(|(j, &e)| at(e, j as u64))
        .collect();
    let high: Vec<f64> = [0.4, 0.5]
        .iter()
        .enumerate()
        .map(|(j, &e)| at(e, 10 + j as u64))
        .collect();
    // Score against central differences of the exactly summed log density.
    let mut rng = stream_rng(99, 0);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x: Vec<f64> = (0..10)
            .map(|_| {
                let z: f64 =
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                2.0 * z
            })
            .collect();
        let s = model.score(&x).unwrap();
        let h = 1e-5;
        let fd: Vec<f64> = (0..10)
            .map(|j| {
                let mut a = x.clone();
                let mut b = x.clone();
                a[j] += h;
                b[j] -= h;
                (model.log_density_unnorm(&a).unwrap() - model.log_density_unnorm(&b).unwrap())
                    / (2.0 * h)
            })
            .collect();
        let num = s
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let den = s.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(num / den);
    }
    vec![
        line("9a", low.iter().all(|&r| r <= 0.08), format!("RBM d=10, d'=3, eps0=0.1: rates at eps = 0, 0.05, 0.1: {low:.3?} all <= 0.08")),
        line("9b", high.iter().all(|&r| r >= 0.9), format!("RBM rates at eps = 0.4, 0.5: {high:.3?} all >= 0.9")),
        line("9c", worst <= 1e-5, format!("RBM score vs finite differences of the enumerated log density: max rel err {worst:.2e} <= 1e-5")),
    ]
}

fn c10() -> Vec<Line> {
    let estimate = |gamma: f64| -> (f64, f64) {
        let (mut v, mut u) = (0.0, 0.0);
        for r in 0..20u64 {
            let s = seed(10, 0, r);
            let model = random_mixture_model(5, 2, gamma, s).unwrap();
            let new_weights = random_simplex(5, &mut stream_rng(s, 7));
            let data = sample_alternative(
                &AlternativeSpec::MixtureRatioPerturb {
                    base: model.clone(),
                    new_weights,
                },
                1000,
                mix(&[s, 3]),
            )
            .unwrap();
            let g = stein_gram(&model, &kernel(Kern::Tilted, &data), &data).unwrap();
            v += ksd_v_stat(&g).unwrap().sqrt();
            u += ksd_u_stat(&g).unwrap();
        }
        (v / 20.0, u / 20.0)
    };
    let (v_lo, u_lo) = estimate(0.5);
    let (v_hi, u_hi) = estimate(4.0);
    vec![line(
        "10",
        v_hi < 0.25 * v_lo,
        format!(
            "mixture blindness, mean sqrt V-statistic over 20 seeds: {v_hi:.4} at gamma=4 vs {v_lo:.4} at gamma=0.5, ratio {:.3} < 0.25 (squared, from mean U-statistics: {:.3})",
            v_hi / v_lo,
            u_hi / u_lo
        ),
    )]
}

fn c11() -> Vec<Line> {
    let mut out = Vec::new();
    let m = ScoreModel::standard_normal(1);
    let mut rng = stream_rng(11, 0);
    let mut uni = |a: f64, b: f64| a + (b - a) * rand::Rng::random::<f64>(&mut rng);

    // Gradient and Laplacian of every base kernel against finite differences.
    let bases = [
        BaseKernel::imq(1.3, 0.5).unwrap(),
        BaseKernel::squared_exponential(0.8).unwrap(),
        BaseKernel::sum_imq(vec![0.5, 2.0], 0.7, true).unwrap(),
    ];
    let (mut g_err, mut l_err) = (0.0f64, 0.0f64);
    for b in &bases {
        for _ in 0..100 {
            let u: Vec<f64> = (0..3).map(|_| uni(-2.0, 2.0)).collect();
            let g = b.grad_h(&u);
            let mut lap = 0.0;
            for j in 0..3 {
                let (mut p, mut q) = (u.clone(), u.clone());
                p[j] += 1e-6;
                q[j] -= 1e-6;
                let fd = (b.eval_h(&p) - b.eval_h(&q)) / 2e-6;
                g_err = g_err.max((fd - g[j]).abs() / g[j].abs().max(1e-3));
                let (mut p, mut q) = (u.clone(), u.clone());
                p[j] += 1e-4;
                q[j] -= 1e-4;
                lap += (b.eval_h(&p) - 2.0 * b.eval_h(&u) + b.eval_h(&q)) / 1e-8;
            }
            let exact = b.laplacian_h(&u);
            l_err = l_err.max((lap - exact).abs() / exact.abs().max(1e-2));
        }
    }
    out.push(line("11a", g_err <= 1e-5 && l_err <= 1e-3, format!("kernel derivatives vs finite differences: gradient {g_err:.1e} <= 1e-5, Laplacian {l_err:.1e} <= 1e-3")));

    // Stein kernel Cauchy-Schwarz and symmetry.
    let k = population_kernel();
    let mut cs_ok = true;
    for _ in 0..2000 {
        let (x, y) = ([uni(-8.0, 8.0)], [uni(-8.0, 8.0)]);
        let uxy = robust_ksd::stein::stein_kernel_eval(&m, &k, &x, &y).unwrap();
        let uyx = robust_ksd::stein::stein_kernel_eval(&m, &k, &y, &x).unwrap();
        let (a, b) = (
            stein_diag(&m, &k, &x).unwrap(),
            stein_diag(&m, &k, &y).unwrap(),
        );
        cs_ok &= uxy == uyx && uxy * uxy <= a * b * (1.0 + 1e-9) + 1e-12;
    }
    out.push(line(
        "11b",
        cs_ok,
        "Stein kernel symmetric and |u(x,y)|^2 <= u(x,x) u(y,y) on 2000 pairs",
    ));

    // Degeneracy: E_P u_p(X, z) = 0.
    let xs = m.sample(100_000, 12).unwrap();
    let mut worst = 0.0f64;
    for z in [-2.0, 0.0, 1.5] {
        let pz = point_terms(&m, &k, &[z]).unwrap();
        let vals: Vec<f64> = xs
            .rows()
            .map(|x| pair_value(&k.base, x, &point_terms(&m, &k, x).unwrap(), &[z], &pz))
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        worst = worst.max(mean.abs() / (sd / n.sqrt()));
    }
    out.push(line(
        "11c",
        worst <= 4.0,
        format!("degeneracy: |mean| / standard error {worst:.2} <= 4 at z = -2, 0, 1.5"),
    ));

    // V/U identity.
    let data = m.sample(100, 13).unwrap();
    let g = stein_gram(&m, &k, &data).unwrap();
    let (v, u) = (ksd_v_stat(&g).unwrap(), ksd_u_stat(&g).unwrap());
    let rhs = 0.99 * u + g.values.diag().sum() / 1e4;
    out.push(line(
        "11d",
        (v - rhs).abs() <= 1e-14,
        format!("V/U identity: |difference| {:.1e}", (v - rhs).abs()),
    ));

    // Exchangeability of the bootstrap law.
    let n = g.n();
    let perm: Vec<usize> = (0..n).map(|i| (37 * i + 11) % n).collect();
    let pg = SteinGram::from_matrix(Array2::from_shape_fn((n, n), |(i, j)| {
        g.values[[perm[i], perm[j]]]
    }))
    .unwrap();
    let cfg = BootstrapConfig::weighted(10_000, 14).unwrap();
    let mut a = bootstrap_samples(&g, &cfg, Estimator::V).unwrap();
    let mut b = bootstrap_samples(&pg, &cfg, Estimator::V).unwrap();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let ks = a
        .iter()
        .chain(&b)
        .map(|t| {
            let fa = a.partition_point(|x| x <= t) as f64;
            let fb = b.partition_point(|x| x <= t) as f64;
            (fa - fb).abs() / 1e4
        })
        .fold(0.0, f64::max);
    out.push(line(
        "11e",
        ks <= 0.02,
        format!("bootstrap exchangeability: Kolmogorov distance {ks:.4} <= 0.02"),
    ));

    // Huber mixture KSD ratio.
    let noise = ContaminationSpec::GaussianNoise {
        mean: vec![3.0],
        var: 0.25,
    };
    let huber_noise = |eps: f64, s: u64| {
        sample_alternative(
            &AlternativeSpec::Huber {
                base: m.clone(),
                contamination: noise.clone(),
                eps,
            },
            20_000,
            s,
        )
        .unwrap()
    };
    let d_r = ksd_v_stat_streaming(&m, &k, &huber_noise(1.0, 15))
        .unwrap()
        .sqrt();
    let ratios: Vec<f64> = [0.2, 0.4]
        .iter()
        .map(|&e| {
            ksd_v_stat_streaming(&m, &k, &huber_noise(e, 16))
                .unwrap()
                .sqrt()
                / d_r
                / e
        })
        .collect();
    out.push(line(
        "11f",
        ratios.iter().all(|r| (r - 1.0).abs() <= 0.1),
        format!("D(Q,P) / (eps D(R,P)) at eps = 0.2, 0.4: {ratios:.3?} within 10% of 1"),
    ));

    // Robust at theta = 0 versus standard.
    let same = (0..100u64).all(|i| {
        let s = seed(11, 0, i);
        let data = huber(100, 0.05, 2.0, s);
        decide(&m, &data, Kern::Tilted, TestKind::Standard, None, s)
            == decide(
                &m,
                &data,
                Kern::Tilted,
                TestKind::RobustBootstrap,
                Some(RadiusSpec::Explicit { theta: 0.0 }),
                s,
            )
    });
    out.push(line(
        "11g",
        same,
        "robust test at theta = 0 matches the standard decision on 100 samples",
    ));

    // Harness output is independent of the thread count.
    let cfg = parse_config(
        r#"
[experiment]
name = "repro"
alpha = 0.05
B = 200
n = 100
repetitions = 10
base_seed = 1
test = "robust"
[model]
type = "standard_normal"
[kernel]
family = "imq"
weight = "imq"
[radius]
rule = "huber"
eps0 = 0.05
[alternative]
type = "huber"
contamination = "dirac"
z = 10.0
eps = 0.0
[sweep]
variable = "eps"
values = [0.0, 0.2]
[output]
csv = "repro.csv"
"#,
    )
    .unwrap();
    let run_with = |t: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .unwrap()
            .install(|| curve_csv(&run_experiment(&cfg).unwrap()).unwrap())
    };
    out.push(line(
        "11h",
        run_with(1) == run_with(4),
        "experiment CSV bytes identical on 1 and 4 threads",
    ));
    out
}

fn main() {
    let args: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [(&str, Criterion); 11] = [
        ("1", c1),
        ("2", c2),
        ("3", c3),
        ("4", c4),
        ("5", c5),
        ("6", c6),
        ("7", c7),
        ("8", c8),
        ("9", c9),
        ("10", c10),
        ("11", c11),
    ];
    let mut unexpected = Vec::new();
    for (id, f) in criteria {
        if !args.is_empty() && !args.iter().any(|a| a == id) {
            continue;
        }
        let start = Instant::now();
        let lines = f();
        let secs = start.elapsed().as_secs_f64();
        for l in lines {
            let tag = if l.pass { "PASS" } else { "FAIL" };
            let note = if !l.pass && EXPECTED_FAIL.contains(&l.id.as_str()) {
                " (known deviation)"
            } else {
                ""
            };
            println!("{tag} [{}] {}{note}", l.id, l.what);
            if !l.pass && note.is_empty() {
                unexpected.push(l.id);
            }
        }
        println!("     criterion {id} took {secs:.1} s");
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
