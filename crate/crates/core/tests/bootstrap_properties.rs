use ndarray::Array2;
use robust_ksd::bootstrap::{
    boot_quantile_with, boot_stat_weighted, bootstrap_samples, BootstrapConfig, Estimator, Scheme,
};
use robust_ksd::kernels::TiltedKernel;
use robust_ksd::stein::{ksd_v_stat, stein_gram, SteinGram};
use robust_ksd::{DataSet, ScoreModel};

fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

fn gram(n: usize, seed: u64) -> SteinGram {
    let data = ScoreModel::standard_normal(1).sample(n, seed).unwrap();
    stein_gram(
        &ScoreModel::standard_normal(1),
        &TiltedKernel::tilted_imq(1.0).unwrap(),
        &data,
    )
    .unwrap()
}

#[test]
fn permuting_the_sample_leaves_the_bootstrap_law_unchanged() {
    let g = gram(40, 1);
    let n = g.n();
    let perm: Vec<usize> = (0..n).map(|i| (7 * i + 3) % n).collect();
    let permuted = SteinGram::from_matrix(Array2::from_shape_fn((n, n), |(i, j)| {
        g.values[[perm[i], perm[j]]]
    }))
    .unwrap();
    let cfg = BootstrapConfig::weighted(10_000, 99).unwrap();
    let a = bootstrap_samples(&g, &cfg, Estimator::V).unwrap();
    let b = bootstrap_samples(&permuted, &cfg, Estimator::V).unwrap();
    let d = ks_two_sample(&a, &b);
    assert!(d <= 0.02, "Kolmogorov distance {d}");
}

fn multinomial_law(n: usize) -> Vec<(Vec<i64>, f64)> {
    fn rec(n: usize, left: i64, cur: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if cur.len() == n - 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(n, left - k, cur, out);
            cur.pop();
        }
    }
    let mut all = Vec::new();
    rec(n, n as i64, &mut Vec::new(), &mut all);
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

#[test]
fn monte_carlo_bootstrap_matches_exact_enumeration() {
    for n in [2usize, 3] {
        let g = gram(n, 10 + n as u64);
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
        let exact = merged;
        let total: f64 = exact.iter().map(|e| e.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let cfg = BootstrapConfig::weighted(100_000, 5).unwrap();
        let mut mc = bootstrap_samples(&g, &cfg, Estimator::V).unwrap();
        mc.sort_by(f64::total_cmp);
        let mut sup = 0.0f64;
        let mut cdf = 0.0;
        for (v, p) in &exact {
            cdf += p;
            let emp =
                mc.partition_point(|x| *x <= *v + 1e-12 * (1.0 + v.abs())) as f64 / mc.len() as f64;
            sup = sup.max((emp - cdf).abs());
        }
        assert!(sup <= 0.01, "n = {n}: sup distance {sup}");

        let mut cdf = 0.0;
        let exact_q = exact
            .iter()
            .find(|(_, p)| {
                cdf += p;
                cdf >= 0.95 - 1e-12
            })
            .unwrap()
            .0;
        let k = (0.95 * mc.len() as f64).ceil() as usize;
        let mc_q = mc[k - 1];
        assert!(
            (mc_q - exact_q).abs() <= 1e-12 * (1.0 + exact_q.abs()),
            "n = {n}: {mc_q} vs {exact_q}"
        );
    }
}

#[test]
fn weighted_and_wild_quantiles_agree() {
    let mut rel = Vec::new();
    for seed in 0..20u64 {
        let g = gram(300, 1000 + seed);
        let obs = ksd_v_stat(&g).unwrap();
        let q = |scheme| {
            let cfg = BootstrapConfig::new(scheme, 2000, seed).unwrap();
            boot_quantile_with(&g, obs, &cfg, 0.05, Estimator::V)
                .unwrap()
                .q_squared
        };
        let (w, s) = (q(Scheme::Weighted), q(Scheme::Wild));
        rel.push((w - s).abs() / w);
    }
    let mean = rel.iter().sum::<f64>() / rel.len() as f64;
    let worst = rel.iter().copied().fold(0.0, f64::max);
    assert!(
        worst <= 0.15,
        "mean relative difference {mean}, worst {worst}"
    );
}

#[test]
fn identical_inputs_give_identical_quantiles() {
    let g = gram(80, 4);
    let cfg = BootstrapConfig::new(Scheme::Wild, 300, 12).unwrap();
    let a = boot_quantile_with(&g, 0.01, &cfg, 0.05, Estimator::U).unwrap();
    let b = boot_quantile_with(&g, 0.01, &cfg, 0.05, Estimator::U).unwrap();
    assert_eq!(a, b);
    let data = DataSet::from_scalars(&[0.1, 0.2]).unwrap();
    assert_eq!(data.n(), 2);
}
