//! Distributional checks of the generators and Monte Carlo checks of the
//! procedure that are too slow or too noisy for unit tests.

use jointmirror::engine::mask;
use jointmirror::simulate::*;
use jointmirror::*;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// Two-sided Kolmogorov-Smirnov p-value against Uniform(0, 1), using the
/// asymptotic Kolmogorov distribution.
fn ks_uniform_pvalue(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = x - i as f64 / n;
            let hi = (i + 1) as f64 / n - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        p += if j % 2 == 1 { 2.0 * term } else { -2.0 * term };
    }
    p.clamp(0.0, 1.0)
}

#[test]
fn ks_helper_detects_non_uniform_samples() {
    let uniform: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
    assert!(ks_uniform_pvalue(uniform.clone()) > 0.99);
    let squashed: Vec<f64> = uniform.iter().map(|u| u * u).collect();
    assert!(ks_uniform_pvalue(squashed) < 1e-6);
}

#[test]
fn mediation_null_pvalues_are_uniform() {
    let config = MediationConfig {
        m: 5000,
        ..MediationConfig::table_preset("gnull").unwrap()
    };
    let (mut alpha, mut beta) = (Vec::new(), Vec::new());
    for seed in 0..4 {
        let (p, truth) = gen_mediation(&config, seed).unwrap();
        for i in 0..p.rows() {
            assert_eq!(truth.kappa(i), 2);
            alpha.push(p.row(i)[0]);
            beta.push(p.row(i)[1]);
        }
    }
    let (pa, pb) = (ks_uniform_pvalue(alpha), ks_uniform_pvalue(beta));
    assert!(pa > 0.01 && pb > 0.01, "KS p-values {pa}, {pb}");
}

#[test]
fn pointmass_and_replicability_null_components_are_uniform() {
    let mut nulls = Vec::new();
    for seed in 0..3 {
        let (p, truth) = gen_pointmass(&PointMassConfig::new(10_000), seed).unwrap();
        for i in 0..p.rows() {
            for k in 0..2 {
                if !truth.theta(i)[k] {
                    nulls.push(p.row(i)[k]);
                }
            }
        }
    }
    assert!(ks_uniform_pvalue(nulls) > 0.01);

    let config = ReplicabilityConfig {
        rho: 0.0,
        blocks: 10_000,
        ..ReplicabilityConfig::new(3, 0.03, 0.8, 0.5, 100)
    };
    let mut nulls = Vec::new();
    for seed in 0..3 {
        let (p, truth, _) = gen_replicability(&config, seed).unwrap();
        for i in 0..p.rows() {
            for k in 0..3 {
                if !truth.theta(i)[k] {
                    nulls.push(p.row(i)[k]);
                }
            }
        }
    }
    assert!(ks_uniform_pvalue(nulls) > 0.01);
}

/// Lag-one correlation of the noise within one experiment, over pairs that
/// share a block.
fn within_block_correlation(z: &ZMatrix, truth: &TruthTable, col: usize, block: usize) -> f64 {
    let mut pairs = Vec::new();
    for i in 0..z.rows() - 1 {
        let same_block = i / block == (i + 1) / block;
        if same_block && !truth.theta(i)[col] && !truth.theta(i + 1)[col] {
            pairs.push((z.row(i)[col], z.row(i + 1)[col]));
        }
    }
    let n = pairs.len() as f64;
    let (mx, my) = pairs
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

#[test]
fn independent_design_has_negligible_correlation() {
    let config = ReplicabilityConfig {
        rho: 0.0,
        blocks: 10_000,
        ..ReplicabilityConfig::new(2, 0.03, 0.8, 1.0, 100)
    };
    let (_, truth, z) = gen_replicability(&config, 4).unwrap();
    for col in 0..2 {
        let r = within_block_correlation(&z, &truth, col, 10_000);
        assert!(r.abs() < 0.05, "column {col}: {r}");
    }
}

#[test]
fn block_design_has_the_configured_correlation() {
    let config = ReplicabilityConfig::new(2, 0.03, 0.8, 1.0, 100);
    let (_, truth, z) = gen_replicability(&config, 5).unwrap();
    for col in 0..2 {
        let r = within_block_correlation(&z, &truth, col, 100);
        assert!((r - 0.5).abs() < 0.15, "column {col}: {r}");
    }
}

#[test]
fn pointmass_product_fdr_at_nominal_level() {
    let fdps: Vec<f64> = (0..100)
        .map(|seed| {
            let (p, truth) = gen_pointmass(&PointMassConfig::new(2000), seed).unwrap();
            let res = run_jm(&p, &JMConfig::new(0.2, Variant::Product).with_seed(seed)).unwrap();
            metrics(&res.rejected, &truth).fdp
        })
        .collect();
    let (mean, _) = mean_se(&fdps);
    assert!(mean <= 0.22, "mean FDP {mean}");
}

#[test]
fn controls_beat_the_joint_significance_bound_for_small_thresholds() {
    let (_, truth) = gen_pointmass(&PointMassConfig::new(10_000), 0).unwrap();
    let means = PointMassConfig::new(0).means;
    let cdf = |i: usize, k: usize, x: f64| {
        let c = PointMassConfig::THETAS
            .iter()
            .position(|t| t == truth.theta(i))
            .unwrap();
        two_sided_normal_cdf(x, means[c][k])
    };
    for j in 1..=10 {
        let t = j as f64 / 100.0;
        let e = expected_counts(t, &truth, cdf).unwrap();
        assert!(
            e.controls < e.js_bound,
            "t={t}: {} vs {}",
            e.controls,
            e.js_bound
        );
    }
}

/// Density of a two-sided normal p-value with mean `mu`.
fn pvalue_density(p: f64, mu: f64) -> f64 {
    let n = Normal::standard();
    let c = n.inverse_cdf(1.0 - p / 2.0);
    (n.pdf(c - mu) + n.pdf(c + mu)) / (2.0 * n.pdf(c))
}

/// Probability that a masked pointmass vector sits on the rejection side,
/// computed from the true mixture.
fn oracle_q(t: &[f64]) -> f64 {
    let cfg = PointMassConfig::new(0);
    let f = |a: f64, b: f64| -> f64 {
        (0..4)
            .map(|s| {
                cfg.weights[s]
                    * pvalue_density(a, cfg.means[s][0])
                    * pvalue_density(b, cfg.means[s][1])
            })
            .sum()
    };
    let own = f(t[0], t[1]);
    own / (own + f(1.0 - t[0], t[1]) + f(t[0], 1.0 - t[1]))
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &v in &idx[i..=j] {
            r[v] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn kernel_reveal_order_tracks_the_oracle_order() {
    let (p, _) = gen_pointmass(&PointMassConfig::new(2000), 21).unwrap();
    // a tiny level reveals every masked feature
    let res = run_jm(&p, &JMConfig::new(1e-9, Variant::EmptyPoset).with_seed(3)).unwrap();
    let (_, points) = mask(&p, &MaskingScheme::standard());
    assert_eq!(res.reveal_order.len(), points.len());
    let steps: Vec<f64> = (0..res.reveal_order.len()).map(|s| s as f64).collect();
    let oracle: Vec<f64> = res
        .reveal_order
        .iter()
        .map(|&i| {
            let masked: Vec<f64> = p.row(i).iter().map(|&t| t.min(1.0 - t)).collect();
            oracle_q(&masked)
        })
        .collect();
    let rho = pearson(&ranks(&steps), &ranks(&oracle));
    assert!(rho > 0.5, "Spearman correlation {rho}");
}

#[test]
fn directional_procedure_controls_sign_errors() {
    let config = DirectionalConfig::new(5000, 2);
    let dfdps: Vec<f64> = (0..30)
        .map(|seed| {
            let (z, signs) = gen_directional(&config, seed).unwrap();
            let grid = engine::default_threshold_grid(&z);
            let res = run_directional(&z, 0.2, &grid).unwrap();
            directional_metrics(&res.signs, &signs).0
        })
        .collect();
    let (mean, _) = mean_se(&dfdps);
    assert!(mean <= 0.23, "mean dFDP {mean}");
}
