//! Synthetic data, error metrics and a replication harness.
//!
//! Every generator is a pure function of its configuration and a 64-bit
//! seed. Replication `r` of a study seeded with `s` uses seed `s + r` both
//! for the data and for the procedure's tie-breaking.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use statrs::function::erf::erfc;

use crate::engine::{default_threshold_grid, run_directional, run_jm, JMConfig, Variant};
use crate::error::{Error, Result};
use crate::matrix::{PValueMatrix, ZMatrix};

/// Which component hypotheses are non-null, one row per feature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthTable {
    theta: Vec<bool>,
    k: usize,
}

impl TruthTable {
    pub fn new(theta: Vec<bool>, k: usize) -> Result<Self> {
        if k == 0 || !theta.len().is_multiple_of(k) {
            return Err(Error::Domain(format!(
                "truth table of length {} is not a multiple of K = {k}",
                theta.len()
            )));
        }
        Ok(Self { theta, k })
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Domain("ragged truth table".into()));
        }
        Self::new(rows.concat(), k)
    }

    pub fn m(&self) -> usize {
        self.theta.len() / self.k
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn theta(&self, i: usize) -> &[bool] {
        &self.theta[i * self.k..(i + 1) * self.k]
    }

    /// Number of null components of feature `i`.
    pub fn kappa(&self, i: usize) -> usize {
        self.theta(i).iter().filter(|&&b| !b).count()
    }

    /// Whether feature `i` is null in at least one experiment.
    pub fn is_null(&self, i: usize) -> bool {
        self.kappa(i) >= 1
    }

    /// `|H^(kappa)|` for `kappa = 0..=K`.
    pub fn partition_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k + 1];
        for i in 0..self.m() {
            sizes[self.kappa(i)] += 1;
        }
        sizes
    }
}

fn normal_two_sided(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Mixture of point masses over `theta in {0,1}^2` with Gaussian statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMassConfig {
    pub m: usize,
    /// Probabilities of `theta = (0,0), (0,1), (1,0), (1,1)`.
    pub weights: [f64; 4],
    /// Means of the two statistics for each `theta`, same order.
    pub means: [[f64; 2]; 4],
}

impl PointMassConfig {
    pub const THETAS: [[bool; 2]; 4] = [[false, false], [false, true], [true, false], [true, true]];

    pub fn new(m: usize) -> Self {
        Self {
            m,
            weights: [0.4, 0.2, 0.2, 0.2],
            means: [[0.0, 0.0], [0.0, 2.5], [1.5, 0.0], [2.0, 3.0]],
        }
    }

    /// Only the two-null and two-signal states, reweighted to keep their
    /// ratio: every null has two null components.
    pub fn double_null(m: usize) -> Self {
        Self {
            weights: [2.0 / 3.0, 0.0, 0.0, 1.0 / 3.0],
            ..Self::new(m)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        check_weights(&self.weights)
    }
}

fn check_weights(w: &[f64]) -> Result<()> {
    let total: f64 = w.iter().sum();
    if w.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "mixture weights must be non-negative and sum to 1, got {w:?}"
        )));
    }
    Ok(())
}

fn draw_category<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return c;
        }
    }
    // rounding left a sliver above the last cumulative sum
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Two-sided p-values of independent `N(mu, 1)` statistics.
pub fn gen_pointmass(config: &PointMassConfig, seed: u64) -> Result<(PValueMatrix, TruthTable)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Vec::with_capacity(config.m * 2);
    let mut theta = Vec::with_capacity(config.m * 2);
    for _ in 0..config.m {
        let c = draw_category(&mut rng, &config.weights);
        for k in 0..2 {
            let x: f64 = rng.sample::<f64, _>(StandardNormal) + config.means[c][k];
            p.push(normal_two_sided(x));
            theta.push(PointMassConfig::THETAS[c][k]);
        }
    }
    Ok((
        PValueMatrix::new(p, config.m, 2)?,
        TruthTable::new(theta, 2)?,
    ))
}

/// `P(2 Phi(-|X|) <= t)` for `X ~ N(mu, 1)`.
pub fn two_sided_normal_cdf(t: f64, mu: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let n = Normal::standard();
    let c = n.inverse_cdf(1.0 - t / 2.0);
    n.cdf(-c - mu) + n.sf(c - mu)
}

/// Analytic expectations for the fixed rejection region `[0, t]^K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedCounts {
    /// Expected number of nulls inside the rejection region.
    pub false_discoveries: f64,
    /// Expected total mirror-region memberships.
    pub controls: f64,
    /// `(m - m_0) t`, the number of nulls times `t`.
    pub js_bound: f64,
}

/// Expected false discoveries and mirror controls when null components are
/// independent uniforms and `alt_cdf(i, k, x)` is the distribution function
/// of `p_ki` for a non-null component.
pub fn expected_counts<F>(t: f64, truth: &TruthTable, alt_cdf: F) -> Result<ExpectedCounts>
where
    F: Fn(usize, usize, f64) -> f64,
{
    if !(t > 0.0 && t < 0.5) {
        return Err(Error::Domain(format!("t must lie in (0, 1/2), got {t}")));
    }
    let mut fd = 0.0;
    let mut controls = 0.0;
    let mut nulls = 0usize;
    for i in 0..truth.m() {
        let theta = truth.theta(i);
        let kappa = truth.kappa(i);
        let tk = t.powi(kappa as i32);
        let low: Vec<f64> = (0..truth.k())
            .map(|k| if theta[k] { alt_cdf(i, k, t) } else { t })
            .collect();
        let alt_low: f64 = (0..truth.k())
            .filter(|&k| theta[k])
            .map(|k| low[k])
            .product();
        if kappa >= 1 {
            nulls += 1;
            fd += tk * alt_low;
        }
        controls += kappa as f64 * tk * alt_low;
        for k in (0..truth.k()).filter(|&k| theta[k]) {
            let others: f64 = (0..truth.k())
                .filter(|&l| theta[l] && l != k)
                .map(|l| low[l])
                .product();
            controls += tk * (1.0 - alt_cdf(i, k, 1.0 - t)) * others;
        }
    }
    Ok(ExpectedCounts {
        false_discoveries: fd,
        controls,
        js_bound: nulls as f64 * t,
    })
}

/// Parameters of the exposure-marker-outcome model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediationConfig {
    pub n: usize,
    pub m: usize,
    pub pi00: f64,
    /// Share of the non-`H00` mass given to `H11`.
    pub tilde_pi1: f64,
    pub alpha_effect: f64,
    pub beta_effect: f64,
    pub beta0: f64,
}

impl MediationConfig {
    pub fn new(pi00: f64, tilde_pi1: f64) -> Self {
        Self {
            n: 250,
            m: 5000,
            pi00,
            tilde_pi1,
            alpha_effect: 0.25,
            beta_effect: 0.375,
            beta0: 0.3,
        }
    }

    /// `(pi00, pi01, pi10, pi11)` where the first digit refers to `alpha`.
    pub fn proportions(&self) -> [f64; 4] {
        let pi11 = self.tilde_pi1 * (1.0 - self.pi00);
        let side = (1.0 - self.pi00 - pi11) / 2.0;
        [self.pi00, side, side, pi11]
    }

    /// The named null/alternative configurations with the larger effects
    /// `alpha = 0.5`, `beta = 0.75`: `gnull`, `snull`, `dnull`, `salter`,
    /// `dalter`.
    pub fn table_preset(name: &str) -> Option<Self> {
        let (pi00, pi11) = match name {
            "gnull" => (1.0, 0.0),
            "snull" => (0.9, 0.0),
            "dnull" => (0.6, 0.0),
            "salter" => (0.88, 0.02),
            "dalter" => (0.4, 0.2),
            _ => return None,
        };
        let tilde = if pi00 < 1.0 { pi11 / (1.0 - pi00) } else { 0.0 };
        Some(Self {
            alpha_effect: 0.5,
            beta_effect: 0.75,
            ..Self::new(pi00, tilde)
        })
    }

    fn validate(&self) -> Result<()> {
        if self.n <= 3 {
            return Err(Error::Config(format!(
                "mediation regressions need more than 3 subjects, got {}",
                self.n
            )));
        }
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.pi00) || !(0.0..=1.0).contains(&self.tilde_pi1) {
            return Err(Error::Config(
                "pi00 and tilde_pi1 must lie in [0, 1]".into(),
            ));
        }
        check_weights(&self.proportions())
    }
}

/// Two-sided t-test p-values for `alpha_i = 0` (marker on exposure, `n - 2`
/// degrees of freedom) and `beta_i = 0` (outcome on marker and exposure,
/// `n - 3` degrees of freedom). Column 0 is `alpha`, column 1 is `beta`.
pub fn gen_mediation(config: &MediationConfig, seed: u64) -> Result<(PValueMatrix, TruthTable)> {
    config.validate()?;
    let n = config.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // a constant exposure leaves the slope unidentifiable; redraw it
    let x: Vec<f64> = loop {
        let x: Vec<f64> = (0..n)
            .map(|_| f64::from(u8::from(rng.random_bool(0.2))))
            .collect();
        let ones = x.iter().filter(|&&v| v == 1.0).count();
        if ones > 0 && ones < n {
            break x;
        }
    };
    let x_mean = x.iter().sum::<f64>() / n as f64;
    let xc: Vec<f64> = x.iter().map(|v| v - x_mean).collect();
    let sxx: f64 = xc.iter().map(|v| v * v).sum();
    let t_alpha = StudentsT::new(0.0, 1.0, (n - 2) as f64).expect("valid degrees of freedom");
    let t_beta = StudentsT::new(0.0, 1.0, (n - 3) as f64).expect("valid degrees of freedom");
    let two_sided = |dist: &StudentsT, stat: f64| (2.0 * dist.sf(stat.abs())).clamp(0.0, 1.0);

    let props = config.proportions();
    let mut p = Vec::with_capacity(config.m * 2);
    let mut theta = Vec::with_capacity(config.m * 2);
    let mut marker = vec![0.0; n];
    let mut outcome = vec![0.0; n];
    for _ in 0..config.m {
        let c = draw_category(&mut rng, &props);
        let [th_a, th_b] = PointMassConfig::THETAS[c];
        let a = if th_a { config.alpha_effect } else { 0.0 };
        let b = if th_b { config.beta_effect } else { 0.0 };
        for j in 0..n {
            let eps: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            marker[j] = a * x[j] + eps;
            outcome[j] = b * marker[j] + config.beta0 * x[j] + e;
        }

        // marker on (1, x)
        let m_mean = marker.iter().sum::<f64>() / n as f64;
        let sxm: f64 = xc.iter().zip(&marker).map(|(u, v)| u * (v - m_mean)).sum();
        let smm: f64 = marker.iter().map(|v| (v - m_mean).powi(2)).sum();
        let slope = sxm / sxx;
        let rss = (smm - slope * sxm).max(0.0);
        let se = (rss / (n - 2) as f64 / sxx).sqrt();
        p.push(two_sided(&t_alpha, slope / se));

        // outcome on (1, marker, x): residualize both on (1, x) first
        let y_mean = outcome.iter().sum::<f64>() / n as f64;
        let sxy: f64 = xc.iter().zip(&outcome).map(|(u, v)| u * (v - y_mean)).sum();
        let (gm, gy) = (sxm / sxx, sxy / sxx);
        let (mut srr, mut sry, mut syy) = (0.0, 0.0, 0.0);
        for j in 0..n {
            let rm = marker[j] - m_mean - gm * xc[j];
            let ry = outcome[j] - y_mean - gy * xc[j];
            srr += rm * rm;
            sry += rm * ry;
            syy += ry * ry;
        }
        let beta_hat = sry / srr;
        let rss = (syy - beta_hat * sry).max(0.0);
        let se = (rss / (n - 3) as f64 / srr).sqrt();
        p.push(two_sided(&t_beta, beta_hat / se));

        theta.push(th_a);
        theta.push(th_b);
    }
    Ok((
        PValueMatrix::new(p, config.m, 2)?,
        TruthTable::new(theta, 2)?,
    ))
}

/// Replicability study with block-correlated z-values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicabilityConfig {
    pub m: usize,
    pub k: usize,
    pub pi0_global: f64,
    pub pi1: f64,
    /// Controls how signal strength decays across experiments; 1 keeps it
    /// constant.
    pub w0: f64,
    /// Number of equicorrelated blocks within each experiment.
    pub blocks: usize,
    pub rho: f64,
    pub mu_pool: Vec<f64>,
}

impl ReplicabilityConfig {
    pub fn new(k: usize, pi1: f64, pi0_global: f64, w0: f64, blocks: usize) -> Self {
        Self {
            m: 10_000,
            k,
            pi0_global,
            pi1,
            w0,
            blocks,
            rho: 0.5,
            mu_pool: vec![3.0, -3.0, 4.0, -4.0, 5.0, -5.0],
        }
    }

    /// Mean multiplier of experiment `k` (1-based).
    pub fn scale(&self, k: usize) -> f64 {
        2.0 - self.w0 - 2.0 * k as f64 * (1.0 - self.w0) / self.k as f64
    }

    fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config("replicability needs K >= 2".into()));
        }
        if self.blocks == 0 || !self.m.is_multiple_of(self.blocks) {
            return Err(Error::Config(format!(
                "block count {} does not divide m = {}",
                self.blocks, self.m
            )));
        }
        if !(self.w0 > 0.0 && self.w0 <= 1.0) {
            return Err(Error::Config(format!(
                "w0 must lie in (0, 1], got {}",
                self.w0
            )));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!(
                "rho must lie in [0, 1], got {}",
                self.rho
            )));
        }
        let rest = 1.0 - self.pi0_global - self.pi1;
        if self.pi0_global < 0.0 || self.pi1 < 0.0 || rest < -1e-12 {
            return Err(Error::Config(
                "pi0_global and pi1 must be non-negative with sum <= 1".into(),
            ));
        }
        if self.mu_pool.is_empty() {
            return Err(Error::Config("mu_pool must be non-empty".into()));
        }
        Ok(())
    }
}

/// Draws the truth table, means and z-values; p-values are two-sided.
pub fn gen_replicability(
    config: &ReplicabilityConfig,
    seed: u64,
) -> Result<(PValueMatrix, TruthTable, ZMatrix)> {
    config.validate()?;
    let (m, k) = (config.m, config.k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patterns = (1usize << k) - 2;
    let rest = (1.0 - config.pi0_global - config.pi1).max(0.0);
    let mut theta = Vec::with_capacity(m * k);
    for _ in 0..m {
        let u: f64 = rng.random();
        let bits = if u < config.pi0_global {
            0
        } else if u < config.pi0_global + config.pi1 || rest == 0.0 {
            (1 << k) - 1
        } else {
            rng.random_range(1..=patterns)
        };
        theta.extend((0..k).map(|j| bits >> j & 1 == 1));
    }

    let mut mu = vec![0.0; m * k];
    for i in 0..m {
        for j in 0..k {
            if theta[i * k + j] {
                let base = config.mu_pool[rng.random_range(0..config.mu_pool.len())];
                mu[i * k + j] = base * config.scale(j + 1);
            }
        }
    }

    let block = m / config.blocks;
    let (shared, own) = (config.rho.sqrt(), (1.0 - config.rho).sqrt());
    let mut z = vec![0.0; m * k];
    for j in 0..k {
        for b in 0..config.blocks {
            let g: f64 = rng.sample(StandardNormal);
            for i in b * block..(b + 1) * block {
                let e: f64 = rng.sample(StandardNormal);
                z[i * k + j] = mu[i * k + j] + shared * g + own * e;
            }
        }
    }
    let p: Vec<f64> = z.iter().map(|&v| normal_two_sided(v)).collect();
    Ok((
        PValueMatrix::new(p, m, k)?,
        TruthTable::new(theta, k)?,
        ZMatrix::new(z, m, k)?,
    ))
}

/// Independent unit-variance z-values with means in `{0, +mu, -mu}`. Each
/// feature is concordant positive (all means `+mu`) with probability
/// `pi_pos`, concordant negative with probability `pi_neg`, mixed with
/// probability `pi_mixed` (each mean drawn uniformly from the three values),
/// and null otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalConfig {
    pub m: usize,
    pub k: usize,
    pub effect: f64,
    pub pi_pos: f64,
    pub pi_neg: f64,
    pub pi_mixed: f64,
}

impl DirectionalConfig {
    pub fn new(m: usize, k: usize) -> Self {
        Self {
            m,
            k,
            effect: 3.0,
            pi_pos: 0.1,
            pi_neg: 0.1,
            pi_mixed: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.k == 0 {
            return Err(Error::Config("m and K must be at least 1".into()));
        }
        let ps = [self.pi_pos, self.pi_neg, self.pi_mixed];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) || ps.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "directional class probabilities {ps:?} must be in [0, 1] and sum to at most 1"
            )));
        }
        Ok(())
    }
}

/// Returns the z-values and the true sign of every feature: `+1` when all
/// means are positive, `-1` when all are negative, `0` otherwise.
pub fn gen_directional(config: &DirectionalConfig, seed: u64) -> Result<(ZMatrix, Vec<i8>)> {
    config.validate()?;
    let mu = config.effect;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Vec::with_capacity(config.m * config.k);
    let mut signs = Vec::with_capacity(config.m);
    let mut means = vec![0.0; config.k];
    for _ in 0..config.m {
        let u: f64 = rng.random();
        if u < config.pi_pos {
            means.fill(mu);
        } else if u < config.pi_pos + config.pi_neg {
            means.fill(-mu);
        } else if u < config.pi_pos + config.pi_neg + config.pi_mixed {
            for v in means.iter_mut() {
                *v = [0.0, mu, -mu][rng.random_range(0..3)];
            }
        } else {
            means.fill(0.0);
        }
        for &v in &means {
            z.push(v + rng.sample::<f64, _>(StandardNormal));
        }
        signs.push(if means.iter().all(|&v| v > 0.0) {
            1
        } else if means.iter().all(|&v| v < 0.0) {
            -1
        } else {
            0
        });
    }
    Ok((ZMatrix::new(z, config.m, config.k)?, signs))
}

/// FDP, mFDP and power of one rejection set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub fdp: f64,
    pub mfdp: f64,
    pub power: f64,
}

pub fn metrics(rejected: &[usize], truth: &TruthTable) -> Metrics {
    let denom = rejected.len().max(1) as f64;
    let mut false_hits = 0usize;
    let mut weighted = 0usize;
    let mut true_hits = 0usize;
    for &i in rejected {
        let kappa = truth.kappa(i);
        if kappa >= 1 {
            false_hits += 1;
            weighted += kappa;
        } else {
            true_hits += 1;
        }
    }
    let signals = (0..truth.m()).filter(|&i| !truth.is_null(i)).count();
    Metrics {
        fdp: false_hits as f64 / denom,
        mfdp: weighted as f64 / denom,
        power: true_hits as f64 / signals.max(1) as f64,
    }
}

/// Directional FDP and power: a nonzero estimate counts as an error unless
/// it equals the true sign.
pub fn directional_metrics(estimated: &[i8], truth: &[i8]) -> (f64, f64) {
    let made = estimated.iter().filter(|&&s| s != 0).count();
    let wrong = estimated
        .iter()
        .zip(truth)
        .filter(|(&s, &t)| s != 0 && s != t)
        .count();
    let right = made - wrong;
    let signals = truth.iter().filter(|&&t| t != 0).count();
    (
        wrong as f64 / made.max(1) as f64,
        right as f64 / signals.max(1) as f64,
    )
}

/// Benjamini-Hochberg at level `q` on `max_k p_ki`. Returns ascending
/// indices.
pub fn bh_max_p(pvals: &PValueMatrix, q: f64) -> Vec<usize> {
    let pmax: Vec<f64> = pvals
        .iter_rows()
        .map(|r| r.iter().copied().fold(0.0, f64::max))
        .collect();
    let m = pmax.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pmax[a].total_cmp(&pmax[b]).then(a.cmp(&b)));
    let cutoff = (1..=m)
        .rev()
        .find(|&j| pmax[order[j - 1]] <= j as f64 * q / m as f64);
    let mut out: Vec<usize> = match cutoff {
        Some(j) => order[..j].to_vec(),
        None => Vec::new(),
    };
    out.sort_unstable();
    out
}

/// A named data generator with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "lowercase")]
pub enum Preset {
    PointMass(PointMassConfig),
    Mediation(MediationConfig),
    Replicability(ReplicabilityConfig),
    Directional(DirectionalConfig),
}

impl Preset {
    /// Number of experiments the generator produces.
    pub fn k(&self) -> usize {
        match self {
            Preset::PointMass(_) | Preset::Mediation(_) => 2,
            Preset::Replicability(c) => c.k,
            Preset::Directional(c) => c.k,
        }
    }

    /// Methods run by default for this generator.
    pub fn default_methods(&self) -> Vec<Method> {
        match self {
            Preset::Directional(_) => vec![Method::Directional],
            _ => vec![
                Method::Jm(Variant::Max),
                Method::Jm(Variant::Product),
                Method::Jm(Variant::EmptyPoset),
                Method::BhMaxP,
            ],
        }
    }

    /// Stable short hash of the generator configuration, level and method.
    pub fn config_hash(&self, method: Method, q: f64) -> String {
        let payload = serde_json::json!({ "preset": self, "method": method.to_string(), "q": q });
        let digest = Sha256::digest(payload.to_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|item| {
            let (k, v) = item.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "preset option '{item}' is not of the form key=value"
                ))
            })?;
            Ok((k.trim().to_ascii_lowercase(), v.trim().to_string()))
        })
        .collect()
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("cannot parse preset option {key}={v}")))
}

fn unknown(key: &str, name: &str) -> Error {
    Error::Config(format!("unknown option '{key}' for preset '{name}'"))
}

impl FromStr for Preset {
    type Err = Error;

    /// `name[:key=value,...]`, for example `replicability:k=4,pi1=0.03`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let name = name.trim().to_ascii_lowercase();
        let opts = parse_kv(rest)?;
        match name.as_str() {
            "pointmass" | "pointmass-double-null" => {
                let mut c = if name == "pointmass" {
                    PointMassConfig::new(2000)
                } else {
                    PointMassConfig::double_null(2000)
                };
                for (k, v) in &opts {
                    match k.as_str() {
                        "m" => c.m = parse_num(k, v)?,
                        "w00" => c.weights[0] = parse_num(k, v)?,
                        "w01" => c.weights[1] = parse_num(k, v)?,
                        "w10" => c.weights[2] = parse_num(k, v)?,
                        "w11" => c.weights[3] = parse_num(k, v)?,
                        _ => return Err(unknown(k, &name)),
                    }
                }
                c.validate()?;
                Ok(Preset::PointMass(c))
            }
            "mediation" | "gnull" | "snull" | "dnull" | "salter" | "dalter" => {
                let mut c = MediationConfig::table_preset(&name)
                    .unwrap_or_else(|| MediationConfig::new(0.4, 0.5));
                for (k, v) in &opts {
                    match k.as_str() {
                        "n" => c.n = parse_num(k, v)?,
                        "m" => c.m = parse_num(k, v)?,
                        "pi00" => c.pi00 = parse_num(k, v)?,
                        "pi1" | "tilde_pi1" => c.tilde_pi1 = parse_num(k, v)?,
                        "alpha" => c.alpha_effect = parse_num(k, v)?,
                        "beta" => c.beta_effect = parse_num(k, v)?,
                        "beta0" => c.beta0 = parse_num(k, v)?,
                        _ => return Err(unknown(k, &name)),
                    }
                }
                c.validate()?;
                Ok(Preset::Mediation(c))
            }
            "replicability" => {
                let mut c = ReplicabilityConfig::new(2, 0.03, 0.8, 1.0, 100);
                for (k, v) in &opts {
                    match k.as_str() {
                        "m" => c.m = parse_num(k, v)?,
                        "k" => c.k = parse_num(k, v)?,
                        "pi0" | "pi0_global" => c.pi0_global = parse_num(k, v)?,
                        "pi1" => c.pi1 = parse_num(k, v)?,
                        "w0" => c.w0 = parse_num(k, v)?,
                        "b" | "blocks" => c.blocks = parse_num(k, v)?,
                        "rho" => c.rho = parse_num(k, v)?,
                        _ => return Err(unknown(k, &name)),
                    }
                }
                c.validate()?;
                Ok(Preset::Replicability(c))
            }
            "directional" => {
                let mut c = DirectionalConfig::new(5000, 2);
                for (k, v) in &opts {
                    match k.as_str() {
                        "m" => c.m = parse_num(k, v)?,
                        "k" => c.k = parse_num(k, v)?,
                        "mu" | "effect" => c.effect = parse_num(k, v)?,
                        "pos" => c.pi_pos = parse_num(k, v)?,
                        "neg" => c.pi_neg = parse_num(k, v)?,
                        "mixed" => c.pi_mixed = parse_num(k, v)?,
                        _ => return Err(unknown(k, &name)),
                    }
                }
                c.validate()?;
                if c.k < 2 {
                    return Err(Error::Config("directional preset needs K >= 2".into()));
                }
                Ok(Preset::Directional(c))
            }
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }
}

/// A procedure evaluated by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Jm(Variant),
    BhMaxP,
    /// The z-value procedure on the default threshold grid.
    Directional,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Jm(v) => write!(f, "jm.{v}"),
            Method::BhMaxP => f.write_str("bh.maxp"),
            Method::Directional => f.write_str("jm.directional"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "bh.maxp" => Ok(Method::BhMaxP),
            "jm.directional" => Ok(Method::Directional),
            _ => match s.strip_prefix("jm.") {
                Some(v) => Ok(Method::Jm(v.parse()?)),
                None => Err(Error::Config(format!("unknown method '{s}'"))),
            },
        }
    }
}

/// One method on one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRow {
    pub rep: usize,
    pub seed: u64,
    pub method: String,
    pub q: f64,
    pub config_hash: String,
    /// Directional FDP for the z-value procedure.
    pub fdp: f64,
    pub mfdp: f64,
    pub power: f64,
    pub rejections: usize,
    pub runtime_ms: f64,
}

fn run_one(preset: &Preset, method: Method, q: f64, seed: u64) -> Result<(Metrics, usize)> {
    if let Preset::Directional(c) = preset {
        if method != Method::Directional {
            return Err(Error::Config(format!(
                "method {method} needs p-values; directional preset yields z-values"
            )));
        }
        let (z, truth) = gen_directional(c, seed)?;
        let grid = default_threshold_grid(&z);
        if grid.is_empty() {
            return Ok((
                Metrics {
                    fdp: 0.0,
                    mfdp: 0.0,
                    power: 0.0,
                },
                0,
            ));
        }
        let res = run_directional(&z, q, &grid)?;
        let (fdp, power) = directional_metrics(&res.signs, &truth);
        return Ok((
            Metrics {
                fdp,
                mfdp: fdp,
                power,
            },
            res.discoveries(),
        ));
    }
    let (p, truth) = match preset {
        Preset::PointMass(c) => gen_pointmass(c, seed)?,
        Preset::Mediation(c) => gen_mediation(c, seed)?,
        Preset::Replicability(c) => {
            let (p, t, _) = gen_replicability(c, seed)?;
            (p, t)
        }
        Preset::Directional(_) => unreachable!(),
    };
    let rejected = match method {
        Method::Jm(v) => run_jm(&p, &JMConfig::new(q, v).with_seed(seed))?.rejected,
        Method::BhMaxP => bh_max_p(&p, q),
        Method::Directional => {
            return Err(Error::Config(
                "jm.directional needs the directional preset".into(),
            ))
        }
    };
    Ok((metrics(&rejected, &truth), rejected.len()))
}

/// Runs `reps` replications of every method in parallel on the current
/// rayon pool. Rows come back ordered by replication, then by method.
pub fn replicate(
    preset: &Preset,
    methods: &[Method],
    q: f64,
    reps: usize,
    seed: u64,
) -> Result<Vec<ReplicationRow>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Config(format!(
            "target level q must lie in (0, 1), got {q}"
        )));
    }
    let per_rep: Vec<Result<Vec<ReplicationRow>>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let s = seed.wrapping_add(rep as u64);
            methods
                .iter()
                .map(|&method| {
                    let start = Instant::now();
                    let (met, rejections) = run_one(preset, method, q, s)?;
                    Ok(ReplicationRow {
                        rep,
                        seed: s,
                        method: method.to_string(),
                        q,
                        config_hash: preset.config_hash(method, q),
                        fdp: met.fdp,
                        mfdp: met.mfdp,
                        power: met.power,
                        rejections,
                        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
                    })
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(reps * methods.len());
    for r in per_rep {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Per-method averages over replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub reps: usize,
    pub fdp: (f64, f64),
    pub mfdp: (f64, f64),
    pub power: (f64, f64),
}

pub fn summarize(rows: &[ReplicationRow]) -> Vec<MethodSummary> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.method.as_str()) {
            names.push(&r.method);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let pick = |f: fn(&ReplicationRow) -> f64| -> Vec<f64> {
                rows.iter().filter(|r| r.method == name).map(f).collect()
            };
            let fdp = pick(|r| r.fdp);
            MethodSummary {
                method: name.to_string(),
                reps: fdp.len(),
                fdp: mean_se(&fdp),
                mfdp: mean_se(&pick(|r| r.mfdp)),
                power: mean_se(&pick(|r| r.power)),
            }
        })
        .collect()
}
