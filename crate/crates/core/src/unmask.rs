//! Kernel estimate of the probability that a masked vector sits on the
//! rejection side, and the rule picking the next feature to reveal.
//!
//! For a masked candidate `i` the estimate is `num_i / den_i` where, over the
//! already revealed features `i'` that were initially masked,
//!
//! ```text
//! den_i = sum v_H(p~_i, p~_i')
//! num_i = sum 1{p_i' on rejection side} v_H(p~_i, p~_i')
//! ```
//!
//! and `v_H(x, y) = exp(-(x - y)' H^{-1} (x - y) / 2)` is a Gaussian kernel
//! normalized to 1 at the origin. Both sums are separable, so revealing a
//! feature only adds one weight to each tracked candidate.
//!
//! Sums accumulate in reveal order. A candidate first tracked at step `t`
//! replays the reveals so far in the same order, so its sums are bit-identical
//! to having been tracked from the start.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::PointSet;
use crate::poset::inf_norm;

/// Weights below this are flushed to zero.
pub const WEIGHT_FLOOR: f64 = 1e-300;

/// Relative ridge added to the sample covariance before scaling.
pub const COVARIANCE_RIDGE: f64 = 1e-8;

/// Tracked-candidate count above which reveals update in parallel.
const PARALLEL_MIN: usize = 2048;

/// Symmetric positive-definite bandwidth matrix `H`.
#[derive(Debug, Clone)]
pub struct Bandwidth {
    matrix: DMatrix<f64>,
    // lower Cholesky factor L with H = L L'
    chol: DMatrix<f64>,
}

impl Bandwidth {
    /// Validates symmetry and positive-definiteness.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::Config(format!(
                "bandwidth must be a non-empty square matrix, got {} x {}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("bandwidth entries must be finite".into()));
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        if (&matrix - matrix.transpose()).amax() > 1e-12 * scale {
            return Err(Error::Config("bandwidth matrix is not symmetric".into()));
        }
        let chol = matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Config("bandwidth matrix is not positive definite".into()))?
            .l();
        Ok(Self { matrix, chol })
    }

    /// Builds a `k x k` bandwidth from row-major values.
    pub fn from_row_major(k: usize, values: &[f64]) -> Result<Self> {
        if values.len() != k * k {
            return Err(Error::Config(format!(
                "expected {} bandwidth entries for dimension {k}, got {}",
                k * k,
                values.len()
            )));
        }
        Self::from_matrix(DMatrix::from_row_slice(k, k, values))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `L^{-1} x`, so that `|L^{-1}(x - y)|^2 = (x - y)' H^{-1} (x - y)`.
    pub fn whiten(&self, x: &[f64]) -> Vec<f64> {
        let k = self.dim();
        let mut w = vec![0.0; k];
        for i in 0..k {
            let mut s = x[i];
            for j in 0..i {
                s -= self.chol[(i, j)] * w[j];
            }
            w[i] = s / self.chol[(i, i)];
        }
        w
    }
}

/// `{4 / (n (K + 2))}^{2 / (K + 4)}`.
pub fn silverman_factor(n: usize, k: usize) -> f64 {
    let base = 4.0 / (n as f64 * (k as f64 + 2.0));
    base.powf(2.0 / (k as f64 + 4.0))
}

/// Unbiased sample covariance of the rows of `points`.
pub fn sample_covariance(points: &PointSet) -> DMatrix<f64> {
    let k = points.dim();
    let n = points.len();
    let mut mean = vec![0.0; k];
    for p in points.iter() {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::zeros(k, k);
    for p in points.iter() {
        for a in 0..k {
            let da = p[a] - mean[a];
            for b in 0..=a {
                cov[(a, b)] += da * (p[b] - mean[b]);
            }
        }
    }
    let denom = (n as f64 - 1.0).max(1.0);
    for a in 0..k {
        for b in 0..=a {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    cov
}

/// Rule-of-thumb bandwidth `{4/(n(K+2))}^{2/(K+4)} (S + ridge I)`.
pub fn silverman_bandwidth(points: &PointSet) -> Result<Bandwidth> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "bandwidth needs at least 2 points, got {n}"
        )));
    }
    let k = points.dim();
    let mut s = sample_covariance(points);
    let trace = s.trace();
    let ridge = if trace > 0.0 {
        COVARIANCE_RIDGE * trace / k as f64
    } else {
        COVARIANCE_RIDGE
    };
    for d in 0..k {
        s[(d, d)] += ridge;
    }
    Bandwidth::from_matrix(s * silverman_factor(n, k))
}

#[inline]
fn weight_from_sq(d2: f64) -> f64 {
    let w = (-0.5 * d2).exp();
    if w < WEIGHT_FLOOR {
        0.0
    } else {
        w
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `K_H(x - y) / K_H(0)` for the Gaussian kernel.
pub fn kernel_weight(h: &Bandwidth, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != h.dim() || y.len() != h.dim() {
        return Err(Error::Domain(format!(
            "kernel arguments have dimensions {} and {}, bandwidth has {}",
            x.len(),
            y.len(),
            h.dim()
        )));
    }
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let w = h.whiten(&diff);
    Ok(weight_from_sq(w.iter().map(|v| v * v).sum()))
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    node: usize,
    num: f64,
    den: f64,
}

/// Numerator and denominator sums for the tracked candidates.
#[derive(Debug, Clone)]
pub struct QHatState {
    dim: usize,
    raw: Vec<f64>,
    white: Vec<f64>,
    seeds: Vec<(usize, bool)>,
    revealed: Vec<bool>,
    entries: Vec<Entry>,
    slot: Vec<usize>,
}

const UNTRACKED: usize = usize::MAX;

impl QHatState {
    /// Empty state over the masked `points`; nothing revealed or tracked.
    pub fn new(points: &PointSet, bandwidth: &Bandwidth) -> Result<Self> {
        if points.dim() != bandwidth.dim() {
            return Err(Error::Config(format!(
                "bandwidth dimension {} does not match point dimension {}",
                bandwidth.dim(),
                points.dim()
            )));
        }
        let mut white = Vec::with_capacity(points.coords().len());
        for p in points.iter() {
            white.extend(bandwidth.whiten(p));
        }
        Ok(Self {
            dim: points.dim(),
            raw: points.coords().to_vec(),
            white,
            seeds: Vec::new(),
            revealed: vec![false; points.len()],
            entries: Vec::new(),
            slot: vec![UNTRACKED; points.len()],
        })
    }

    /// State with `seeds` already revealed (in the given order) and sums
    /// computed for every node in `candidates`.
    pub fn init(
        points: &PointSet,
        bandwidth: &Bandwidth,
        candidates: &[usize],
        seeds: &[(usize, bool)],
    ) -> Result<Self> {
        let mut state = Self::new(points, bandwidth)?;
        for &(node, on_rejection_side) in seeds {
            state.check_node(node)?;
            if state.revealed[node] {
                return Err(Error::Contract(format!("seed {node} listed twice")));
            }
            state.revealed[node] = true;
            state.seeds.push((node, on_rejection_side));
        }
        state.track_many(candidates)?;
        Ok(state)
    }

    fn check_node(&self, node: usize) -> Result<()> {
        if node >= self.revealed.len() {
            return Err(Error::Contract(format!("node {node} out of range")));
        }
        Ok(())
    }

    fn white(&self, node: usize) -> &[f64] {
        &self.white[node * self.dim..(node + 1) * self.dim]
    }

    /// Masked (unwhitened) vector of `node`.
    pub fn point(&self, node: usize) -> &[f64] {
        &self.raw[node * self.dim..(node + 1) * self.dim]
    }

    fn scratch_sums(&self, node: usize) -> (f64, f64) {
        let x = self.white(node);
        let (mut num, mut den) = (0.0, 0.0);
        for &(s, on_rej) in &self.seeds {
            let w = weight_from_sq(sq_dist(x, self.white(s)));
            den += w;
            if on_rej {
                num += w;
            }
        }
        (num, den)
    }

    pub fn is_tracked(&self, node: usize) -> bool {
        self.slot.get(node).is_some_and(|&s| s != UNTRACKED)
    }

    pub fn is_revealed(&self, node: usize) -> bool {
        self.revealed.get(node).copied().unwrap_or(false)
    }

    /// Starts tracking `nodes`, computing their sums over all reveals so far.
    pub fn track_many(&mut self, nodes: &[usize]) -> Result<()> {
        let mut fresh = Vec::new();
        for &node in nodes {
            self.check_node(node)?;
            if self.revealed[node] {
                return Err(Error::Contract(format!("node {node} is already revealed")));
            }
            if self.slot[node] == UNTRACKED {
                fresh.push(node);
            }
        }
        fresh.sort_unstable();
        fresh.dedup();
        let sums: Vec<(f64, f64)> = if fresh.len() * self.seeds.len() >= PARALLEL_MIN * 8 {
            fresh.par_iter().map(|&v| self.scratch_sums(v)).collect()
        } else {
            fresh.iter().map(|&v| self.scratch_sums(v)).collect()
        };
        for (node, (num, den)) in fresh.into_iter().zip(sums) {
            self.slot[node] = self.entries.len();
            self.entries.push(Entry { node, num, den });
        }
        Ok(())
    }

    pub fn track(&mut self, node: usize) -> Result<()> {
        self.track_many(&[node])
    }

    /// Reveals `node`: it leaves the candidate pool and every tracked
    /// candidate's denominator (and numerator, if `on_rejection_side`) gains
    /// its kernel weight.
    pub fn reveal(&mut self, node: usize, on_rejection_side: bool) -> Result<()> {
        self.check_node(node)?;
        if self.revealed[node] {
            return Err(Error::Contract(format!("node {node} revealed twice")));
        }
        self.revealed[node] = true;
        let slot = self.slot[node];
        if slot != UNTRACKED {
            self.entries.swap_remove(slot);
            if let Some(moved) = self.entries.get(slot) {
                self.slot[moved.node] = slot;
            }
            self.slot[node] = UNTRACKED;
        }

        let dim = self.dim;
        let white = &self.white;
        let x = &white[node * dim..(node + 1) * dim];
        let update = |e: &mut Entry| {
            let w = weight_from_sq(sq_dist(x, &white[e.node * dim..(e.node + 1) * dim]));
            e.den += w;
            if on_rejection_side {
                e.num += w;
            }
        };
        if self.entries.len() >= PARALLEL_MIN {
            self.entries.par_iter_mut().for_each(update);
        } else {
            self.entries.iter_mut().for_each(update);
        }
        self.seeds.push((node, on_rejection_side));
        Ok(())
    }

    /// `(num, den)` for a tracked candidate.
    pub fn sums(&self, node: usize) -> Option<(f64, f64)> {
        let s = *self.slot.get(node)?;
        (s != UNTRACKED).then(|| (self.entries[s].num, self.entries[s].den))
    }

    /// `num / den`, or `None` when untracked or `den == 0`.
    pub fn qhat(&self, node: usize) -> Option<f64> {
        self.sums(node)
            .and_then(|(num, den)| (den > 0.0).then(|| num / den))
    }

    /// Revealed nodes in reveal order with their side.
    pub fn seeds(&self) -> &[(usize, bool)] {
        &self.seeds
    }

    pub fn tracked(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.node)
    }
}

/// Picks the candidate with the smallest estimate. Candidates with
/// `den = 0` rank after every candidate with a defined estimate; when none
/// is defined the candidate with the largest infinity-norm masked vector
/// wins. Exact ties are broken uniformly at random with `rng`.
pub fn select_next<R: Rng + ?Sized>(
    candidates: &[usize],
    state: &mut QHatState,
    rng: &mut R,
) -> Result<usize> {
    match candidates {
        [] => Err(Error::Contract(
            "cannot select from an empty candidate set".into(),
        )),
        [only] => Ok(*only),
        _ => {
            state.track_many(candidates)?;
            let mut best_q = f64::INFINITY;
            let mut ties: Vec<usize> = Vec::new();
            for &c in candidates {
                if let Some(q) = state.qhat(c) {
                    if q < best_q {
                        best_q = q;
                        ties.clear();
                        ties.push(c);
                    } else if q == best_q {
                        ties.push(c);
                    }
                }
            }
            if ties.is_empty() {
                let mut best_norm = f64::NEG_INFINITY;
                for &c in candidates {
                    let norm = inf_norm(state.point(c));
                    if norm > best_norm {
                        best_norm = norm;
                        ties.clear();
                        ties.push(c);
                    } else if norm == best_norm {
                        ties.push(c);
                    }
                }
            }
            Ok(break_tie(ties, rng))
        }
    }
}

fn break_tie<R: Rng + ?Sized>(mut ties: Vec<usize>, rng: &mut R) -> usize {
    if ties.len() == 1 {
        return ties[0];
    }
    ties.sort_unstable();
    ties.dedup();
    ties[rng.random_range(0..ties.len())]
}
