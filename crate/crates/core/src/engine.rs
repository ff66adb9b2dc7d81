//! The sequential joint mirror driver.
//!
//! Every feature is labelled once. Features outside the rejection side and
//! the mirror regions are unmasked from the start. The masked features are
//! then revealed one at a time: each step picks a maximal element of the
//! live poset with the smallest kernel estimate, reveals whether it sat on
//! the rejection side or in a mirror region, and decrements `R` or `A`. The
//! loop stops as soon as `(1 + A) / (zeta * max(R, 1)) <= q`, returning the
//! masked features still on the rejection side.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{PValueMatrix, PointSet, ZMatrix};
use crate::poset::{build_index, less_than_unchecked, PartialOrder};
use crate::regions::{
    classify_directional, classify_unchecked, dfdp_hat, directional_mirror_memberships, fdp_hat,
    fdp_within, DirectionalLabel, MaskingScheme, RegionLabel,
};
use crate::unmask::{select_next, silverman_bandwidth, Bandwidth, QHatState};

/// Which partial order restricts the reveal candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Max,
    Product,
    #[serde(rename = "empty")]
    EmptyPoset,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Max, Variant::Product, Variant::EmptyPoset];

    pub fn order(self) -> PartialOrder {
        match self {
            Variant::Max => PartialOrder::MaxNorm,
            Variant::Product => PartialOrder::Product,
            Variant::EmptyPoset => PartialOrder::Empty,
        }
    }

    /// Short lowercase name used on the command line and in output files.
    pub fn name(self) -> &'static str {
        match self {
            Variant::Max => "max",
            Variant::Product => "product",
            Variant::EmptyPoset => "empty",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "max" => Ok(Variant::Max),
            "product" => Ok(Variant::Product),
            "empty" | "emptyposet" => Ok(Variant::EmptyPoset),
            other => Err(Error::Config(format!(
                "unknown variant '{other}', expected max, product or empty"
            ))),
        }
    }
}

/// How the kernel bandwidth is chosen.
#[derive(Debug, Clone)]
pub enum BandwidthChoice {
    /// Rule-of-thumb bandwidth from the masked vectors.
    Silverman,
    Fixed(Bandwidth),
}

#[derive(Debug, Clone)]
pub struct JMConfig {
    pub q: f64,
    pub variant: Variant,
    pub scheme: MaskingScheme,
    pub seed: u64,
    pub bandwidth: BandwidthChoice,
}

impl JMConfig {
    /// Standard scheme, seed 0, Silverman bandwidth.
    pub fn new(q: f64, variant: Variant) -> Self {
        Self {
            q,
            variant,
            scheme: MaskingScheme::standard(),
            seed: 0,
            bandwidth: BandwidthChoice::Silverman,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_scheme(mut self, scheme: MaskingScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_bandwidth(mut self, bandwidth: BandwidthChoice) -> Self {
        self.bandwidth = bandwidth;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_level(self.q)
    }
}

fn check_level(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "target level q must lie in (0, 1), got {q}"
        )))
    }
}

/// When a feature was revealed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnmaskRank {
    /// Outside every masked region; unmasked before the first step.
    Initial,
    /// Revealed at step `t` (0-based).
    Step(usize),
    /// Still masked when the procedure stopped.
    Never,
}

impl fmt::Display for UnmaskRank {
    /// `-1`, the step number, or `inf`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnmaskRank::Initial => f.write_str("-1"),
            UnmaskRank::Step(t) => write!(f, "{t}"),
            UnmaskRank::Never => f.write_str("inf"),
        }
    }
}

/// Counters before the reveal at step `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub t: usize,
    pub a: usize,
    pub r: usize,
    pub fdp_hat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JMResult {
    /// Rejected feature indices, ascending.
    pub rejected: Vec<usize>,
    pub unmask_rank: Vec<UnmaskRank>,
    pub labels: Vec<RegionLabel>,
    pub fdp_trajectory: Vec<TrajectoryPoint>,
    pub terminal_fdp_hat: f64,
    /// Feature indices in the order they were revealed.
    pub reveal_order: Vec<usize>,
}

/// Labels every row and collects the masked vectors of the non-Outside
/// features, tagged with their feature index.
pub fn mask(pvals: &PValueMatrix, scheme: &MaskingScheme) -> (Vec<RegionLabel>, PointSet) {
    let k = pvals.cols();
    let mut labels = Vec::with_capacity(pvals.rows());
    let mut points = PointSet::new(k);
    let mut folded = vec![0.0; k];
    for (i, row) in pvals.iter_rows().enumerate() {
        let label = classify_unchecked(row, scheme);
        if label.is_masked() {
            for (dst, &t) in folded.iter_mut().zip(row) {
                *dst = scheme.fold(t);
            }
            points
                .push(i, &folded)
                .expect("folded p-values are finite and of matching dimension");
        }
        labels.push(label);
    }
    (labels, points)
}

fn resolve_bandwidth(choice: &BandwidthChoice, points: &PointSet) -> Result<Bandwidth> {
    match choice {
        BandwidthChoice::Fixed(h) => {
            if h.dim() != points.dim() {
                return Err(Error::Config(format!(
                    "fixed bandwidth has dimension {}, data has {} columns",
                    h.dim(),
                    points.dim()
                )));
            }
            Ok(h.clone())
        }
        // with fewer than two masked features no estimate is ever compared
        BandwidthChoice::Silverman if points.len() < 2 => {
            Bandwidth::from_matrix(DMatrix::identity(points.dim(), points.dim()))
        }
        BandwidthChoice::Silverman => silverman_bandwidth(points),
    }
}

/// Runs the joint mirror procedure with the configured variant and masking
/// scheme.
pub fn run_jm(pvals: &PValueMatrix, config: &JMConfig) -> Result<JMResult> {
    config.validate()?;
    let scheme = config.scheme;
    let zeta = scheme.zeta();
    let (labels, points) = mask(pvals, &scheme);
    let bandwidth = resolve_bandwidth(&config.bandwidth, &points)?;

    let mut index = build_index(&points, config.variant.order());
    let mut state = QHatState::new(&points, &bandwidth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut unmask_rank: Vec<UnmaskRank> = labels
        .iter()
        .map(|l| {
            if l.is_masked() {
                UnmaskRank::Never
            } else {
                UnmaskRank::Initial
            }
        })
        .collect();
    let mut a = labels
        .iter()
        .filter(|l| matches!(l, RegionLabel::Mirror(_)))
        .count();
    let mut r = points.len() - a;

    let mut trajectory = vec![TrajectoryPoint {
        t: 0,
        a,
        r,
        fdp_hat: fdp_hat(a, r, zeta),
    }];
    let mut reveal_order = Vec::new();
    let mut t = 0;
    while r > 0 && !fdp_within(a, r, zeta, config.q) {
        let node = select_next(index.roots().as_slice(), &mut state, &mut rng)?;
        let feature = points.id(node);
        let on_rejection_side = labels[feature] == RegionLabel::Rejection;
        index.remove_root(node)?;
        state.reveal(node, on_rejection_side)?;
        if on_rejection_side {
            r -= 1;
        } else {
            a -= 1;
        }
        unmask_rank[feature] = UnmaskRank::Step(t);
        reveal_order.push(feature);
        t += 1;
        trajectory.push(TrajectoryPoint {
            t,
            a,
            r,
            fdp_hat: fdp_hat(a, r, zeta),
        });
    }

    let rejected: Vec<usize> = (0..points.len())
        .filter(|&v| index.is_live(v))
        .map(|v| points.id(v))
        .filter(|&i| labels[i] == RegionLabel::Rejection)
        .collect();
    Ok(JMResult {
        rejected,
        unmask_rank,
        labels,
        terminal_fdp_hat: fdp_hat(a, r, zeta),
        fdp_trajectory: trajectory,
        reveal_order,
    })
}

/// [`run_jm`] under a generalized masking scheme `(alpha_m, lambda, nu)`.
/// The standard scheme `(1/2, 1/2, 1)` gives exactly the [`run_jm`] output.
pub fn run_generalized(
    pvals: &PValueMatrix,
    config: &JMConfig,
    scheme: MaskingScheme,
) -> Result<JMResult> {
    run_jm(pvals, &config.clone().with_scheme(scheme))
}

/// The region implied by the masked set at some step: every live masked
/// vector plus every point below one of them in the partial order.
#[derive(Debug, Clone)]
pub struct ImpliedRegion<'a> {
    points: &'a PointSet,
    order: PartialOrder,
    live: Vec<bool>,
}

impl<'a> ImpliedRegion<'a> {
    /// Region before any reveal.
    pub fn new(points: &'a PointSet, order: PartialOrder) -> Self {
        Self {
            points,
            order,
            live: vec![true; points.len()],
        }
    }

    /// Drops the masked vector of `feature` from the region.
    pub fn reveal(&mut self, feature: usize) {
        if let Some(v) = self.points.ids().iter().position(|&id| id == feature) {
            self.live[v] = false;
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.points.len()).filter(|&v| self.live[v]).any(|v| {
            let p = self.points.point(v);
            p == x || less_than_unchecked(self.order, x, p)
        })
    }
}

/// One evaluated threshold of the directional search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirectionalStep {
    pub threshold: f64,
    /// Mirror-region memberships.
    pub a: usize,
    /// Members of either rejection cube.
    pub r: usize,
    pub dfdp_hat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalResult {
    /// `+1`, `-1` or `0` per feature.
    pub signs: Vec<i8>,
    /// Smallest grid threshold meeting the bound, if any.
    pub threshold: Option<f64>,
    pub dfdp_trajectory: Vec<DirectionalStep>,
}

impl DirectionalResult {
    pub fn discoveries(&self) -> usize {
        self.signs.iter().filter(|&&s| s != 0).count()
    }
}

/// Per-row summary used by the directional search: the row sits in a
/// region exactly when `t <= min_k |z_k|`, and which region is fixed by the
/// sign pattern.
fn directional_profile(z: &ZMatrix) -> (Vec<f64>, Vec<(f64, usize)>) {
    let mut rejection = Vec::new();
    let mut mirror = Vec::new();
    for row in z.iter_rows() {
        let s = row.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
        if s <= 0.0 {
            continue;
        }
        match classify_directional(row, s) {
            DirectionalLabel::PositiveRejection | DirectionalLabel::NegativeRejection => {
                rejection.push(s)
            }
            DirectionalLabel::MirrorPos(_) | DirectionalLabel::MirrorNeg(_) => {
                mirror.push((s, directional_mirror_memberships(row, s)))
            }
            DirectionalLabel::Outside => {}
        }
    }
    rejection.sort_by(f64::total_cmp);
    mirror.sort_by(|x, y| x.0.total_cmp(&y.0));
    (rejection, mirror)
}

/// Sorted distinct `min_k |z_k|` over the rows whose components share one
/// sign: the thresholds at which the rejection count changes.
pub fn default_threshold_grid(z: &ZMatrix) -> Vec<f64> {
    let (mut rejection, _) = directional_profile(z);
    rejection.dedup();
    rejection
}

/// Directional procedure on z-values: scans `grid` from the smallest
/// threshold upwards and stops at the first `t` whose directional FDP
/// estimate is at most `q`, assigning the sign of the rejection cube each
/// feature falls in.
pub fn run_directional(z: &ZMatrix, q: f64, grid: &[f64]) -> Result<DirectionalResult> {
    check_level(q)?;
    if z.cols() < 2 {
        return Err(Error::Config(
            "the directional procedure needs at least two experiments".into(),
        ));
    }
    if grid.is_empty() {
        return Err(Error::Config("threshold grid is empty".into()));
    }
    if grid.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::Config(
            "thresholds must be positive and finite".into(),
        ));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "threshold grid must be strictly increasing".into(),
        ));
    }

    let (rejection, mirror) = directional_profile(z);
    // suffix sums of memberships so A(t) is one lookup
    let mut mirror_tail = vec![0usize; mirror.len() + 1];
    for i in (0..mirror.len()).rev() {
        mirror_tail[i] = mirror_tail[i + 1] + mirror[i].1;
    }

    let mut trajectory = Vec::new();
    let mut threshold = None;
    for &t in grid {
        let r = rejection.len() - rejection.partition_point(|&s| s < t);
        let a = mirror_tail[mirror.partition_point(|&(s, _)| s < t)];
        let d = dfdp_hat(a, r);
        trajectory.push(DirectionalStep {
            threshold: t,
            a,
            r,
            dfdp_hat: d,
        });
        if d <= q {
            threshold = Some(t);
            break;
        }
    }

    let signs = match threshold {
        Some(t) => z
            .iter_rows()
            .map(|row| match classify_directional(row, t) {
                DirectionalLabel::PositiveRejection => 1,
                DirectionalLabel::NegativeRejection => -1,
                _ => 0,
            })
            .collect(),
        None => vec![0; z.rows()],
    };
    Ok(DirectionalResult {
        signs,
        threshold,
        dfdp_trajectory: trajectory,
    })
}
