//! Masking maps, region classification and FDP-type estimators.
//!
//! A p-value vector `p` in `[0,1]^K` is *masked* by folding each component
//! onto the rejection side. Under the standard scheme the rejection side is
//! `[0, 1/2)^K` and the `k`-th mirror region holds vectors whose `k`-th
//! component lies in `(1/2, 1]` while every other component is below `1/2`.
//! The generalized scheme `(alpha_m, lambda, nu)` replaces these with
//! `[0, alpha_m)^K` and `(lambda, nu]`, and folds mirror components with
//! `h(t) = (nu - t) / zeta`.
//!
//! Experiment indices are 0-based throughout: `Mirror(0)` is the mirror
//! region of the first experiment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the masking scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskingScheme {
    alpha_m: f64,
    lambda: f64,
    nu: f64,
    zeta: f64,
}

impl MaskingScheme {
    /// Validates `0 < alpha_m <= lambda < nu <= 1`.
    pub fn new(alpha_m: f64, lambda: f64, nu: f64) -> Result<Self> {
        let ok = alpha_m > 0.0 && alpha_m <= lambda && lambda < nu && nu <= 1.0;
        if !ok {
            return Err(Error::Config(format!(
                "masking scheme requires 0 < alpha_m <= lambda < nu <= 1, got ({alpha_m}, {lambda}, {nu})"
            )));
        }
        Ok(Self {
            alpha_m,
            lambda,
            nu,
            zeta: (nu - lambda) / alpha_m,
        })
    }

    /// The original scheme `(1/2, 1/2, 1)` with `zeta = 1`.
    pub fn standard() -> Self {
        Self {
            alpha_m: 0.5,
            lambda: 0.5,
            nu: 1.0,
            zeta: 1.0,
        }
    }

    pub fn alpha_m(&self) -> f64 {
        self.alpha_m
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Ratio of rejection-side to control-side probability mass for a
    /// uniform null component.
    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn is_standard(&self) -> bool {
        *self == Self::standard()
    }

    /// The folding map `h` applied to one component.
    pub fn fold(&self, t: f64) -> f64 {
        if t > self.lambda && t <= self.nu {
            let folded = (self.nu - t) / self.zeta;
            // rounding may land exactly on alpha_m; keep it on the open side
            if folded >= self.alpha_m {
                self.alpha_m.next_down()
            } else {
                folded
            }
        } else {
            t
        }
    }

    /// Inverse of [`fold`](Self::fold) on the mirror interval.
    pub fn unfold(&self, folded: f64) -> f64 {
        self.nu - self.zeta * folded
    }

    fn in_mirror_interval(&self, t: f64) -> bool {
        t > self.lambda && t <= self.nu
    }
}

impl Default for MaskingScheme {
    fn default() -> Self {
        Self::standard()
    }
}

/// Which region of `[0,1]^K` a p-value vector occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionLabel {
    Rejection,
    /// Mirror region of experiment `k` (0-based).
    Mirror(usize),
    Outside,
}

impl RegionLabel {
    pub fn is_masked(&self) -> bool {
        !matches!(self, RegionLabel::Outside)
    }
}

impl std::fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RegionLabel::Rejection => write!(f, "rejection"),
            RegionLabel::Mirror(k) => write!(f, "mirror{k}"),
            RegionLabel::Outside => write!(f, "outside"),
        }
    }
}

/// Region labels for the z-value procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DirectionalLabel {
    PositiveRejection,
    NegativeRejection,
    /// `z_k <= -t` and every other component `>= t`.
    MirrorPos(usize),
    /// `z_k >= t` and every other component `<= -t`.
    MirrorNeg(usize),
    Outside,
}

impl std::fmt::Display for DirectionalLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DirectionalLabel::PositiveRejection => write!(f, "rejection+"),
            DirectionalLabel::NegativeRejection => write!(f, "rejection-"),
            DirectionalLabel::MirrorPos(k) => write!(f, "mirror+{k}"),
            DirectionalLabel::MirrorNeg(k) => write!(f, "mirror-{k}"),
            DirectionalLabel::Outside => write!(f, "outside"),
        }
    }
}

fn check_pvalues(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Domain("p-value vector must be non-empty".into()));
    }
    match p.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(k) => Err(Error::Domain(format!(
            "component {k} = {} is outside [0, 1]",
            p[k]
        ))),
        None => Ok(()),
    }
}

/// Componentwise `min(p_k, 1 - p_k)`.
pub fn proj(p: &[f64]) -> Result<Vec<f64>> {
    check_pvalues(p)?;
    Ok(p.iter().map(|&t| t.min(1.0 - t)).collect())
}

/// Generalized masking: folds components in `(lambda, nu]` with `h`.
pub fn proj_h(p: &[f64], scheme: &MaskingScheme) -> Result<Vec<f64>> {
    check_pvalues(p)?;
    Ok(p.iter().map(|&t| scheme.fold(t)).collect())
}

/// Classifies `p` into the rejection side, one mirror region, or outside.
pub fn classify(p: &[f64], scheme: &MaskingScheme) -> Result<RegionLabel> {
    check_pvalues(p)?;
    Ok(classify_unchecked(p, scheme))
}

pub(crate) fn classify_unchecked(p: &[f64], scheme: &MaskingScheme) -> RegionLabel {
    let mut mirror = None;
    for (k, &t) in p.iter().enumerate() {
        if t < scheme.alpha_m {
            continue;
        }
        if scheme.in_mirror_interval(t) && mirror.is_none() {
            mirror = Some(k);
        } else {
            return RegionLabel::Outside;
        }
    }
    match mirror {
        Some(k) => RegionLabel::Mirror(k),
        None => RegionLabel::Rejection,
    }
}

/// FDP estimate `(1 + A) / (zeta * max(R, 1))`.
pub fn fdp_hat(a: usize, r: usize, zeta: f64) -> f64 {
    (1 + a) as f64 / (zeta * r.max(1) as f64)
}

/// Stopping test `fdp_hat(a, r, zeta) <= q`, evaluated as
/// `1 + A <= q * zeta * max(R, 1)`; equality stops.
pub fn fdp_within(a: usize, r: usize, zeta: f64, q: f64) -> bool {
    (1 + a) as f64 <= q * zeta * r.max(1) as f64
}

/// Directional FDP estimate `(1 + A) / max(R, 1)` where `A` counts all
/// mirror-region memberships and `R` the members of either rejection cube.
pub fn dfdp_hat(a_total: usize, r_total: usize) -> f64 {
    (1 + a_total) as f64 / r_total.max(1) as f64
}

/// Sign pattern of `z` relative to the threshold `t`: for each component,
/// `+1` if `z_k >= t`, `-1` if `z_k <= -t`, `0` otherwise.
fn tail_signs(z: &[f64], t: f64) -> impl Iterator<Item = i8> + '_ {
    z.iter().map(move |&v| {
        if v >= t {
            1
        } else if v <= -t {
            -1
        } else {
            0
        }
    })
}

/// Classifies a z-vector against the upper cube `[t, inf)^K`, its negation
/// and the `2K` mirror regions.
///
/// For `K = 2` a vector with one component in each tail belongs to two
/// mirror regions at once (`MirrorPos(k)` and `MirrorNeg(j)`); the label
/// with the lower experiment index is returned. For `K = 1` the mirror
/// regions coincide with the rejection cubes and the rejection label wins.
pub fn classify_directional(z: &[f64], t: f64) -> DirectionalLabel {
    let k_dim = z.len();
    let (mut pos, mut neg) = (0usize, 0usize);
    let (mut first_pos, mut first_neg) = (usize::MAX, usize::MAX);
    for (k, s) in tail_signs(z, t).enumerate() {
        match s {
            1 => {
                pos += 1;
                first_pos = first_pos.min(k);
            }
            -1 => {
                neg += 1;
                first_neg = first_neg.min(k);
            }
            _ => return DirectionalLabel::Outside,
        }
    }
    if pos == k_dim {
        DirectionalLabel::PositiveRejection
    } else if neg == k_dim {
        DirectionalLabel::NegativeRejection
    } else if neg == 1 && pos == 1 {
        if first_neg < first_pos {
            DirectionalLabel::MirrorPos(first_neg)
        } else {
            DirectionalLabel::MirrorNeg(first_pos)
        }
    } else if neg == 1 {
        DirectionalLabel::MirrorPos(first_neg)
    } else if pos == 1 {
        DirectionalLabel::MirrorNeg(first_pos)
    } else {
        DirectionalLabel::Outside
    }
}

/// Number of the `2K` mirror regions `A^{k,+}`, `A^{k,-}` containing `z`.
pub fn directional_mirror_memberships(z: &[f64], t: f64) -> usize {
    let k_dim = z.len();
    if k_dim < 2 {
        return 0;
    }
    let mut pos = 0usize;
    let mut neg = 0usize;
    for s in tail_signs(z, t) {
        match s {
            1 => pos += 1,
            -1 => neg += 1,
            _ => return 0,
        }
    }
    usize::from(neg == 1) + usize::from(pos == 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn proj_examples() {
        assert!(close(&proj(&[0.3, 0.4]).unwrap(), &[0.3, 0.4]));
        assert!(close(&proj(&[0.7, 0.2]).unwrap(), &[0.3, 0.2]));
        assert!(close(&proj(&[0.5, 0.9]).unwrap(), &[0.5, 0.1]));
    }

    #[test]
    fn proj_rejects_out_of_domain() {
        assert!(matches!(proj(&[0.2, 1.2]), Err(Error::Domain(_))));
        assert!(matches!(proj(&[-0.1]), Err(Error::Domain(_))));
    }

    #[test]
    fn proj_h_examples() {
        let std = MaskingScheme::standard();
        assert!(close(&proj_h(&[0.7, 0.2], &std).unwrap(), &[0.3, 0.2]));

        let gen = MaskingScheme::new(0.25, 0.5, 1.0).unwrap();
        assert_eq!(gen.zeta(), 2.0);
        assert!(close(&proj_h(&[0.8, 0.1], &gen).unwrap(), &[0.1, 0.1]));
        assert!(close(&proj_h(&[0.2, 0.1], &gen).unwrap(), &[0.2, 0.1]));
    }

    #[test]
    fn scheme_validation() {
        assert!(MaskingScheme::new(0.0, 0.5, 1.0).is_err());
        assert!(MaskingScheme::new(0.6, 0.5, 1.0).is_err());
        assert!(MaskingScheme::new(0.25, 0.5, 0.5).is_err());
        assert!(MaskingScheme::new(0.25, 0.5, 1.1).is_err());
        assert!(MaskingScheme::new(0.5, 0.5, 1.0).unwrap().is_standard());
    }

    #[test]
    fn classify_examples() {
        let s = MaskingScheme::standard();
        assert_eq!(classify(&[0.3, 0.4], &s).unwrap(), RegionLabel::Rejection);
        assert_eq!(classify(&[0.7, 0.2], &s).unwrap(), RegionLabel::Mirror(0));
        assert_eq!(classify(&[0.7, 0.6], &s).unwrap(), RegionLabel::Outside);
    }

    #[test]
    fn classify_boundaries() {
        let s = MaskingScheme::standard();
        // a component exactly at alpha_m sends the vector outside
        assert_eq!(classify(&[0.5, 0.2], &s).unwrap(), RegionLabel::Outside);
        assert_eq!(classify(&[0.0, 0.2], &s).unwrap(), RegionLabel::Rejection);
        assert_eq!(classify(&[1.0, 0.2], &s).unwrap(), RegionLabel::Mirror(0));

        let g = MaskingScheme::new(0.25, 0.5, 0.9).unwrap();
        assert_eq!(classify(&[0.95, 0.1], &g).unwrap(), RegionLabel::Outside);
        assert_eq!(classify(&[0.3, 0.1], &g).unwrap(), RegionLabel::Outside);
        assert_eq!(classify(&[0.1, 0.9], &g).unwrap(), RegionLabel::Mirror(1));
    }

    #[test]
    fn fdp_examples() {
        assert_eq!(fdp_hat(2, 1, 1.0), 3.0);
        assert_eq!(fdp_hat(0, 0, 1.0), 1.0);
        assert_eq!(fdp_hat(4, 20, 2.0), 0.125);
        assert!(fdp_within(0, 20, 1.0, 0.05));
        assert!(!fdp_within(0, 19, 1.0, 0.05));
    }

    #[test]
    fn dfdp_examples() {
        assert_eq!(dfdp_hat(3, 10), 0.4);
        assert_eq!(dfdp_hat(0, 0), 1.0);
        assert_eq!(dfdp_hat(1, 4), 0.5);
    }

    #[test]
    fn directional_examples() {
        assert_eq!(
            classify_directional(&[2.1, 3.0], 2.0),
            DirectionalLabel::PositiveRejection
        );
        assert_eq!(
            classify_directional(&[-2.1, 3.0], 2.0),
            DirectionalLabel::MirrorPos(0)
        );
        assert_eq!(
            classify_directional(&[1.0, 3.0], 2.0),
            DirectionalLabel::Outside
        );
        assert_eq!(
            classify_directional(&[-3.0, -4.0, 5.0], 2.0),
            DirectionalLabel::MirrorNeg(2)
        );
        assert_eq!(
            classify_directional(&[-3.0, 4.0, 5.0], 2.0),
            DirectionalLabel::MirrorPos(0)
        );
        assert_eq!(
            classify_directional(&[-3.0, -4.0, 5.0, 6.0], 2.0),
            DirectionalLabel::Outside
        );
    }

    #[test]
    fn directional_memberships_count_both_mirrors_for_two_experiments() {
        assert_eq!(directional_mirror_memberships(&[-2.1, 3.0], 2.0), 2);
        assert_eq!(directional_mirror_memberships(&[-3.0, 4.0, 5.0], 2.0), 1);
        assert_eq!(directional_mirror_memberships(&[3.0, 4.0, 5.0], 2.0), 0);
        assert_eq!(directional_mirror_memberships(&[-3.0, 0.5, 5.0], 2.0), 0);
    }

    fn pvec(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..=1.0, k)
    }

    fn scheme() -> impl Strategy<Value = MaskingScheme> {
        (0.05f64..0.5, 0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, l, n)| {
            let lambda = a + l * (0.9 - a);
            let nu = lambda + (1.0 - lambda) * (0.05 + 0.95 * n);
            MaskingScheme::new(a, lambda, nu.min(1.0)).unwrap()
        })
    }

    proptest! {
        #[test]
        fn proj_is_idempotent(p in pvec(4)) {
            let once = proj(&p).unwrap();
            prop_assert_eq!(proj(&once).unwrap(), once.clone());
            prop_assert!(once.iter().all(|&v| (0.0..=0.5).contains(&v)));
        }

        #[test]
        fn standard_proj_h_equals_proj(p in pvec(3)) {
            prop_assert_eq!(proj_h(&p, &MaskingScheme::standard()).unwrap(), proj(&p).unwrap());
        }

        #[test]
        fn mirror_points_fold_onto_rejection_side(p in pvec(3), s in scheme()) {
            if let RegionLabel::Mirror(k) = classify(&p, &s).unwrap() {
                let folded = proj_h(&p, &s).unwrap();
                prop_assert!(folded.iter().all(|&v| v < s.alpha_m()));
                prop_assert_eq!(classify(&folded, &s).unwrap(), RegionLabel::Rejection);
                let back = s.unfold(folded[k]);
                prop_assert!((back - p[k]).abs() < 1e-12);
                prop_assert!(back > s.lambda() - 1e-12 && back <= s.nu() + 1e-12);
            }
        }

        #[test]
        fn directional_negation_symmetry(z in prop::collection::vec(-6.0f64..6.0, 1..5), t in 0.5f64..4.0) {
            let neg: Vec<f64> = z.iter().map(|v| -v).collect();
            let expected = match classify_directional(&z, t) {
                DirectionalLabel::PositiveRejection => DirectionalLabel::NegativeRejection,
                DirectionalLabel::NegativeRejection => DirectionalLabel::PositiveRejection,
                DirectionalLabel::MirrorPos(k) => DirectionalLabel::MirrorNeg(k),
                DirectionalLabel::MirrorNeg(k) => DirectionalLabel::MirrorPos(k),
                DirectionalLabel::Outside => DirectionalLabel::Outside,
            };
            prop_assert_eq!(classify_directional(&neg, t), expected);
            prop_assert_eq!(
                directional_mirror_memberships(&z, t),
                directional_mirror_memberships(&neg, t)
            );
        }
    }
}
