use jointmirror::engine::{mask, UnmaskRank};
use jointmirror::poset::{build_index, inf_norm};
use jointmirror::regions::classify;
use jointmirror::unmask::{select_next, silverman_bandwidth, QHatState};
use jointmirror::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pmatrix(max_rows: usize, k: usize) -> impl Strategy<Value = PValueMatrix> {
    prop::collection::vec(prop::collection::vec(0.0f64..=1.0, k), 1..max_rows)
        .prop_map(|rows| PValueMatrix::from_rows(&rows).unwrap())
}

fn variant() -> impl Strategy<Value = Variant> {
    prop::sample::select(Variant::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn estimates_stay_in_unit_interval(p in pmatrix(80, 2), seed in any::<u64>()) {
        let (labels, points) = mask(&p, &MaskingScheme::standard());
        prop_assume!(points.len() >= 3);
        let h = silverman_bandwidth(&points).unwrap();
        let mut state = QHatState::new(&points, &h).unwrap();
        let mut live: Vec<usize> = (0..points.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while live.len() > 1 {
            let v = select_next(&live, &mut state, &mut rng).unwrap();
            for &c in &live {
                if let Some(q) = state.qhat(c) {
                    prop_assert!((0.0..=1.0).contains(&q));
                }
            }
            live.retain(|&c| c != v);
            state.reveal(v, labels[points.id(v)] == RegionLabel::Rejection).unwrap();
        }
    }

    #[test]
    fn run_outputs_are_consistent(p in pmatrix(120, 3), v in variant(), q in 0.05f64..0.5, seed in any::<u64>()) {
        let res = run_jm(&p, &JMConfig::new(q, v).with_seed(seed)).unwrap();
        for &i in &res.rejected {
            prop_assert_eq!(res.labels[i], RegionLabel::Rejection);
            prop_assert_eq!(res.unmask_rank[i], UnmaskRank::Never);
        }
        if !res.rejected.is_empty() {
            prop_assert!(res.rejected.len() as f64 >= (1.0 / q).ceil());
            prop_assert!(res.terminal_fdp_hat <= q);
        }
        for (i, label) in res.labels.iter().enumerate() {
            prop_assert_eq!(!label.is_masked(), res.unmask_rank[i] == UnmaskRank::Initial);
        }
        let mut seen = vec![false; p.rows()];
        for (t, &i) in res.reveal_order.iter().enumerate() {
            prop_assert!(!seen[i]);
            seen[i] = true;
            prop_assert_eq!(res.unmask_rank[i], UnmaskRank::Step(t));
        }
    }

    #[test]
    fn labels_match_folded_points(p in pmatrix(60, 4)) {
        let scheme = MaskingScheme::standard();
        let (labels, points) = mask(&p, &scheme);
        let masked: Vec<usize> = (0..p.rows()).filter(|&i| labels[i].is_masked()).collect();
        prop_assert_eq!(points.ids(), &masked[..]);
        for (node, &i) in masked.iter().enumerate() {
            prop_assert_eq!(classify(p.row(i), &scheme).unwrap(), labels[i]);
            prop_assert!(points.point(node).iter().all(|&t| (0.0..0.5).contains(&t)));
        }
    }

    #[test]
    fn maxnorm_roots_share_the_largest_norm(p in pmatrix(60, 2)) {
        let (_, points) = mask(&p, &MaskingScheme::standard());
        prop_assume!(!points.is_empty());
        let index = build_index(&points, PartialOrder::MaxNorm);
        let top = points.iter().map(inf_norm).fold(f64::NEG_INFINITY, f64::max);
        for &r in index.roots().as_slice() {
            prop_assert_eq!(inf_norm(points.point(r)), top);
        }
    }
}
