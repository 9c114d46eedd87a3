mod common;

use cgcn::metrics::{accuracy, ari, evaluate, macro_f1, nmi};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

#[test]
fn exhaustive_small_labelings_match_oracles() {
    let o = common::exhaustive_metrics_oracle();
    assert!(o.pairs > 500_000);
    assert_eq!(o.max_acc_err, 0.0);
    assert!(o.max_ari_err < 1e-9, "ari {}", o.max_ari_err);
    assert!(o.max_nmi_err < 1e-9, "nmi {}", o.max_nmi_err);
}

#[test]
fn hand_derived_values() {
    let t = [0, 0, 1, 1];
    assert_eq!(accuracy(&t, &[0, 1, 0, 1]).unwrap(), 0.5);
    assert!(nmi(&t, &[0, 1, 0, 1]).unwrap().abs() < 1e-12);
    assert!((ari(&t, &[0, 1, 0, 1]).unwrap() + 0.5).abs() < 1e-12);
    assert!((macro_f1(&t, &[0, 0, 0, 1]).unwrap() - 11.0 / 15.0).abs() < 1e-12);
    assert_eq!(nmi(&t, &[3, 3, 3, 3]).unwrap(), 0.0);
    assert_eq!(ari(&[1, 1, 1], &[2, 2, 2]).unwrap(), 1.0);

    // true [0,0,0,1,1,1], pred [0,0,1,1,2,2]:
    // H(T) = ln 2, H(P) = ln 3, MI = ln 2 − (1/3)·ln 2 = (2/3)·ln 2.
    let t6 = [0, 0, 0, 1, 1, 1];
    let p6 = [0, 0, 1, 1, 2, 2];
    let expected_nmi = (2.0 / 3.0) * 2f64.ln() / ((2f64.ln() + 3f64.ln()) / 2.0);
    assert!((nmi(&t6, &p6).unwrap() - expected_nmi).abs() < 1e-12);
    // Pairs: same-in-both 2, same-true 6, same-pred 3, total 15.
    // expected = 18/15 = 1.2, max = 4.5 → ARI = 0.8 / 3.3.
    assert!((ari(&t6, &p6).unwrap() - 0.8 / 3.3).abs() < 1e-12);
}

#[test]
fn ari_of_independent_random_labelings_is_near_zero() {
    let mut total = 0.0;
    for seed in 0..50 {
        let mut r = common::rng(10_000 + seed);
        let t: Vec<usize> = (0..1000).map(|_| r.random_range(0..5)).collect();
        let p: Vec<usize> = (0..1000).map(|_| r.random_range(0..5)).collect();
        total += ari(&t, &p).unwrap();
    }
    let mean = total / 50.0;
    assert!(mean.abs() <= 0.02, "mean ARI {mean}");
}

proptest! {
    #[test]
    fn metrics_are_invariant_to_relabeling(
        pairs in prop::collection::vec((0usize..5, 0usize..5), 1..60),
        seed in any::<u64>(),
    ) {
        let t: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let p: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let mut perm: Vec<usize> = (0..8).collect();
        perm.shuffle(&mut common::rng(seed));
        let relabeled: Vec<usize> = p.iter().map(|&c| perm[c] + 10).collect();
        prop_assert_eq!(evaluate(&t, &p).unwrap(), evaluate(&t, &relabeled).unwrap());
    }

    #[test]
    fn accuracy_matches_brute_force(
        pairs in prop::collection::vec((0usize..3, 0usize..4), 1..9),
    ) {
        let t: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let p: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        prop_assert_eq!(accuracy(&t, &p).unwrap(), common::brute_force_accuracy(&t, &p));
    }

    #[test]
    fn scores_stay_in_range(
        pairs in prop::collection::vec((0usize..6, 0usize..6), 1..80),
    ) {
        let t: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let p: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let s = evaluate(&t, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&s.acc));
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&s.nmi));
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&s.ari));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&s.f1));
        prop_assert!(s.f1 <= 1.0 + 1e-12);
        let self_score = evaluate(&t, &t).unwrap();
        prop_assert_eq!(self_score.acc, 1.0);
        prop_assert!((self_score.ari - 1.0).abs() < 1e-12);
    }
}
