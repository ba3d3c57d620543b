mod support;

use proptest::prelude::*;
use support::{matrix, reference_kappa};
use rand::Rng;
use trustel_core::annotation::{
    fleiss_kappa, permutation_test_kappa, AnnotationError, PermutationScheme,
};
use trustel_core::seeded_rng;

#[test]
fn two_by_two_hand_example() {
    let k = fleiss_kappa(&[vec![2, 0], vec![1, 1]]).unwrap();
    assert!((k - (-1.0 / 3.0)).abs() < 1e-12);
    let m = matrix(vec![vec![0, 0], vec![0, 1]]);
    assert_eq!(m.counts(), vec![vec![2, 0], vec![1, 1]]);
}

#[test]
fn perfect_agreement() {
    let row: Vec<u8> = (0..50).map(|i| u8::from(i % 3 == 0)).collect();
    let m = matrix(vec![row; 10]);
    assert_eq!(fleiss_kappa(&m.counts()).unwrap(), 1.0);
    let p = permutation_test_kappa(&m, 999, 3, PermutationScheme::WithinRater).unwrap();
    assert!(p <= 0.002, "p = {p}");
    assert_eq!(p, permutation_test_kappa(&m, 999, 3, PermutationScheme::WithinRater).unwrap());
}

#[test]
fn single_category_is_degenerate() {
    let m = matrix(vec![vec![0; 50]; 10]);
    assert_eq!(fleiss_kappa(&m.counts()), Err(AnnotationError::DegenerateAgreement));
}

#[test]
fn random_raters_are_mostly_not_significant() {
    let mut significant = 0;
    for seed in 0..40 {
        let mut rng = seeded_rng(seed);
        let ratings: Vec<Vec<u8>> = (0..10).map(|_| (0..50).map(|_| u8::from(rng.random_bool(0.5))).collect()).collect();
        let p = permutation_test_kappa(&matrix(ratings), 199, seed, PermutationScheme::WithinRater).unwrap();
        if p < 0.05 {
            significant += 1;
        }
    }
    assert!(significant <= 6, "{significant} / 40");
}

#[test]
fn weak_shared_signal_is_detected() {
    // every rater follows a shared per-item lean 75% of the time
    let mut rng = seeded_rng(11);
    let lean: Vec<u8> = (0..50).map(|_| u8::from(rng.random_bool(0.5))).collect();
    let ratings: Vec<Vec<u8>> = (0..10)
        .map(|_| lean.iter().map(|&l| if rng.random_bool(0.75) { l } else { 1 - l }).collect())
        .collect();
    let m = matrix(ratings);
    let k = fleiss_kappa(&m.counts()).unwrap();
    assert!(k > 0.1 && k < 0.4, "kappa = {k}");
    for scheme in [PermutationScheme::WithinRater, PermutationScheme::FlipEachRating] {
        let p = permutation_test_kappa(&m, 999, 2, scheme).unwrap();
        assert!(p < 0.01, "{scheme:?}: p = {p}");
    }
}

proptest! {
    #[test]
    fn agrees_with_reference_and_is_label_and_order_invariant(
        raw in proptest::collection::vec(proptest::collection::vec(0u8..2, 8), 2..7),
        rotate in 0usize..8,
    ) {
        let m = matrix(raw.clone());
        let Ok(k) = fleiss_kappa(&m.counts()) else {
            return Ok(());
        };
        prop_assert!((k - reference_kappa(&raw, 2)).abs() < 1e-12);
        prop_assert!(k <= 1.0);
        let relabeled: Vec<Vec<u8>> = raw.iter().map(|r| r.iter().map(|c| 1 - c).collect()).collect();
        prop_assert!((fleiss_kappa(&matrix(relabeled).counts()).unwrap() - k).abs() < 1e-12);
        let reordered: Vec<Vec<u8>> = raw.iter().map(|r| { let mut r = r.clone(); r.rotate_left(rotate); r }).collect();
        prop_assert!((fleiss_kappa(&matrix(reordered).counts()).unwrap() - k).abs() < 1e-12);
        let all_agree = (0..8).all(|i| raw.iter().all(|r| r[i] == raw[0][i]));
        prop_assert_eq!(k == 1.0, all_agree);
    }
}
