mod common;

use bimatch_core::{
    mask_weighted_scores, match_frames, reduce_query_max, similarity_matrix, topk_filter,
    FeatureMap, MatchMode, ProbMask, TopK,
};
use common::{oracle_match, random_features, random_mask, rng};
use proptest::prelude::*;

fn bij(k: usize) -> MatchMode {
    MatchMode::Bijective(TopK::new(k).unwrap())
}

/// Reorders the pixels of a single-row map.
fn permute_pixels(f: &FeatureMap, perm: &[usize]) -> FeatureMap {
    let n = f.pixels();
    let mut data = vec![0.0; f.data().len()];
    for c in 0..f.channels() {
        for (dst, &src) in perm.iter().enumerate() {
            data[c * n + dst] = f.plane(c)[src];
        }
    }
    FeatureMap::new(f.channels(), f.height(), f.width(), data).unwrap()
}

#[test]
fn fused_pass_equals_composed_steps() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let a = random_features(&mut r, 9, 5, 6, seed % 2 == 0);
        let b = random_features(&mut r, 9, 4, 7, seed % 2 == 0);
        let m = random_mask(&mut r, 5, 6, false);
        for k in [TopK::Infinite, TopK::new(1).unwrap(), TopK::new(5).unwrap()] {
            let s = topk_filter(&similarity_matrix(&a, &b).unwrap(), k);
            let (sb, sf) = mask_weighted_scores(&s, &m).unwrap();
            let composed = reduce_query_max(&sb, &sf).unwrap();
            let fused = match_frames(&a, &b, &m, MatchMode::Bijective(k)).unwrap();
            assert_eq!(composed, fused);
        }
    }
}

#[test]
fn empty_reference_mask_gives_zero_foreground() {
    let mut r = rng(1);
    let a = random_features(&mut r, 4, 3, 3, false);
    let b = random_features(&mut r, 4, 3, 3, false);
    let m = ProbMask::constant(3, 3, 0.0).unwrap();
    let y = match_frames(&a, &b, &m, bij(2)).unwrap();
    assert!(y.y_fg.iter().all(|&v| v == 0.0));
}

#[test]
fn query_pixel_nobody_selects_falls_to_row_minimum() {
    // Two reference pixels along +x and +y; the query holds +x, +y and the
    // diagonal. Both reference pixels rank the diagonal second, so with K=1 it
    // only sees the row minima.
    let a = FeatureMap::new(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let b = FeatureMap::new(2, 1, 3, vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
    let m = ProbMask::from_foreground(1, 2, vec![1.0, 1.0]).unwrap();
    let sur = match_frames(&a, &b, &m, MatchMode::Surjective).unwrap();
    let one = match_frames(&a, &b, &m, bij(1)).unwrap();
    assert!((sur.y_fg[2] - (0.5 + 0.5 * 0.5f32.sqrt())).abs() < 1e-6);
    assert_eq!(one.y_fg, vec![1.0, 1.0, 0.5]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn agrees_with_literal_oracle(seed in any::<u64>(), c in 1usize..12, h in 1usize..6, w in 1usize..6,
                                  quantized in any::<bool>(), k in 0usize..40) {
        let mut r = rng(seed);
        let a = random_features(&mut r, c, h, w, quantized);
        let b = random_features(&mut r, c, w, h, quantized);
        let m = random_mask(&mut r, h, w, false);
        let (mode, kk) = if k == 0 { (MatchMode::Surjective, None) } else { (bij(k), Some(k)) };
        let got = match_frames(&a, &b, &m, mode).unwrap();
        let (y_bg, y_fg) = oracle_match(&a, &b, &m, kk);
        prop_assert_eq!(got.y_bg, y_bg);
        prop_assert_eq!(got.y_fg, y_fg);
    }

    #[test]
    fn large_k_is_surjective(seed in any::<u64>(), extra in 0usize..100) {
        let mut r = rng(seed);
        let a = random_features(&mut r, 6, 4, 3, false);
        let b = random_features(&mut r, 6, 3, 5, false);
        let m = random_mask(&mut r, 4, 3, true);
        let sur = match_frames(&a, &b, &m, MatchMode::Surjective).unwrap();
        let big = match_frames(&a, &b, &m, bij(15 + extra)).unwrap();
        prop_assert_eq!(sur, big);
    }

    #[test]
    fn scores_are_bounded_by_surjective(seed in any::<u64>(), k in 1usize..20) {
        let mut r = rng(seed);
        let a = random_features(&mut r, 5, 4, 4, false);
        let b = random_features(&mut r, 5, 4, 4, false);
        let m = random_mask(&mut r, 4, 4, false);
        let sur = match_frames(&a, &b, &m, MatchMode::Surjective).unwrap();
        let got = match_frames(&a, &b, &m, bij(k)).unwrap();
        for (lo, hi) in got.y_fg.iter().zip(&sur.y_fg) {
            prop_assert!(lo <= hi);
            prop_assert!((0.0..=1.0).contains(lo));
        }
    }

    #[test]
    fn monotone_in_k(seed in any::<u64>(), k in 1usize..16) {
        let mut r = rng(seed);
        let a = random_features(&mut r, 3, 4, 4, true);
        let b = random_features(&mut r, 3, 4, 4, true);
        let m = random_mask(&mut r, 4, 4, false);
        let lo = match_frames(&a, &b, &m, bij(k)).unwrap();
        let hi = match_frames(&a, &b, &m, bij(k + 1)).unwrap();
        prop_assert!(lo.y_fg.iter().zip(&hi.y_fg).all(|(x, y)| x <= y));
        prop_assert!(lo.y_bg.iter().zip(&hi.y_bg).all(|(x, y)| x <= y));
    }

    #[test]
    fn equivariant_to_reference_permutation(seed in any::<u64>(), k in 1usize..10) {
        // Continuous features, so ties (and their index-based breaking) are
        // vanishingly unlikely.
        let mut r = rng(seed);
        let n = 7;
        let a = random_features(&mut r, 5, 1, n, false);
        let b = random_features(&mut r, 5, 1, n, false);
        let m = random_mask(&mut r, 1, n, false);
        let perm: Vec<usize> = (0..n).rev().collect();
        let pa = permute_pixels(&a, &perm);
        let pm_fg: Vec<f32> = perm.iter().map(|&i| m.fg()[i]).collect();
        let pm = ProbMask::from_foreground(1, n, pm_fg).unwrap();
        let x = match_frames(&a, &b, &m, bij(k)).unwrap();
        let y = match_frames(&pa, &b, &pm, bij(k)).unwrap();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn equivariant_to_query_permutation(seed in any::<u64>(), k in 1usize..10) {
        let mut r = rng(seed);
        let n = 7;
        let a = random_features(&mut r, 5, 1, n, false);
        let b = random_features(&mut r, 5, 1, n, false);
        let m = random_mask(&mut r, 1, n, false);
        let perm: Vec<usize> = (0..n).map(|i| (i * 3) % n).collect();
        let pb = permute_pixels(&b, &perm);
        let x = match_frames(&a, &b, &m, bij(k)).unwrap();
        let y = match_frames(&a, &pb, &m, bij(k)).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            prop_assert_eq!(y.y_fg[dst], x.y_fg[src]);
            prop_assert_eq!(y.y_bg[dst], x.y_bg[src]);
        }
    }

    #[test]
    fn invariant_to_feature_scale(seed in any::<u64>(), scale in 0.01f32..100.0) {
        let mut r = rng(seed);
        let a = random_features(&mut r, 4, 3, 3, false);
        let b = random_features(&mut r, 4, 3, 3, false);
        let m = random_mask(&mut r, 3, 3, false);
        let scaled = FeatureMap::new(4, 3, 3, a.data().iter().map(|v| v * scale).collect()).unwrap();
        let x = match_frames(&a, &b, &m, bij(2)).unwrap();
        let y = match_frames(&scaled, &b, &m, bij(2)).unwrap();
        for (u, v) in x.y_fg.iter().zip(&y.y_fg) {
            prop_assert!((u - v).abs() <= 1e-6);
        }
    }
}
