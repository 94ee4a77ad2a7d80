use proptest::prelude::*;

use ear_core::continual::route_instant;
use ear_core::hdc::{codebook_dimension, TargetCodebook};
use ear_core::metrics::{auroc, macro_f1, moving_average, ScoredLabels};
use ear_core::zsnas::{ami, SearchSpace, NasConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn codebook_rows_are_equidistant(classes in 1usize..24, adaptors in 1usize..8, seed in any::<u64>()) {
        let cb = TargetCodebook::generate(classes, adaptors, seed).unwrap();
        let k = classes * adaptors;
        let d = cb.dim();
        prop_assert_eq!(d, codebook_dimension(k).unwrap());
        prop_assert!(d >= k && (d + 1).is_power_of_two());
        // the next smaller size 2^(m-1) - 1 would not hold every row
        prop_assert!(d == 1 || (d - 1) / 2 < k);
        let rows = cb.rows();
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                prop_assert_eq!(rows[i].hamming(&rows[j]).unwrap(), d.div_ceil(2));
            }
        }
    }

    #[test]
    fn auroc_flips_with_scores(
        pairs in proptest::collection::vec((0u8..12, any::<bool>()), 2..80)
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let pos: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(pos.iter().any(|&p| p) && pos.iter().any(|&p| !p));
        let a = auroc(&ScoredLabels::new(scores.clone(), pos.clone()).unwrap()).unwrap();
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let b = auroc(&ScoredLabels::new(neg, pos).unwrap()).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_bounds(pairs in proptest::collection::vec((0u8..5, 0u8..5), 1..60)) {
        let pred: Vec<u8> = pairs.iter().map(|p| p.0).collect();
        let truth: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        let f = macro_f1(&pred, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(macro_f1(&truth, &truth).unwrap(), 1.0);
        // relabeling both sides consistently changes nothing
        let shift = |v: &[u8]| v.iter().map(|x| (x + 3) % 5).collect::<Vec<u8>>();
        prop_assert!((macro_f1(&shift(&pred), &shift(&truth)).unwrap() - f).abs() < 1e-12);
    }

    #[test]
    fn ami_is_symmetric_and_bounded(pairs in proptest::collection::vec((0usize..4, 0usize..6), 2..120)) {
        let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let x = ami(&a, &b).unwrap();
        let y = ami(&b, &a).unwrap();
        prop_assert!((x - y).abs() < 1e-12);
        prop_assert!(x <= 1.0 + 1e-12);
    }

    #[test]
    fn moving_average_matches_naive(
        values in proptest::collection::vec(0.0f64..1.0, 1..100),
        window in 1usize..12,
        reset_every in 5usize..40,
    ) {
        let resets: Vec<bool> = (0..values.len()).map(|i| i > 0 && i % reset_every == 0).collect();
        let got = moving_average(&values, window, &resets).unwrap();
        for i in 0..values.len() {
            let epoch_start = (0..=i).rev().find(|&j| resets[j]).unwrap_or(0);
            let lo = epoch_start.max((i + 1).saturating_sub(window));
            let mean = values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64;
            prop_assert!((got[i] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn instant_route_is_first_minimum(scores in proptest::collection::vec(0u8..10, 1..12)) {
        let s: Vec<f64> = scores.iter().map(|&v| v as f64 / 10.0).collect();
        let r = route_instant(&s, 0.7).unwrap();
        let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(r.model, s.iter().position(|&v| v == min).unwrap());
        prop_assert_eq!(r.ood_everywhere, min > 0.7);
    }

    #[test]
    fn search_space_encoding_round_trips(seed in any::<u64>()) {
        let space = SearchSpace::new(7, &NasConfig::default()).unwrap();
        let c = space.random(&mut ear_core::rng::seeded(seed));
        prop_assert!(c.num_adaptors() >= 1);
        let x = space.encode(&c).unwrap();
        for (v, (lo, hi)) in x.iter().zip(space.bounds()) {
            prop_assert!(lo <= *v && *v <= hi);
        }
        prop_assert_eq!(space.decode(&x).unwrap(), c.clone());
        let text = c.describe();
        prop_assert_eq!(ear_core::zsnas::CandidateArchitecture::parse(&text, 7).unwrap(), c);
    }
}
