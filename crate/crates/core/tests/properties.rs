use proptest::prelude::*;

use poisson_sketch::expander::build_with_cover;
use poisson_sketch::metrics::{best_k_term, l0_norm, l1_distance, l1_norm, positive_clip, tail_masses};
use poisson_sketch::pmle::{pmle_exhaustive, CandidateSet, IntensityScale, PenaltyMode, PmleConfig, PmleParams};
use poisson_sketch::stream::{check_heavy_tail, HeavyTailParams};
use poisson_sketch::{BipartiteGraph, RateVector};

fn vec_f64(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 1..=max_len)
}

proptest! {
    #[test]
    fn clip_is_a_contraction_towards_nonnegative_vectors(
        pair in (1usize..30).prop_flat_map(|n| (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(0.0f64..10.0, n),
        ))
    ) {
        let (u, x) = pair;
        prop_assert!(l1_distance(&positive_clip(&u), &x) <= l1_distance(&u, &x) + 1e-12);
    }

    #[test]
    fn best_k_term_beats_every_support(u in vec_f64(8), k_seed in 0usize..9) {
        let n = u.len();
        let k = k_seed % (n + 1);
        let got = best_k_term(&u, k).unwrap();
        let brute = (0u32..1 << n)
            .filter(|m| m.count_ones() as usize == k)
            .map(|m| (0..n).filter(|i| m & (1 << i) == 0).map(|i| u[i].abs()).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        prop_assert!((got.residual_l1 - brute).abs() <= 1e-12);
        prop_assert_eq!(got.support.len(), k);
        prop_assert!(l0_norm(&got.top) <= k);
    }

    #[test]
    fn norm_splits_into_head_and_tail(u in vec_f64(20), k_seed in 0usize..21) {
        let k = k_seed % (u.len() + 1);
        let d = best_k_term(&u, k).unwrap();
        let total = l1_norm(&u);
        prop_assert!((l1_norm(&d.top) + d.residual_l1 - total).abs() <= 1e-9 * total.max(1.0));
        let tails = tail_masses(&u);
        prop_assert!((tails[k] - d.residual_l1).abs() <= 1e-9 * total.max(1.0));
        prop_assert!(tails.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn apply_is_linear(
        seed in 0u64..1000,
        a in 0.5f64..3.0,
        xs in prop::collection::vec((0.0f64..5.0, 0.0f64..5.0), 40),
    ) {
        let g = BipartiteGraph::random(40, 12, 3, seed).unwrap();
        let x: Vec<f64> = xs.iter().map(|p| p.0).collect();
        let z: Vec<f64> = xs.iter().map(|p| p.1).collect();
        let comb: Vec<f64> = x.iter().zip(&z).map(|(p, q)| a * p + q).collect();
        let lhs = g.apply(&comb).unwrap();
        let (gx, gz) = (g.apply(&x).unwrap(), g.apply(&z).unwrap());
        for j in 0..12 {
            prop_assert!((lhs[j] - (a * gx[j] + gz[j])).abs() <= 1e-9);
        }
        // every flow lands in d counters, so mass is multiplied by d
        prop_assert!((l1_norm(&gx) - 3.0 * l1_norm(&x)).abs() <= 1e-9 * l1_norm(&x).max(1.0));
    }

    #[test]
    fn integer_counters_are_exact(seed in 0u64..1000, xs in prop::collection::vec(0u64..1_000_000, 25)) {
        let g = BipartiteGraph::random(25, 7, 2, seed).unwrap();
        let y = g.apply(&xs).unwrap();
        prop_assert_eq!(y.iter().sum::<u64>(), 2 * xs.iter().sum::<u64>());
    }

    #[test]
    fn power_law_rates_sit_in_their_class(n in 2usize..60, l0 in 0.5f64..4.0, alpha in 1.0f64..3.0) {
        // l_i = c i^-(alpha+1) has tail mass below L0 k^-alpha once scaled to mass L0 / (alpha + 1)
        let raw: Vec<f64> = (1..=n).map(|i| (i as f64).powf(-(alpha + 1.0))).collect();
        let z: f64 = raw.iter().sum();
        let rates: Vec<f64> = raw.iter().map(|r| r * l0 / ((alpha + 1.0) * z)).collect();
        let rv = RateVector::new(rates, 1).unwrap();
        let c = check_heavy_tail(&rv, HeavyTailParams::new(l0, alpha).unwrap());
        prop_assert!(c.holds, "{:?}", c);
    }

    #[test]
    fn flat_rates_leave_the_class(n in 4usize..40, alpha in 1.5f64..3.0) {
        let rv = RateVector::new(vec![1.0 / n as f64; n], 1).unwrap();
        let c = check_heavy_tail(&rv, HeavyTailParams::new(1.01, alpha).unwrap());
        prop_assert!(c.l1_within_budget);
        prop_assert!(!c.holds);
    }

    #[test]
    fn kraft_holds_on_small_sets(n in 1usize..10, levels in 1u32..6, uniform in any::<bool>(), smax in 0usize..4) {
        let mode = if uniform { PenaltyMode::Uniform } else { PenaltyMode::L0Scaled };
        let cs = CandidateSet::with_universe((0..n).collect(), n, n, levels, 0.5, mode, Some(smax)).unwrap();
        let exhaustive = cs.kraft_sum_exhaustive(1e6).unwrap();
        prop_assert!(exhaustive <= 1.0 + 1e-12);
        prop_assert!((exhaustive - cs.kraft_sum_counting()).abs() <= 1e-9);
        prop_assert_eq!(cs.iter().count() as f64, cs.count().round());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Scaling the counters and the exposure by the same factor leaves the
    /// maximum-likelihood candidate unchanged.
    #[test]
    fn argmin_is_scale_equivariant(seed in 0u64..500, counts in prop::collection::vec(0u64..6, 8), factor in 2u64..5) {
        let cg = build_with_cover(8, 5, 2, seed).unwrap();
        let y: Vec<f64> = cg.graph.apply(&counts).unwrap().iter().map(|&v| v as f64).collect();
        let p = PmleParams {
            grid_levels: 4,
            penalty_mode: PenaltyMode::Uniform,
            ..Default::default()
        };
        let cfg = PmleConfig::new(8, 3.0, 2, cg.cover.clone(), &p).unwrap();
        let cs = CandidateSet::full(8, &cfg);
        let base = pmle_exhaustive(&y, &cg.graph, &cs, &cfg, IntensityScale::new(10, 1.0, 2).unwrap()).unwrap();
        let ys: Vec<f64> = y.iter().map(|v| v * factor as f64).collect();
        let scaled = pmle_exhaustive(&ys, &cg.graph, &cs, &cfg, IntensityScale::new(10 * factor, 1.0, 2).unwrap()).unwrap();
        prop_assert_eq!(base.candidate, scaled.candidate);
        prop_assert_eq!(base.rates, scaled.rates);
    }
}
