mod common;

use brw_core::walks::{exact_confinement_dp, StepLaw};
use proptest::prelude::*;

fn lattice_step() -> impl Strategy<Value = StepLaw> {
    (
        proptest::sample::subsequence((-2..=2).collect::<Vec<i64>>(), 2..=5),
        proptest::collection::vec(1u32..=9, 5),
    )
        .prop_map(|(sites, w)| {
            let total: u32 = w[..sites.len()].iter().sum();
            let atoms = sites.iter().zip(&w).map(|(&s, &x)| (s, x as f64 / total as f64)).collect();
            StepLaw::lattice(1.0, atoms).unwrap()
        })
}

/// Corridor `[lower_j, upper_j]` containing 0 at time 0.
fn corridor(n: usize) -> impl Strategy<Value = (Vec<i64>, Vec<i64>)> {
    (
        proptest::collection::vec(0i64..=4, n + 1),
        proptest::collection::vec(0i64..=4, n + 1),
    )
        .prop_map(|(a, b)| (a.iter().map(|v| -v).collect(), b))
}

const BUDGET: usize = 1 << 20;

proptest! {
    #![proptest_config(common::config(128))]

    #[test]
    fn target_bins_add_up(step in lattice_step(), (n, (lo, hi)) in (1usize..30).prop_flat_map(|n| (Just(n), corridor(n)))) {
        let all = exact_confinement_dp(&step, &lo, &hi, 0, n, None, BUDGET).unwrap().prob;
        let mut sum = 0.0;
        for site in lo[n]..=hi[n] {
            sum += exact_confinement_dp(&step, &lo, &hi, 0, n, Some((site, site)), BUDGET).unwrap().prob;
        }
        prop_assert!((sum - all).abs() <= 1e-14, "sum {sum} vs {all}");
        let split = (lo[n] + hi[n]) / 2;
        let a = exact_confinement_dp(&step, &lo, &hi, 0, n, Some((lo[n], split)), BUDGET).unwrap().prob;
        let b = exact_confinement_dp(&step, &lo, &hi, 0, n, Some((split + 1, hi[n])), BUDGET).unwrap().prob;
        prop_assert!((a + b - all).abs() <= 1e-14);
    }

    #[test]
    fn enlarging_the_corridor_never_lowers_the_probability(
        step in lattice_step(),
        (n, (lo, hi), grow) in (1usize..40).prop_flat_map(|n| (
            Just(n),
            corridor(n),
            proptest::collection::vec((0i64..=2, 0i64..=2), n + 1),
        )),
    ) {
        let narrow = exact_confinement_dp(&step, &lo, &hi, 0, n, None, BUDGET).unwrap();
        let lo2: Vec<i64> = lo.iter().zip(&grow).map(|(l, g)| l - g.0).collect();
        let hi2: Vec<i64> = hi.iter().zip(&grow).map(|(h, g)| h + g.1).collect();
        let wide = exact_confinement_dp(&step, &lo2, &hi2, 0, n, None, BUDGET).unwrap();
        prop_assert!(wide.prob >= narrow.prob * (1.0 - 1e-12), "{} < {}", wide.prob, narrow.prob);
        // the scaled log values order the same way
        let scale = (n as f64).powf(-1.0 / 3.0);
        prop_assert!(scale * narrow.log_prob <= scale * wide.log_prob + 1e-12);
    }
}
