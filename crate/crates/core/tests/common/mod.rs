#![allow(dead_code)]

use brw_core::laws::{boundary_law, LawSpec, ReproductionLaw};
use proptest::prelude::*;

/// `children` i.i.d. displacements on distinct integer atoms.
pub fn iid_spec() -> impl Strategy<Value = LawSpec> {
    (
        2usize..=3,
        proptest::sample::subsequence((-3..=2).collect::<Vec<i32>>(), 2..=4),
        proptest::collection::vec(1u32..=10, 4),
    )
        .prop_map(|(children, values, weights)| {
            let total: u32 = weights[..values.len()].iter().sum();
            let atoms = values
                .iter()
                .zip(&weights)
                .map(|(&v, &w)| [v as f64, w as f64 / total as f64])
                .collect();
            LawSpec::Iid { children, atoms }
        })
}

/// Boundary-normalized law, or `None` when the raw law has no normalization.
pub fn normalized(spec: &LawSpec) -> Option<(ReproductionLaw, f64)> {
    let raw = ReproductionLaw::from_spec(spec).ok()?;
    boundary_law(&raw).ok().map(|(l, bf)| (l, bf.sigma2))
}

/// Two children uniform on `{-1, 0, 1}`, normalized.
pub fn uniform3() -> (ReproductionLaw, f64) {
    let (l, bf) = boundary_law(&ReproductionLaw::binary_uniform3()).unwrap();
    (l, bf.sigma2)
}

/// Fixed-seed config, so statistical properties do not flake between runs.
pub fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        rng_seed: proptest::test_runner::RngSeed::Fixed(0x5EED),
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}
