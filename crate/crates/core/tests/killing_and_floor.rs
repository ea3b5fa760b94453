mod common;

use brw_core::curves::compute_lambda;
use brw_core::engine::{boundary_levels, killed_survival};
use brw_core::gw::{floor_count, growth_floor_experiment};
use brw_core::laws::{boundary_law, LawSpec, ReproductionLaw};
use brw_core::profile::Curve;
use brw_core::seed::SeedStream;
use brw_core::stats::{MeanAccumulator, Z99};
use brw_core::walks::{exact_confinement_dp, StepLaw};

#[test]
fn killed_walk_dies_above_threshold_and_survives_below() {
    let (law, sigma2) = common::uniform3();
    let stream = SeedStream::new(12, 0);
    // lambda(-1) > 0: survival collapses as n grows
    let dying = Curve::constant(-1.0);
    assert!(compute_lambda(&dying, sigma2).unwrap().lambda > 0.0);
    let small = killed_survival(&law, &boundary_levels(&dying, 27), 4000, &stream.derive(0)).unwrap();
    let large = killed_survival(&law, &boundary_levels(&dying, 343), 4000, &stream.derive(1)).unwrap();
    assert!(large.wilson(Z99).1 < small.wilson(Z99).0, "{} then {}", small.freq(), large.freq());
    assert!(large.freq() < 0.01);
    // lambda(-3) < 0: survival stays bounded away from zero
    let living = Curve::constant(-3.0);
    assert!(compute_lambda(&living, sigma2).unwrap().lambda < 0.0);
    for (i, n) in [27usize, 125].into_iter().enumerate() {
        let p = killed_survival(&law, &boundary_levels(&living, n), 300, &stream.derive(10 + i as u64)).unwrap();
        assert!(p.wilson(Z99).0 > 0.5, "n = {n}: {}", p.freq());
    }
}

#[test]
fn growth_floor_counts_grow_and_match_the_walk_oracle() {
    // two children, each uniform on {-2, -1, 0, 1}
    let spec = LawSpec::Iid {
        children: 2,
        atoms: vec![[-2.0, 0.25], [-1.0, 0.25], [0.0, 0.25], [1.0, 0.25]],
    };
    let (law, bf) = boundary_law(&ReproductionLaw::from_spec(&spec).unwrap()).unwrap();
    // between the two lowest normalized atoms: only the lowest is cut
    let lowest = -2.0 * bf.theta_star - bf.kappa_star;
    let second = -bf.theta_star - bf.kappa_star;
    let a = -0.5 * (lowest + second);
    assert!((law.truncated_mean(a) - 1.5).abs() < 1e-12);
    let n = 30;
    let rhos = [1.1, 1.3, 1.5, 1.7, 1.9, 2.1];
    let report = growth_floor_experiment(&law, a, n, &rhos, 0.5, 2000, &SeedStream::new(4, 0)).unwrap();
    let rho_hat = report.rho_hat.expect("some rate is reached");
    assert!(rho_hat > 1.0 && rho_hat < 2.0, "rho_hat = {rho_hat}");
    // at most 2^n individuals exist
    assert!(report.rows.last().unwrap().hits.is_zero_hit());

    // E[count] = 2^n P(S_j >= -j a for j <= n) for the walk on the
    // raw atoms; in lattice units the floor is k_j >= j (kappa* - a) / theta*
    let walk = StepLaw::lattice(1.0, vec![(-2, 0.25), (-1, 0.25), (0, 0.25), (1, 0.25)]).unwrap();
    let lower: Vec<i64> = (0..=n)
        .map(|j| (j as f64 * (bf.kappa_star - a) / bf.theta_star - 1e-9).ceil() as i64)
        .collect();
    let upper = vec![2 * n as i64; n + 1];
    let p = exact_confinement_dp(&walk, &lower, &upper, 0, n, None, 1 << 20).unwrap().prob;
    let expected = 2f64.powi(n as i32) * p;
    let stream = SeedStream::new(4, 2);
    let acc = stream
        .fold_replicas(
            3000,
            |_, rng, acc: &mut MeanAccumulator| {
                acc.push(floor_count(&law, a, n, rng, 1 << 26)? as f64);
                Ok(())
            },
            |x, y| x.merge(&y),
        )
        .unwrap()
        .estimate();
    assert!(
        (acc.mean - expected).abs() <= 4.0 * acc.stderr,
        "mean {} vs {expected} (se {})",
        acc.mean,
        acc.stderr
    );
    // a cut above every atom leaves nothing to grow
    assert!(growth_floor_experiment(&law, -lowest - 10.0 * bf.theta_star, n, &rhos, 0.5, 10, &SeedStream::new(4, 1)).is_err());
}
