//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines always print.
//! Criteria listed in `KNOWN_FAILURES` fail for reasons recorded in the
//! decisions ledger; any other failure makes the target exit nonzero.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use brw_core::curves::{compute_lambda, cubic_constant, phi_inverse, solve_g};
use brw_core::engine::{
    apply_regime, consistent_min_displacement, coupled_run, select_top_indices, step, survival_scaling_experiment,
    theta_cells, CountRule, Population, SurvivalRegime,
};
use brw_core::gw::{fit_tail_constant, left_tail_empirical, left_tail_exact, multiple_exponent, OffspringLaw};
use brw_core::harness::{list_experiments, run_experiment, ExperimentConfig, ExperimentKind, RunOptions};
use brw_core::laws::{
    boundary_law, boundary_residuals, normalize_to_boundary, LawSpec, MomentSource, Realization, ReproductionLaw,
};
use brw_core::profile::{BarrierProfile, Curve};
use brw_core::seed::SeedStream;
use brw_core::spine::{many_to_one_expectation, Mode};
use brw_core::stats::{linear_fit, median, median_ci, Proportion, Z95};
use brw_core::walks::{rate_convergence_report, Estimator, ScaleRule, StepLaw};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const KNOWN_FAILURES: &[usize] = &[1, 9];

struct Outcome {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Outcome {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Outcome {
            pass,
            summary: summary.into(),
            details: Vec::new(),
        }
    }

    fn note(mut self, line: impl Into<String>) -> Self {
        self.details.push(line.into());
        self
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn uniform3() -> (ReproductionLaw, f64) {
    let (law, bf) = boundary_law(&ReproductionLaw::binary_uniform3()).unwrap();
    (law, bf.sigma2)
}

fn c1_boundary_normalization() -> Outcome {
    let t0 = Instant::now();
    let literal = normalize_to_boundary(&ReproductionLaw::binary_pm1());
    let t_lit = t0.elapsed();

    // the same checks on the substitute fixture
    let t0 = Instant::now();
    let raw = ReproductionLaw::binary_uniform3();
    let bf = normalize_to_boundary(&raw).unwrap();
    let law = bf.apply(&raw);
    let r = boundary_residuals(&law, MomentSource::Exact).unwrap();
    let th = bf.theta_star;
    let ch = th.cosh();
    // kappa(th) = log(2 + 4 cosh th) - log 3, kappa' = 4 sinh th / (2 + 4 cosh th)
    let kappa = (2.0 + 4.0 * ch).ln() - 3f64.ln();
    let dkappa = 4.0 * th.sinh() / (2.0 + 4.0 * ch);
    let theta_res = (th * dkappa - kappa).abs();
    let sigma2_analytic = th * th * (2.0 * ch + 4.0) / (1.0 + 2.0 * ch).powi(2);
    let t_sub = t0.elapsed();
    let sub_ok = theta_res < 1e-10
        && r.r1.abs() < 1e-9
        && r.r2.abs() < 1e-9
        && (sigma2_analytic - r.sigma2).abs() < 1e-8
        && t_sub < Duration::from_secs(1);

    let head = match &literal {
        Ok(bf) => format!("binary +-1 gave theta* = {}", bf.theta_star),
        Err(e) => format!("binary +-1: {e}"),
    };
    let pass = literal.as_ref().is_ok_and(|bf| {
        let t = bf.theta_star;
        (t * t.tanh() - (2.0 * t.cosh()).ln()).abs() < 1e-10
    }) && t_lit < Duration::from_secs(1);
    Outcome::new(pass, head)
        .note("theta tanh theta - log(2 cosh theta) < 0 for all theta > 0: the literal fixture has no root")
        .note(format!(
            "substitute two-children uniform{{-1,0,1}}: theta* = {th:.15}, |theta k' - k| = {theta_res:.1e}, r1 = {:.1e}, r2 = {:.1e}, sigma2 {:.12} vs {:.12} ({}) -> {}",
            r.r1,
            r.r2,
            r.sigma2,
            sigma2_analytic,
            secs(t_sub),
            if sub_ok { "ok" } else { "NOT ok" }
        ))
}

fn fixture_laws() -> Vec<(&'static str, ReproductionLaw)> {
    let raw3 = ReproductionLaw::binary_uniform3();
    let norm3 = boundary_law(&raw3).unwrap().0;
    let half = -(2f64.ln());
    let varying = ReproductionLaw::table(vec![
        Realization {
            children: vec![0.5],
            prob: 0.2,
        },
        Realization {
            children: vec![-1.0, 0.3],
            prob: 0.5,
        },
        Realization {
            children: vec![-2.0, -0.5, 1.0],
            prob: 0.3,
        },
    ])
    .unwrap();
    let norm_varying = boundary_law(&varying).unwrap().0;
    vec![
        ("binary +-1", ReproductionLaw::binary_pm1()),
        ("uniform3", raw3),
        ("uniform3 normalized", norm3),
        (
            "two at -log 2",
            ReproductionLaw::table(vec![Realization {
                children: vec![half, half],
                prob: 1.0,
            }])
            .unwrap(),
        ),
        ("1-3 children", varying),
        ("1-3 children normalized", norm_varying),
    ]
}

type Functional = Box<dyn Fn(&[f64]) -> f64 + Sync>;

fn functionals() -> Vec<(&'static str, Functional)> {
    let last = |p: &[f64]| p.last().copied().unwrap_or(0.0);
    vec![
        ("zero", Box::new(|_: &[f64]| 0.0)),
        ("one", Box::new(|_: &[f64]| 1.0)),
        ("corridor [-1,1]", Box::new(|p: &[f64]| p.iter().all(|v| v.abs() <= 1.0) as u8 as f64)),
        ("above -0.7", Box::new(|p: &[f64]| p.iter().all(|&v| v >= -0.7) as u8 as f64)),
        ("end >= 0", Box::new(move |p: &[f64]| (last(p) >= 0.0) as u8 as f64)),
        ("exp(-end)", Box::new(move |p: &[f64]| (-last(p)).exp())),
        ("exp(sum/3)", Box::new(|p: &[f64]| (p.iter().sum::<f64>() / 3.0).exp())),
        ("sum of squares", Box::new(|p: &[f64]| p.iter().map(|v| v * v).sum())),
        ("cubic of end", Box::new(move |p: &[f64]| last(p).powi(3) - last(p))),
        ("running min", Box::new(|p: &[f64]| p.iter().fold(0.0, |a: f64, &b| a.min(b)))),
        ("max^2", Box::new(|p: &[f64]| p.iter().fold(0.0, |a: f64, &b| a.max(b)).powi(2))),
        ("increments <= 1", Box::new(|p: &[f64]| {
            let mut prev = 0.0;
            p.iter().all(|&v| {
                let ok = v - prev <= 1.0;
                prev = v;
                ok
            }) as u8 as f64
        })),
    ]
}

fn c2_many_to_one() -> Outcome {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut failures = Vec::new();
    for (name, law) in fixture_laws() {
        for n in 1..=3 {
            for (fname, g) in functionals() {
                match many_to_one_expectation(&law, n, g, Mode::exact()) {
                    Ok(r) => {
                        let d = r.difference.unwrap_or(f64::INFINITY).abs() / r.value.abs().max(1.0);
                        worst = worst.max(d);
                        if !(d <= 1e-12) {
                            failures.push(format!("{name} n={n} {fname}: {d:.2e}"));
                        }
                    }
                    Err(e) => failures.push(format!("{name} n={n} {fname}: {e}")),
                }
                cases += 1;
            }
        }
    }
    let dt = t0.elapsed();
    let pass = failures.is_empty() && dt < Duration::from_secs(10);
    let mut o = Outcome::new(
        pass,
        format!(
            "{cases} cases ({} laws x n<=3 x {} functionals), worst relative gap {worst:.2e}, {}",
            fixture_laws().len(),
            functionals().len(),
            secs(dt)
        ),
    );
    for f in failures.into_iter().take(5) {
        o = o.note(f);
    }
    o
}

fn c3_mogulskii() -> Outcome {
    let t0 = Instant::now();
    let step = StepLaw::pm1();
    let profile = BarrierProfile::constant(-1.0, 1.0).unwrap();
    let rule = ScaleRule::Power { exponent: 1.0 / 3.0 };
    let ns = [64, 216, 512];
    let exact = rate_convergence_report(&step, &profile, rule, &[64, 216, 512, 1000], 1.0, Estimator::Exact).unwrap();
    let mc = rate_convergence_report(
        &step,
        &profile,
        rule,
        &ns,
        1.0,
        Estimator::MonteCarlo {
            reps: 1_000_000,
            seed: 2024,
        },
    )
    .unwrap();
    let target = -PI * PI / 8.0;
    let mut o = Outcome::new(true, String::new());
    let mut agree = true;
    for (e, m) in exact.iter().zip(&mc) {
        let gap = (e.estimate - m.estimate).abs();
        let tol = 4.0 * (e.stderr.powi(2) + m.stderr.powi(2)).sqrt();
        agree &= gap <= tol;
        o = o.note(format!(
            "n = {}: DP {:.6e}, MC {:.6e} +- {:.1e}, |gap| / (4 se) = {:.2}",
            e.n,
            e.estimate,
            m.estimate,
            m.stderr,
            gap / tol
        ));
    }
    let seq: Vec<f64> = exact.iter().map(|r| r.scaled_log).collect();
    let monotone = seq.windows(2).all(|w| w[1] < w[0] && w[1] > target);
    let rel = (seq[3] - target).abs() / target.abs();
    let dt = t0.elapsed();
    o.pass = agree && monotone && rel < 0.25 && dt < Duration::from_secs(120);
    o.summary = format!(
        "DP vs MC within 4 se: {agree}; (a_n^2/n) log P = {} -> {target:.4}, monotone {monotone}, gap at n=1000 {:.1}%, {}",
        seq.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", "),
        100.0 * rel,
        secs(dt)
    );
    o
}

fn c4_curves() -> Outcome {
    let t0 = Instant::now();
    let mut worst_g: f64 = 0.0;
    for &(c, x, sigma2) in &[(-1.0, 2.0, 1.0), (-3.0, -1.0, 0.5), (-0.1, 0.4, 2.0), (0.5, 0.9, 1.0)] {
        let curve = solve_g(x, &Curve::constant(c), sigma2).unwrap();
        let k = 1.5 * PI * PI * sigma2;
        for i in 0..=400 {
            let t = curve.t_max * i as f64 / 400.0;
            let inner = (x - c).powi(3) - k * t;
            if inner <= 1e-6 {
                continue;
            }
            if let Some(g) = curve.eval(t) {
                worst_g = worst_g.max((g - (c + inner.cbrt())).abs());
            }
        }
    }
    let mut worst_l: f64 = 0.0;
    for &(c, sigma2) in &[(-3.0, 0.5), (-1.0, 1.0), (-0.1, 2.0)] {
        let l = compute_lambda(&Curve::constant(c), sigma2).unwrap();
        worst_l = worst_l.max((l.lambda - (c + cubic_constant(sigma2))).abs());
    }
    let dt = t0.elapsed();
    Outcome::new(
        worst_g < 1e-8 && worst_l < 1e-6 && dt < Duration::from_secs(5),
        format!(
            "max |g - closed form| = {worst_g:.1e} (4 curves), max |lambda - closed form| = {worst_l:.1e} (3 pairs), {}",
            secs(dt)
        ),
    )
}

fn c5_survival_bracket() -> Outcome {
    let t0 = Instant::now();
    let (law, sigma2) = uniform3();
    let theta = 1.0;
    let cells = theta_cells(theta, &[64, 216, 512]);
    let rows = survival_scaling_experiment(&law, &cells, sigma2, 100_000, &SeedStream::named(5, "acceptance-c5")).unwrap();
    let dt = t0.elapsed();
    let lo = -PI * sigma2.sqrt() / (2.0 * theta).sqrt();
    let hi = phi_inverse(theta, sigma2).unwrap();
    let mut o = Outcome::new(true, String::new());
    let mut inside = true;
    let mut sharp = true;
    for r in &rows {
        let (a, b) = r.n_scaled_ci;
        let ok = b >= lo && a <= hi;
        inside &= ok;
        sharp &= b >= lo && a <= -hi;
        o = o.note(format!(
            "n = {}: {} / {} survive, n^-1/3 log rho = {:.4}, CI ({:.4}, {:.4}){}",
            r.n,
            r.survival.successes,
            r.survival.trials,
            r.n_scaled,
            a,
            b,
            if r.zero_hit { ", zero hits" } else { "" }
        ));
    }
    // more replicas where the main run saw few or no survivors
    let t1 = Instant::now();
    let extra = survival_scaling_experiment(&law, &cells[1..], sigma2, 10_000_000, &SeedStream::named(6, "acceptance-c5")).unwrap();
    for r in &extra {
        o = o.note(format!(
            "supplementary 1e7 replicas, n = {}: {} survive, n^-1/3 log rho = {:.4}, CI ({:.4}, {:.4})",
            r.n, r.survival.successes, r.n_scaled, r.n_scaled_ci.0, r.n_scaled_ci.1
        ));
    }
    o = o
        .note(format!(
            "with the upper end -Phi^-1(theta) = {:.4} that the Markov argument yields: inside {sharp}",
            -hi
        ))
        .note(format!("supplementary runs {}", secs(t1.elapsed())));
    o.pass = inside && dt < Duration::from_secs(600);
    o.summary = format!(
        "bracket [{lo:.4}, {hi:.4}], every cell CI meets it: {inside}, 1e5 replicas in {}",
        secs(dt)
    );
    o
}

fn random_law(rng: &mut ChaCha8Rng) -> ReproductionLaw {
    use rand::Rng;
    loop {
        let children = rng.random_range(1..=3usize);
        let k = rng.random_range(2..=4usize);
        let mut atoms = Vec::new();
        let mut total = 0.0;
        for _ in 0..k {
            let w: f64 = rng.random_range(0.1..1.0);
            atoms.push([rng.random_range(-2.0..1.5f64), w]);
            total += w;
        }
        for a in &mut atoms {
            a[1] /= total;
        }
        let spec = if rng.random_bool(0.2) {
            LawSpec::PoissonGaussian {
                mean: rng.random_range(1.2..3.0),
                sd: rng.random_range(0.3..1.5),
            }
        } else {
            LawSpec::Iid {
                children: children.max(2),
                atoms,
            }
        };
        if let Ok((law, _)) = ReproductionLaw::from_spec(&spec).and_then(|raw| boundary_law(&raw)) {
            return law;
        }
    }
}

fn c6_coupling() -> Outcome {
    use rand::Rng;
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0);
    let n = 50;
    let mut violations = 0usize;
    let mut generations = 0usize;
    let instances = 200;
    for _ in 0..instances {
        let law = random_law(&mut rng);
        let b_rule = match rng.random_range(0..3) {
            0 => CountRule::Constant {
                count: rng.random_range(1..300),
            },
            1 => CountRule::CubeRootExp {
                a: rng.random_range(0.3..1.6),
            },
            _ => CountRule::Table {
                counts: (0..=n).map(|_| rng.random_range(1..200)).collect(),
            },
        };
        let a_rule = CountRule::Table {
            counts: (0..=n)
                .map(|k| {
                    let cb = b_rule.at(k);
                    rng.random_range(1..=cb.max(1))
                })
                .collect(),
        };
        let a = SurvivalRegime::TopCount { phi: a_rule };
        let b = SurvivalRegime::TopCount { phi: b_rule };
        let seed: u64 = rng.random();
        let mut run_rng = ChaCha8Rng::seed_from_u64(seed);
        let r = coupled_run(&a, &b, &law, n, &mut run_rng).unwrap();
        violations += r.order_held.iter().filter(|&&h| !h).count();
        generations += r.order_held.len();
    }
    let dt = t0.elapsed();
    Outcome::new(
        violations == 0 && dt < Duration::from_secs(300),
        format!("{instances} instances at n = {n}, {generations} generations checked, {violations} violations, {}", secs(dt)),
    )
}

fn c7_selection() -> Outcome {
    use rand::Rng;
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x77);
    let mut bad = 0usize;
    let checks = 2000;
    let laws: Vec<ReproductionLaw> = (0..8).map(|_| random_law(&mut rng)).collect();
    for i in 0..checks {
        let law = &laws[i % laws.len()];
        let pop = Population::founders(rng.random_range(1..40));
        let kids = step(&pop, law, &mut rng).unwrap();
        let cap: u64 = rng.random_range(0..120);
        let out = apply_regime(&kids, &SurvivalRegime::TopCount { phi: CountRule::Constant { count: cap } }, 1, &mut rng);
        if out.len() != (cap as usize).min(kids.len()) {
            bad += 1;
        }
    }
    let reps = 30_000u64;
    let mut kept = [Proportion::default(), Proportion::default(), Proportion::default()];
    let stream = SeedStream::named(7, "acceptance-c7");
    for i in 0..reps {
        let mut r = stream.replica(i);
        let idx = select_top_indices(&[0.0, 0.0, 0.0], 2, &mut r);
        for (j, p) in kept.iter_mut().enumerate() {
            p.record(idx.contains(&j));
        }
    }
    let se = ((2.0 / 3.0) * (1.0 / 3.0) / reps as f64).sqrt();
    let tie_ok = kept.iter().all(|p| (p.freq() - 2.0 / 3.0).abs() <= 3.0 * se);
    let dt = t0.elapsed();
    Outcome::new(
        bad == 0 && tie_ok,
        format!(
            "{checks} TopCount selections, {bad} size mismatches; tie-break frequencies {} (2/3 +- {:.4}), {}",
            kept.iter().map(|p| format!("{:.4}", p.freq())).collect::<Vec<_>>().join(", "),
            3.0 * se,
            secs(dt)
        ),
    )
}

fn c8_gw_tail() -> Outcome {
    let t0 = Instant::now();
    let b2 = OffspringLaw::new(vec![(2, 0.5), (4, 0.5)]).unwrap();
    let target = multiple_exponent(&b2).unwrap();
    let n = 12;
    let zs = [0.3, 0.1, 0.03];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut exact = Vec::new();
    let mut o = Outcome::new(true, String::new());
    for &z in &zs {
        let level = (z * 3f64.powi(n as i32)).floor() as u64;
        let p = left_tail_exact(&b2, level, n).unwrap();
        xs.push(-z.ln());
        ys.push((-p.ln()).ln());
        exact.push(p);
        o = o.note(format!("b=2, n = {n}, z = {z}: P = {p:.4e} (exact)"));
    }
    let (_, slope) = linear_fit(&xs, &ys);
    let slope_ok = (slope - target).abs() <= 0.15 * target;
    // sampled cross-check where the probability is visible
    let emp = left_tail_empirical(&b2, 0.3, n, 200_000, &SeedStream::named(8, "acceptance-c8")).unwrap();
    let exact03 = exact[0];
    let (wl, wh) = emp.wilson(4.0);
    let cross_ok = wl <= exact03 && exact03 <= wh;
    o = o.note(format!(
        "sampled P at z = 0.3: {:.4e} (Wilson 4-sigma {wl:.3e}..{wh:.3e}) vs exact {exact03:.4e}: {cross_ok}",
        emp.freq()
    ));

    let b1 = OffspringLaw::new(vec![(1, 0.5), (3, 0.5)]).unwrap();
    let zs1 = [0.05, 0.1, 0.2];
    let mut cs = Vec::new();
    for (i, &n1) in [8usize, 12, 16].iter().enumerate() {
        let pts: Vec<(f64, f64)> = zs1
            .iter()
            .enumerate()
            .map(|(j, &z)| {
                let s = SeedStream::named(80 + i as u64, "acceptance-c8").derive(j as u64);
                (z, left_tail_empirical(&b1, z, n1, 200_000, &s).unwrap().freq())
            })
            .collect();
        cs.push(fit_tail_constant(&b1, &pts).unwrap());
    }
    let stable = cs.iter().all(|c| (c - cs[0]).abs() <= 0.3 * cs[0]);
    let dt = t0.elapsed();
    o.pass = slope_ok && cross_ok && stable && dt < Duration::from_secs(300);
    o.summary = format!(
        "b=2 slope {slope:.4} vs {target:.4} ({:+.1}%); b=1 fitted C at n = 8, 12, 16: {} (stable within 30%: {stable}), {}",
        100.0 * (slope - target) / target,
        cs.iter().map(|c| format!("{c:.4}")).collect::<Vec<_>>().join(", "),
        secs(dt)
    );
    o
}

fn c9_consistent_displacement() -> Outcome {
    let t0 = Instant::now();
    let (law, sigma2) = uniform3();
    let limit = -cubic_constant(sigma2);
    let plan = [(64usize, 400u64), (216, 200), (512, 80)];
    let mut medians = Vec::new();
    let mut o = Outcome::new(true, String::new());
    let mut separated = true;
    for (i, &(n, reps)) in plan.iter().enumerate() {
        let s = SeedStream::named(9, "acceptance-c9").derive(i as u64);
        let vals = s
            .map_replicas(reps, |_, rng| {
                use rand::RngCore;
                consistent_min_displacement(&law, n, rng.next_u64(), Default::default())
            })
            .unwrap();
        let scaled: Vec<f64> = vals.iter().map(|v| v / (n as f64).cbrt()).collect();
        let m = median(&scaled);
        let ci = median_ci(&scaled, Z95);
        separated &= ci.1 < 0.0;
        medians.push(m);
        o = o.note(format!("n = {n}: {reps} replicas, median {m:.4}, 95% CI ({:.4}, {:.4})", ci.0, ci.1));
    }
    let negative = medians.iter().all(|&m| m < 0.0);
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    o.pass = negative && decreasing && separated;
    o.summary = format!(
        "medians {} against limit {limit:.4}: negative {negative}, decreasing {decreasing}, CI below 0 {separated}, {}",
        medians.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>().join(", "),
        secs(t0.elapsed())
    );
    if !decreasing {
        o = o.note("the medians approach the limit from below, so they rise with n at these sizes");
    }
    o
}

fn small_config(kind: ExperimentKind) -> ExperimentConfig {
    let law = r#"
[law]
kind = "iid"
children = 2
atoms = [[-1.0, 0.3333333333333333], [0.0, 0.3333333333333333], [1.0, 0.3333333333333334]]
"#;
    let body = match kind {
        ExperimentKind::BoundaryCheck => String::new(),
        ExperimentKind::ManyToOne => "ns = [3, 8]\nreps = 500\n[params]\ntarget = [-1.0, 0.5]\nestimator = \"both\"\n[params.lower]\nkind = \"constant\"\nvalue = -1.5\n[params.upper]\nkind = \"constant\"\nvalue = 1.0".into(),
        ExperimentKind::MogulskiiRate => "ns = [27, 64]\nreps = 2000\n[params]\nestimator = \"both\"\nwalk = { kind = \"pm1\" }\n[params.lower]\nkind = \"constant\"\nvalue = -1.0\n[params.upper]\nkind = \"constant\"\nvalue = 1.0".into(),
        ExperimentKind::CurveSolve => "[params]\nstart = 1.0\n[params.kill_curve]\nkind = \"constant\"\nvalue = -1.0".into(),
        ExperimentKind::Lambda => "[params.kill_curve]\nkind = \"affine\"\nintercept = -1.0\nslope = -0.5".into(),
        ExperimentKind::KilledBrw => "ns = [8, 27]\nreps = 300\n[params.kill_curve]\nkind = \"constant\"\nvalue = -2.0".into(),
        ExperimentKind::SelectionFixed => "ns = [8, 27]\nreps = 5\n[params]\ncap_rate = 1.0".into(),
        ExperimentKind::SelectionProfile => "ns = [8, 27]\nreps = 5\n[params]\ntrace = true\n[params.profile]\nkind = \"constant\"\nvalue = 1.0".into(),
        ExperimentKind::ConsistentDisplacement => "ns = [8, 27]\nreps = 30".into(),
        ExperimentKind::SurvivalScaling => "ns = [8, 27]\nreps = 2000\n[params]\ntheta = 1.0".into(),
        ExperimentKind::GwTail => "ns = [6, 8]\nreps = 2000\n[params]\noffspring = [[1, 0.5], [3, 0.5]]\nzs = [0.2, 0.5]".into(),
        ExperimentKind::CouplingProperty => "ns = [20]\nreps = 10\n[params.cap_a]\nkind = \"constant\"\ncount = 1\n[params.cap_b]\nkind = \"cube_root_exp\"\na = 1.0".into(),
    };
    ExperimentConfig::from_toml_str(&format!(
        "schema_version = 1\nexperiment = \"{}\"\nseeds = [17]\n{body}\n{law}",
        kind.name()
    ))
    .unwrap()
}

fn c10_reproducibility() -> Outcome {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut mismatched = Vec::new();
    let mut records = 0;
    let mut errors = Vec::new();
    for (name, _) in list_experiments() {
        let kind = ExperimentKind::parse(name).unwrap();
        let cfg = small_config(kind);
        let go = |sub: &str| {
            run_experiment(
                &cfg,
                &RunOptions {
                    out_dir: Some(dir.path().join(sub)),
                    workers: Some(1),
                    ..Default::default()
                },
            )
            .map(|out| out.evaluation.records)
        };
        let (a, b) = match (go("first"), go("second")) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                errors.push(format!("{name}: {e}"));
                continue;
            }
        };
        records += a.len();
        let same = a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| x.metrics_hash == y.metrics_hash && x.without_timing() == y.without_timing());
        if !same {
            mismatched.push(name);
        }
    }
    let mut o = Outcome::new(
        mismatched.is_empty() && errors.is_empty(),
        format!(
            "12 experiment kinds, {records} records each run, hash mismatches: {}, {}",
            if mismatched.is_empty() { "none".to_string() } else { mismatched.join(", ") },
            secs(t0.elapsed())
        ),
    );
    for e in errors {
        o = o.note(format!("run failed: {e}"));
    }
    o
}

fn main() -> ExitCode {
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "boundary normalization, binary +-1", c1_boundary_normalization),
        (2, "many-to-one exactness", c2_many_to_one),
        (3, "small-deviation DP vs MC and rate", c3_mogulskii),
        (4, "critical curve and threshold closed forms", c4_curves),
        (5, "killed survival bracket", c5_survival_bracket),
        (6, "rank coupling keeps domination", c6_coupling),
        (7, "selection conservation and tie-break", c7_selection),
        (8, "Galton-Watson left tail", c8_gw_tail),
        (9, "consistent maximal displacement trend", c9_consistent_displacement),
        (10, "reproducibility", c10_reproducibility),
    ];
    // ACCEPTANCE_ONLY=3,8 runs a subset
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut unexpected = Vec::new();
    let mut passed = 0;
    let mut ran = 0;
    for (id, title, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        ran += 1;
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{verdict} [{id:>2}] {title}: {}", o.summary);
        for d in &o.details {
            println!("          {d}");
        }
        if o.pass {
            passed += 1;
        } else if !KNOWN_FAILURES.contains(&id) {
            unexpected.push(id);
        }
    }
    println!("acceptance: {passed}/{ran} pass");
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
