//! Small-deviation machinery: corridor confinement probabilities of centred
//! random walks by Monte Carlo and by exact lattice dynamic programming, and
//! the rate functional `H_t(f, g) = (pi^2 sigma^2 / 2) int_0^t ds / (g_s - f_s)^2`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laws::ReproductionLaw;
use crate::quad;
use crate::seed::SeedStream;
use crate::spine::SpineLaw;
use crate::stats::{Proportion, Z95};

pub use crate::profile::{BarrierProfile, Curve};

/// Default cap on the number of lattice sites tracked per generation.
pub const DEFAULT_WIDTH_BUDGET: usize = 1 << 22;

/// Law of the auxiliary mark paired with each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarkLaw {
    Constant { value: f64 },
    Exponential { mean: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepKind {
    /// Steps `unit * k` with probabilities `atoms[(k, p)]`.
    Lattice { unit: f64, atoms: Vec<(i64, f64)> },
    Gaussian { sd: f64 },
    /// Spine steps of a boundary-case law, marked by the sibling weight `xi`.
    Spine(Box<SpineLaw>),
}

/// Increment law of a centred walk, with an optional mark per step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLaw {
    kind: StepKind,
    mark: Option<MarkLaw>,
}

impl StepLaw {
    pub fn lattice(unit: f64, atoms: Vec<(i64, f64)>) -> Result<Self> {
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if atoms.is_empty() || (total - 1.0).abs() > 1e-12 || atoms.iter().any(|a| a.1 < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lattice step probabilities must be nonnegative and sum to 1 (got {total})"
            )));
        }
        if !(unit.is_finite() && unit > 0.0) {
            return Err(Error::InvalidArgument(format!("lattice unit {unit}")));
        }
        let atoms = atoms.into_iter().filter(|a| a.1 > 0.0).collect();
        Ok(StepLaw {
            kind: StepKind::Lattice { unit, atoms },
            mark: None,
        })
    }

    /// Simple random walk: +1 or -1 with probability 1/2.
    pub fn pm1() -> Self {
        Self::lattice(1.0, vec![(-1, 0.5), (1, 0.5)]).expect("static law")
    }

    pub fn gaussian(sd: f64) -> Result<Self> {
        if !(sd.is_finite() && sd > 0.0) {
            return Err(Error::InvalidArgument(format!("gaussian sd {sd}")));
        }
        Ok(StepLaw {
            kind: StepKind::Gaussian { sd },
            mark: None,
        })
    }

    /// Spine walk of a boundary-case law; marks are the sibling weights.
    pub fn spine(law: &ReproductionLaw) -> Result<Self> {
        Ok(StepLaw {
            kind: StepKind::Spine(Box::new(SpineLaw::new(law)?)),
            mark: None,
        })
    }

    /// Pairs every step with an independent mark (ignored by spine steps,
    /// which carry their own).
    pub fn with_marks(mut self, mark: MarkLaw) -> Self {
        self.mark = Some(mark);
        self
    }

    pub fn kind(&self) -> &StepKind {
        &self.kind
    }

    pub fn is_lattice(&self) -> bool {
        matches!(self.kind, StepKind::Lattice { .. })
    }

    /// `(E[X], E[X^2])`, exact where available.
    pub fn moments(&self) -> (f64, f64) {
        match &self.kind {
            StepKind::Lattice { unit, atoms } => {
                let m: f64 = atoms.iter().map(|&(k, p)| p * unit * k as f64).sum();
                let s: f64 = atoms
                    .iter()
                    .map(|&(k, p)| p * (unit * k as f64).powi(2))
                    .sum();
                (m, s)
            }
            StepKind::Gaussian { sd } => (0.0, sd * sd),
            StepKind::Spine(sl) => match sl.atoms() {
                Some(a) => (
                    a.iter().map(|x| x.prob * x.step).sum(),
                    a.iter().map(|x| x.prob * x.step * x.step).sum(),
                ),
                None => {
                    let t = sl.base().tilt(1.0).expect("spine laws have a closed form");
                    (t.d1, t.d2 + t.d1 * t.d1)
                }
            },
        }
    }

    pub fn sigma2(&self) -> f64 {
        let (m, s) = self.moments();
        s - m * m
    }

    /// One step and its mark (0 when the law has no marks).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let step = match &self.kind {
            StepKind::Lattice { unit, atoms } => unit * sample_atom(atoms, rng) as f64,
            StepKind::Gaussian { sd } => Normal::new(0.0, *sd).expect("sd > 0").sample(rng),
            StepKind::Spine(sl) => return sl.sample_step(rng),
        };
        let mark = match self.mark {
            None => 0.0,
            Some(MarkLaw::Constant { value }) => value,
            Some(MarkLaw::Exponential { mean }) => Exp::new(1.0 / mean).expect("mean > 0").sample(rng),
        };
        (step, mark)
    }
}

fn sample_atom<R: Rng + ?Sized>(atoms: &[(i64, f64)], rng: &mut R) -> i64 {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for &(k, p) in atoms {
        acc += p;
        if u < acc {
            return k;
        }
    }
    atoms[atoms.len() - 1].0
}

/// `H_t(f, g)` by adaptive Gauss-Kronrod on `[0, t]`, split at profile knots.
pub fn mogulskii_rate(profile: &BarrierProfile, t: f64, sigma2: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t = {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let integral = inverse_square_width(profile, 0.0, t)?;
    Ok(0.5 * PI * PI * sigma2 * integral)
}

/// `int_a^b ds / (g_s - f_s)^2`, refusing non-integrable endpoint pinches.
pub(crate) fn inverse_square_width(profile: &BarrierProfile, a: f64, b: f64) -> Result<f64> {
    const GRID: usize = 4096;
    for i in 1..GRID {
        let s = a + (b - a) * i as f64 / GRID as f64;
        if profile.width(s) <= 0.0 {
            return Err(Error::NonIntegrable(format!(
                "corridor width vanishes at interior point s = {s}"
            )));
        }
    }
    for (end, dir) in [(a, 1.0), (b, -1.0)] {
        if profile.width(end) <= 0.0 {
            let w1 = profile.width(end + dir * 1e-6 * (b - a));
            let w2 = profile.width(end + dir * 1e-9 * (b - a));
            if w1 <= 0.0 || w2 <= 0.0 {
                return Err(Error::NonIntegrable(format!(
                    "corridor width vanishes near s = {end}"
                )));
            }
            // width ~ d^p near the pinch; 1/width^2 is integrable iff p < 1/2
            let p = (w1 / w2).ln() / 1000f64.ln();
            if p >= 0.5 - 1e-6 {
                return Err(Error::NonIntegrable(format!(
                    "width vanishes like d^{p:.3} at s = {end}; 1/width^2 is not integrable"
                )));
            }
        }
    }
    let mut points = vec![a];
    points.extend(profile.knots().into_iter().filter(|&k| k > a && k < b));
    points.push(b);
    let q = quad::integrate(|s| profile.width(s).powi(-2), &points, 1e-11, 0.0)?;
    Ok(q.value)
}

/// Cumulative `H_t` on `ts` (sorted, within `[0, 1]`).
pub fn rate_table(profile: &BarrierProfile, ts: &[f64], sigma2: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ts.len());
    let mut acc = 0.0;
    let mut prev = 0.0;
    for &t in ts {
        if t > prev {
            acc += inverse_square_width(profile, prev, t)?;
            prev = t;
        }
        out.push(0.5 * PI * PI * sigma2 * acc);
    }
    Ok(out)
}

/// Integer corridor `[lo_j, hi_j]` in lattice units for `S_j / a_n in [f, g]`,
/// with the real bounds widened by a few ulps before rounding inward.
pub fn lattice_corridor(
    profile: &BarrierProfile,
    n: usize,
    a_n: f64,
    unit: f64,
) -> (Vec<i64>, Vec<i64>) {
    let mut lo = Vec::with_capacity(n + 1);
    let mut hi = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let t = if n == 0 { 0.0 } else { j as f64 / n as f64 };
        let (l, h) = real_bounds(profile, t, a_n);
        lo.push(clamp_i64((l / unit).ceil()));
        hi.push(clamp_i64((h / unit).floor()));
    }
    (lo, hi)
}

fn lattice_target((x, y): (f64, f64), a_n: f64, unit: f64) -> (i64, i64) {
    let (l, h) = widen(x * a_n, y * a_n);
    (clamp_i64((l / unit).ceil()), clamp_i64((h / unit).floor()))
}

fn widen(l: f64, h: f64) -> (f64, f64) {
    (
        l - 4.0 * f64::EPSILON * l.abs().max(1.0),
        h + 4.0 * f64::EPSILON * h.abs().max(1.0),
    )
}

fn clamp_i64(x: f64) -> i64 {
    x.clamp(-(1i64 << 60) as f64, (1i64 << 60) as f64) as i64
}

fn real_bounds(profile: &BarrierProfile, t: f64, a_n: f64) -> (f64, f64) {
    widen(profile.lower.eval(t) * a_n, profile.upper.eval(t) * a_n)
}

/// Exact probability with its logarithm (the latter survives underflow).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactProb {
    pub prob: f64,
    pub log_prob: f64,
}

impl ExactProb {
    fn from_log(log_prob: f64) -> Self {
        ExactProb {
            prob: log_prob.exp(),
            log_prob,
        }
    }
}

/// Forward DP for a lattice walk started at `start` (in lattice units) to stay
/// in `[lower[j], upper[j]]` for `j = 0..=n`, and optionally end in `target`.
pub fn exact_confinement_dp(
    step: &StepLaw,
    lower: &[i64],
    upper: &[i64],
    start: i64,
    n: usize,
    target: Option<(i64, i64)>,
    width_budget: usize,
) -> Result<ExactProb> {
    let StepKind::Lattice { atoms, .. } = &step.kind else {
        return Err(Error::InvalidArgument("exact DP needs a lattice step law".into()));
    };
    if lower.len() != n + 1 || upper.len() != n + 1 {
        return Err(Error::InvalidArgument(format!(
            "barrier paths need n + 1 = {} entries",
            n + 1
        )));
    }
    if start < lower[0] || start > upper[0] {
        return Ok(ExactProb::from_log(f64::NEG_INFINITY));
    }
    let kmin = atoms.iter().map(|a| a.0).min().expect("nonempty");
    let kmax = atoms.iter().map(|a| a.0).max().expect("nonempty");
    // reachable window intersected with the corridor
    let (mut lo, mut hi) = (start, start);
    let mut cur = vec![1.0f64];
    let mut log_scale = 0.0;
    for j in 1..=n {
        let nlo = (lo + kmin).max(lower[j]);
        let nhi = (hi + kmax).min(upper[j]);
        if nlo > nhi {
            return Ok(ExactProb::from_log(f64::NEG_INFINITY));
        }
        let width = (nhi - nlo + 1) as usize;
        if width > width_budget {
            return Err(Error::WidthBudget {
                width,
                budget: width_budget,
            });
        }
        let mut next = vec![0.0f64; width];
        for (i, &p) in cur.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let x = lo + i as i64;
            for &(k, q) in atoms {
                let y = x + k;
                if y >= nlo && y <= nhi {
                    next[(y - nlo) as usize] += p * q;
                }
            }
        }
        let total: f64 = next.iter().sum();
        if total == 0.0 {
            return Ok(ExactProb::from_log(f64::NEG_INFINITY));
        }
        // renormalize to keep the vector in range; remember the factor
        for v in &mut next {
            *v /= total;
        }
        log_scale += total.ln();
        cur = next;
        lo = nlo;
        hi = nhi;
    }
    let mass: f64 = match target {
        None => cur.iter().sum(),
        Some((a, b)) => cur
            .iter()
            .enumerate()
            .filter(|&(i, _)| {
                let x = lo + i as i64;
                x >= a && x <= b
            })
            .map(|(_, &p)| p)
            .sum(),
    };
    Ok(ExactProb::from_log(log_scale + mass.ln()))
}

/// Confinement probability estimated by simulation, with a Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfinementEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub hits: u64,
    pub reps: u64,
}

impl ConfinementEstimate {
    pub fn zero_hit(&self) -> bool {
        self.hits == 0
    }
}

/// Parameters of one confinement experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Confinement<'a> {
    pub step: &'a StepLaw,
    pub profile: &'a BarrierProfile,
    pub n: usize,
    pub a_n: f64,
    pub start_z: f64,
    pub target: Option<(f64, f64)>,
    pub with_marks: bool,
}

impl Confinement<'_> {
    /// Lattice DP for the same event (start rounded to the nearest site).
    pub fn exact(&self) -> Result<ExactProb> {
        let StepKind::Lattice { unit, .. } = &self.step.kind else {
            return Err(Error::InvalidArgument("exact DP needs a lattice step law".into()));
        };
        let (lo, hi) = lattice_corridor(self.profile, self.n, self.a_n, *unit);
        let start = (self.start_z * self.a_n / unit).round() as i64;
        let target = self.target.map(|t| lattice_target(t, self.a_n, *unit));
        exact_confinement_dp(self.step, &lo, &hi, start, self.n, target, DEFAULT_WIDTH_BUDGET)
    }

    /// Monte Carlo estimate over `reps` replicas of `stream`.
    pub fn monte_carlo(&self, reps: u64, stream: &SeedStream) -> Result<ConfinementEstimate> {
        let n = self.n;
        let mark_cap = n as f64;
        let lattice = match &self.step.kind {
            StepKind::Lattice { unit, atoms } => Some((*unit, atoms.clone())),
            _ => None,
        };
        let prop = match lattice {
            Some((unit, atoms)) => {
                let (lo, hi) = lattice_corridor(self.profile, n, self.a_n, unit);
                let start = (self.start_z * self.a_n / unit).round() as i64;
                let target = self.target.map(|t| lattice_target(t, self.a_n, unit));
                stream.fold_replicas(
                    reps,
                    |_, rng, acc: &mut Proportion| {
                        let mut x = start;
                        let mut ok = x >= lo[0] && x <= hi[0];
                        let mut j = 1;
                        while ok && j <= n {
                            x += sample_atom(&atoms, rng);
                            ok = x >= lo[j] && x <= hi[j];
                            if ok && self.with_marks {
                                ok = self.draw_mark(rng) <= mark_cap;
                            }
                            j += 1;
                        }
                        if ok {
                            if let Some((a, b)) = target {
                                ok = x >= a && x <= b;
                            }
                        }
                        acc.record(ok);
                        Ok(())
                    },
                    |a, b| a.merge(&b),
                )?
            }
            None => {
                let bounds: Vec<(f64, f64)> = (0..=n)
                    .map(|j| {
                        let t = if n == 0 { 0.0 } else { j as f64 / n as f64 };
                        real_bounds(self.profile, t, self.a_n)
                    })
                    .collect();
                stream.fold_replicas(
                    reps,
                    |_, rng, acc: &mut Proportion| {
                        let mut x = self.start_z * self.a_n;
                        let mut ok = x >= bounds[0].0 && x <= bounds[0].1;
                        let mut j = 1;
                        while ok && j <= n {
                            let (d, mark) = self.step.sample(rng);
                            x += d;
                            ok = x >= bounds[j].0 && x <= bounds[j].1;
                            if ok && self.with_marks {
                                ok = mark <= mark_cap;
                            }
                            j += 1;
                        }
                        if ok {
                            if let Some((a, b)) = self.target {
                                ok = x >= a * self.a_n && x <= b * self.a_n;
                            }
                        }
                        acc.record(ok);
                        Ok(())
                    },
                    |a, b| a.merge(&b),
                )?
            }
        };
        let (ci_lo, ci_hi) = prop.wilson(Z95);
        Ok(ConfinementEstimate {
            estimate: prop.freq(),
            stderr: prop.stderr(),
            ci_lo,
            ci_hi,
            hits: prop.successes,
            reps: prop.trials,
        })
    }

    fn draw_mark<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.step.mark {
            None => 0.0,
            Some(MarkLaw::Constant { value }) => value,
            Some(MarkLaw::Exponential { mean }) => {
                Exp::new(1.0 / mean).expect("mean > 0").sample(rng)
            }
        }
    }
}

/// `P_{z a_n}[S_n / a_n in target; S_j / a_n in [f_{j/n}, g_{j/n}] for j <= n; E_n]`
/// by Monte Carlo.
#[allow(clippy::too_many_arguments)]
pub fn mc_confinement_prob(
    step: &StepLaw,
    profile: &BarrierProfile,
    n: usize,
    a_n: f64,
    start_z: f64,
    target: Option<(f64, f64)>,
    with_marks: bool,
    reps: u64,
    stream: &SeedStream,
) -> Result<ConfinementEstimate> {
    Confinement {
        step,
        profile,
        n,
        a_n,
        start_z,
        target,
        with_marks,
    }
    .monte_carlo(reps, stream)
}

/// Normalizing sequence `a_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScaleRule {
    /// `a_n = n^exponent`
    Power { exponent: f64 },
}

impl Default for ScaleRule {
    fn default() -> Self {
        ScaleRule::Power {
            exponent: 1.0 / 3.0,
        }
    }
}

impl ScaleRule {
    pub fn a_n(&self, n: usize) -> f64 {
        match self {
            ScaleRule::Power { exponent } => (n as f64).powf(*exponent),
        }
    }
}

/// How each row of a rate report is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    Exact,
    MonteCarlo { reps: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub a_n: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// `(a_n^2 / n) log P`
    pub scaled_log: f64,
    /// `-(pi^2 sigma^2 / 2) int_0^1 ds / (g_s - f_s)^2`
    pub target_constant: f64,
}

/// Scaled log confinement probabilities for a list of horizons, from start 0.
pub fn rate_convergence_report(
    step: &StepLaw,
    profile: &BarrierProfile,
    rule: ScaleRule,
    ns: &[usize],
    sigma2: f64,
    estimator: Estimator,
) -> Result<Vec<RateRow>> {
    let target_constant = -mogulskii_rate(profile, 1.0, sigma2)?;
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let a_n = rule.a_n(n);
        let c = Confinement {
            step,
            profile,
            n,
            a_n,
            start_z: 0.0,
            target: None,
            with_marks: false,
        };
        let (estimate, stderr, log_p) = match estimator {
            Estimator::Exact => {
                let e = c.exact()?;
                (e.prob, 0.0, e.log_prob)
            }
            Estimator::MonteCarlo { reps, seed } => {
                let stream = SeedStream::named(seed, "rate_convergence").derive(n as u64);
                let e = c.monte_carlo(reps, &stream)?;
                (e.estimate, e.stderr, e.estimate.ln())
            }
        };
        rows.push(RateRow {
            n,
            a_n,
            estimate,
            stderr,
            scaled_log: a_n * a_n / n as f64 * log_p,
            target_constant,
        });
    }
    Ok(rows)
}

pub fn rate_rows_csv(rows: &[RateRow]) -> String {
    let mut s = String::from("n,a_n,estimate,stderr,scaled_log,target_constant\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:e},{:e},{},{}",
            r.n, r.a_n, r.estimate, r.stderr, r.scaled_log, r.target_constant
        );
    }
    s
}

/// Exact log confinement probability from each start `z` (scaled by `a_n`).
pub fn log_prob_by_start(
    step: &StepLaw,
    profile: &BarrierProfile,
    n: usize,
    a_n: f64,
    starts: &[f64],
) -> Result<Vec<(f64, f64)>> {
    starts
        .iter()
        .map(|&z| {
            let c = Confinement {
                step,
                profile,
                n,
                a_n,
                start_z: z,
                target: None,
                with_marks: false,
            };
            Ok((z, c.exact()?.log_prob))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn band() -> BarrierProfile {
        BarrierProfile::constant(-1.0, 1.0).unwrap()
    }

    #[test]
    fn rate_examples() {
        assert_eq!(mogulskii_rate(&band(), 0.0, 1.0).unwrap(), 0.0);
        let h = mogulskii_rate(&band(), 1.0, 1.0).unwrap();
        assert!((h - PI * PI / 8.0).abs() < 1e-12);
        let pinch = BarrierProfile::new(
            Curve::constant(0.0),
            Curve::CubeRoot {
                scale: 1.0,
                eps: 0.1,
                offset: 0.0,
            },
        )
        .unwrap();
        let v = mogulskii_rate(&pinch, 1.0, 1.0).unwrap();
        let exact = 0.5 * PI * PI * 3.0 * (1.1f64.cbrt() - 0.1f64.cbrt());
        assert!((v - exact).abs() < 1e-8 * exact, "{v} vs {exact}");
        assert!((v - 8.4107).abs() < 1e-3);
    }

    #[test]
    fn integrable_and_non_integrable_pinches() {
        let cube = BarrierProfile::new(
            Curve::constant(0.0),
            Curve::CubeRoot {
                scale: 1.0,
                eps: 0.0,
                offset: 0.0,
            },
        )
        .unwrap();
        let v = mogulskii_rate(&cube, 1.0, 1.0).unwrap();
        assert!((v - 0.5 * PI * PI * 3.0).abs() < 1e-7 * v);
        let linear = BarrierProfile::new(
            Curve::constant(0.0),
            Curve::Affine {
                intercept: 0.0,
                slope: 1.0,
            },
        )
        .unwrap();
        assert!(matches!(
            mogulskii_rate(&linear, 1.0, 1.0),
            Err(Error::NonIntegrable(_))
        ));
    }

    #[test]
    fn dp_trivial_cases() {
        let s = StepLaw::pm1();
        let p = exact_confinement_dp(&s, &[0], &[0], 0, 0, None, 100).unwrap();
        assert_eq!(p.prob, 1.0);
        let p = exact_confinement_dp(&s, &[1, 0], &[2, 2], 0, 1, None, 100).unwrap();
        assert_eq!(p.prob, 0.0);
    }

    #[test]
    fn dp_transfer_eigenvalue() {
        // three sites: per-step factor cos(pi/4), so P_{n+2}/P_n -> 1/2
        let s = StepLaw::pm1();
        let run = |n: usize| {
            exact_confinement_dp(&s, &vec![-1; n + 1], &vec![1; n + 1], 0, n, None, 100)
                .unwrap()
                .log_prob
        };
        let r = (run(202) - run(200)).exp();
        assert!((r - 0.5).abs() < 1e-6, "{r}");
    }

    #[test]
    fn dp_target_additivity() {
        let s = StepLaw::lattice(1.0, vec![(-2, 0.25), (0, 0.25), (1, 0.5)]).unwrap();
        let n = 30;
        let lo = vec![-6; n + 1];
        let hi = vec![5; n + 1];
        let all = exact_confinement_dp(&s, &lo, &hi, 0, n, None, 100).unwrap().prob;
        let parts: f64 = (-6..=5)
            .map(|k| {
                exact_confinement_dp(&s, &lo, &hi, 0, n, Some((k, k)), 100)
                    .unwrap()
                    .prob
            })
            .sum();
        assert!((all - parts).abs() < 1e-14);
    }

    #[test]
    fn dp_width_budget() {
        let s = StepLaw::pm1();
        let n = 50;
        let err = exact_confinement_dp(&s, &vec![-100; n + 1], &vec![100; n + 1], 0, n, None, 10)
            .unwrap_err();
        assert!(matches!(err, Error::WidthBudget { .. }));
    }

    #[test]
    fn wide_corridor_certain() {
        let s = StepLaw::pm1();
        let p = BarrierProfile::constant(-100.0, 100.0).unwrap();
        let e = mc_confinement_prob(&s, &p, 64, 4.0, 0.0, None, false, 500, &SeedStream::new(1, 2))
            .unwrap();
        assert_eq!(e.estimate, 1.0);
    }

    #[test]
    fn zero_marks_change_nothing() {
        let s = StepLaw::gaussian(1.0).unwrap();
        let marked = s.clone().with_marks(MarkLaw::Constant { value: 0.0 });
        let stream = SeedStream::new(5, 6);
        let a = mc_confinement_prob(&s, &band(), 27, 3.0, 0.0, None, false, 4000, &stream).unwrap();
        let b = mc_confinement_prob(&marked, &band(), 27, 3.0, 0.0, None, true, 4000, &stream)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mc_matches_dp_small() {
        let s = StepLaw::pm1();
        let n = 64;
        let c = Confinement {
            step: &s,
            profile: &band(),
            n,
            a_n: 4.0,
            start_z: 0.0,
            target: Some((-0.5, 0.5)),
            with_marks: false,
        };
        let ex = c.exact().unwrap().prob;
        let mc = c.monte_carlo(100_000, &SeedStream::new(3, 4)).unwrap();
        assert!((ex - mc.estimate).abs() < 4.0 * mc.stderr, "{ex} {mc:?}");
    }

    #[test]
    fn report_single_row() {
        let rows = rate_convergence_report(
            &StepLaw::pm1(),
            &band(),
            ScaleRule::default(),
            &[64],
            1.0,
            Estimator::Exact,
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].target_constant + PI * PI / 8.0).abs() < 1e-12);
        assert_eq!(rate_rows_csv(&rows).lines().count(), 2);
    }
}
