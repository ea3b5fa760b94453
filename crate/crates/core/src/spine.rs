//! Size-biased reproduction law, the spine walk, and many-to-one estimators.
//!
//! For a law with `E[sum e^l] = e^k1` the size-biased pair (realization,
//! child) has weight `p_r e^{l_i} / e^k1`. Then for any path functional `G`,
//! `E[sum_{|u|=n} G(V(u_1..u_n))] = e^{n k1} E[e^{-S_n} G(S_1..S_n)]`, with
//! `k1 = 0` in the boundary case. Weights are kept in log space throughout.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laws::ReproductionLaw;
use crate::profile::BarrierProfile;
use crate::seed::SeedStream;
use crate::stats::{log_sum_exp, LogWeightAccumulator, MeanAccumulator, WeightedEstimate};

pub const DEFAULT_DEPTH_CAP: usize = 4;
pub const DEFAULT_BUDGET: f64 = 1e7;

/// `log(1 + sum e^d)` over sibling displacements relative to the chosen child.
pub fn xi_of(relative: &[f64]) -> f64 {
    if relative.is_empty() {
        return 0.0;
    }
    let mut v = Vec::with_capacity(relative.len() + 1);
    v.push(0.0);
    v.extend_from_slice(relative);
    log_sum_exp(&v)
}

/// One size-biased atom: spine displacement, its sibling weight, probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpineAtom {
    pub step: f64,
    pub xi: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Table {
        atoms: Vec<SpineAtom>,
        cumulative: Vec<f64>,
    },
    PoissonGaussian {
        extra_mean: f64,
        sd: f64,
        scale: f64,
        shift: f64,
    },
}

/// The size-biased reproduction law together with the spine-child choice.
#[derive(Debug, Clone, PartialEq)]
pub struct SpineLaw {
    base: ReproductionLaw,
    kind: Kind,
    log_mass: f64,
}

impl SpineLaw {
    pub fn new(base: &ReproductionLaw) -> Result<Self> {
        let tilt = base.tilt(1.0).ok_or_else(|| {
            Error::NotEnumerable(format!("{}: no size-biased sampler", base.describe()))
        })?;
        if !tilt.kappa.is_finite() {
            return Err(Error::MomentDiverges("E[sum e^l] is not finite".into()));
        }
        let log_mass = tilt.kappa;
        let kind = match base.enumerate() {
            Some(rs) => {
                let mut atoms = Vec::new();
                for r in &rs {
                    for (i, &l) in r.children.iter().enumerate() {
                        let rel: Vec<f64> = r
                            .children
                            .iter()
                            .enumerate()
                            .filter(|&(j, _)| j != i)
                            .map(|(_, &m)| m - l)
                            .collect();
                        atoms.push(SpineAtom {
                            step: l,
                            xi: xi_of(&rel),
                            prob: (r.prob.ln() + l - log_mass).exp(),
                        });
                    }
                }
                let mut acc = 0.0;
                let cumulative = atoms
                    .iter()
                    .map(|a| {
                        acc += a.prob;
                        acc
                    })
                    .collect();
                Kind::Table { atoms, cumulative }
            }
            None => {
                let crate::laws::LawSpec::PoissonGaussian { mean, sd } = base.spec() else {
                    return Err(Error::NotEnumerable(base.describe()));
                };
                let (scale, shift) = base.affine();
                Kind::PoissonGaussian {
                    extra_mean: mean - 1.0,
                    sd: *sd,
                    scale,
                    shift,
                }
            }
        };
        Ok(SpineLaw {
            base: base.clone(),
            kind,
            log_mass,
        })
    }

    pub fn base(&self) -> &ReproductionLaw {
        &self.base
    }

    /// `log E[sum e^l]`; zero in the boundary case.
    pub fn log_mass(&self) -> f64 {
        self.log_mass
    }

    /// The spine step law as a finite table, when the base law is enumerable.
    pub fn atoms(&self) -> Option<&[SpineAtom]> {
        match &self.kind {
            Kind::Table { atoms, .. } => Some(atoms),
            Kind::PoissonGaussian { .. } => None,
        }
    }

    /// One spine step: `(displacement, xi)`.
    pub fn sample_step<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match &self.kind {
            Kind::Table { atoms, cumulative } => {
                let u = rng.random::<f64>() * cumulative[cumulative.len() - 1];
                // ties resolve to the first index
                let i = cumulative
                    .partition_point(|&c| c <= u)
                    .min(atoms.len() - 1);
                (atoms[i].step, atoms[i].xi)
            }
            Kind::PoissonGaussian {
                extra_mean,
                sd,
                scale,
                shift,
            } => {
                // size-biased count 1 + P: P ~ Poisson(m) w.p. 1/(1+m), else 1 + Poisson(m)
                let m = *extra_mean;
                let mut siblings = if m > 0.0 {
                    Poisson::new(m).expect("positive").sample(rng) as u64
                } else {
                    0
                };
                if m > 0.0 && rng.random::<f64>() >= 1.0 / (1.0 + m) {
                    siblings += 1;
                }
                let x = Normal::new(scale * sd * sd, *sd).expect("sd > 0").sample(rng);
                let step = scale * x + shift;
                let noise = Normal::new(0.0, *sd).expect("sd > 0");
                let mut rel = Vec::with_capacity(siblings as usize);
                for _ in 0..siblings {
                    rel.push(scale * noise.sample(rng) + shift - step);
                }
                (step, xi_of(&rel))
            }
        }
    }
}

/// Spine positions `S_0..S_n`, sibling weights `xi(w_1..w_n)`, and `log(e^{a - S_n})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinePath {
    pub positions: Vec<f64>,
    pub xi: Vec<f64>,
    pub log_weight: f64,
}

pub fn sample_spine_path<R: Rng + ?Sized>(
    sl: &SpineLaw,
    n: usize,
    start: f64,
    rng: &mut R,
) -> SpinePath {
    let mut positions = Vec::with_capacity(n + 1);
    let mut xi = Vec::with_capacity(n);
    positions.push(start);
    let mut s = start;
    for _ in 0..n {
        let (d, x) = sl.sample_step(rng);
        s += d;
        positions.push(s);
        xi.push(x);
    }
    SpinePath {
        positions,
        xi,
        log_weight: start - s + n as f64 * sl.log_mass,
    }
}

/// Exact enumeration (with a depth cap and a work budget) or Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Exact { depth_cap: usize, budget: f64 },
    MonteCarlo { reps: u64, seed: u64 },
}

impl Mode {
    pub fn exact() -> Self {
        Mode::Exact {
            depth_cap: DEFAULT_DEPTH_CAP,
            budget: DEFAULT_BUDGET,
        }
    }
}

/// Result of a many-to-one computation. In exact mode `lineage` holds the
/// direct sum over the genealogy and `difference = lineage - value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManyToOne {
    pub value: f64,
    pub stderr: f64,
    pub lineage: Option<f64>,
    pub difference: Option<f64>,
}

fn check_budget(branches: usize, n: usize, depth_cap: usize, budget: f64) -> Result<()> {
    let size = (branches as f64).powi(n as i32);
    if n > depth_cap || size > budget {
        return Err(Error::EnumerationTooLarge {
            size,
            budget: if n > depth_cap { 0.0 } else { budget },
        });
    }
    Ok(())
}

/// `E[sum_{|u|=n} G(V(u_1), ..., V(u_n))]` for a root at 0.
///
/// Exact mode computes the left side by summing over lineages (sequences of
/// realization/child choices weighted by the realization probabilities) and
/// the right side by enumerating spine paths with weights `e^{n k1 - S_n}`.
pub fn many_to_one_expectation<G>(
    law: &ReproductionLaw,
    n: usize,
    functional: G,
    mode: Mode,
) -> Result<ManyToOne>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    let sl = SpineLaw::new(law)?;
    match mode {
        Mode::Exact { depth_cap, budget } => {
            let rs = law
                .enumerate()
                .ok_or_else(|| Error::NotEnumerable(law.describe()))?;
            let atoms = sl.atoms().expect("enumerable");
            check_budget(atoms.len(), n, depth_cap, budget)?;
            let mut path = Vec::with_capacity(n);
            let lineage = lineage_sum(&rs, n, 0.0, 1.0, &mut path, &functional);
            let mut path = Vec::with_capacity(n);
            let spine = spine_sum(atoms, sl.log_mass, n, 0.0, 0.0, &mut path, &mut |p, lw| {
                (lw - p.last().copied().unwrap_or(0.0)).exp() * functional(p)
            });
            Ok(ManyToOne {
                value: spine,
                stderr: 0.0,
                lineage: Some(lineage),
                difference: Some(lineage - spine),
            })
        }
        Mode::MonteCarlo { reps, seed } => {
            let stream = SeedStream::named(seed, "many_to_one");
            let acc = stream.fold_replicas(
                reps,
                |_, rng, acc: &mut MeanAccumulator| {
                    let p = sample_spine_path(&sl, n, 0.0, rng);
                    acc.push(p.log_weight.exp() * functional(&p.positions[1..]));
                    Ok(())
                },
                |a, b| a.merge(&b),
            )?;
            let e = acc.estimate();
            Ok(ManyToOne {
                value: e.mean,
                stderr: e.stderr,
                lineage: None,
                difference: None,
            })
        }
    }
}

fn lineage_sum<G: Fn(&[f64]) -> f64>(
    rs: &[crate::laws::Realization],
    remaining: usize,
    pos: f64,
    weight: f64,
    path: &mut Vec<f64>,
    g: &G,
) -> f64 {
    if remaining == 0 {
        return weight * g(path);
    }
    let mut total = 0.0;
    for r in rs {
        for &l in &r.children {
            path.push(pos + l);
            total += lineage_sum(rs, remaining - 1, pos + l, weight * r.prob, path, g);
            path.pop();
        }
    }
    total
}

/// Sums `visit(path, log_prob + n k1)` over all spine paths of length `remaining`.
#[allow(clippy::too_many_arguments)]
fn spine_sum<V: FnMut(&[f64], f64) -> f64>(
    atoms: &[SpineAtom],
    log_mass: f64,
    remaining: usize,
    pos: f64,
    log_w: f64,
    path: &mut Vec<f64>,
    visit: &mut V,
) -> f64 {
    if remaining == 0 {
        return visit(path, log_w);
    }
    let mut total = 0.0;
    for a in atoms {
        path.push(pos + a.step);
        total += spine_sum(
            atoms,
            log_mass,
            remaining - 1,
            pos + a.step,
            log_w + a.prob.ln() + log_mass,
            path,
            visit,
        );
        path.pop();
    }
    total
}

/// Corridor `I_j = [f(j/n) n^(1/3), g(j/n) n^(1/3)]`, precomputed per generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Corridor {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Corridor {
    pub fn new(profile: &BarrierProfile, n: usize) -> Self {
        let scale = (n as f64).cbrt();
        let t = |j: usize| if n == 0 { 0.0 } else { j as f64 / n as f64 };
        Corridor {
            lo: (0..=n).map(|j| profile.lower.eval(t(j)) * scale).collect(),
            hi: (0..=n).map(|j| profile.upper.eval(t(j)) * scale).collect(),
        }
    }

    #[inline]
    pub fn contains(&self, j: usize, x: f64) -> bool {
        x >= self.lo[j] && x <= self.hi[j]
    }
}

/// Weight contributed by one spine path to `E[Y]`: `e^{k k1 - S_k}` at the first
/// `k` with `S_k >= g_k` provided `S_j` stayed in the corridor for `j < k`.
fn y_log_weight(c: &Corridor, positions: &[f64], log_mass: f64) -> f64 {
    if !c.contains(0, positions[0]) {
        return f64::NEG_INFINITY;
    }
    for k in 1..positions.len() {
        let s = positions[k];
        if s >= c.hi[k] {
            return k as f64 * log_mass - s;
        }
        if s < c.lo[k] {
            return f64::NEG_INFINITY;
        }
    }
    f64::NEG_INFINITY
}

fn z_log_weight(c: &Corridor, positions: &[f64], log_mass: f64, lo: f64, hi: f64) -> f64 {
    let n = positions.len() - 1;
    if positions.iter().enumerate().all(|(j, &s)| c.contains(j, s)) {
        let s = positions[n];
        if s >= lo && s <= hi {
            return n as f64 * log_mass - s;
        }
    }
    f64::NEG_INFINITY
}

/// `E[Y_{f,g}^(n)]`: expected number of individuals that cross the upper wall
/// for the first time while having stayed in the corridor before.
pub fn estimate_ey(
    sl: &SpineLaw,
    profile: &BarrierProfile,
    n: usize,
    mode: Mode,
) -> Result<WeightedEstimate> {
    if n == 0 {
        return Err(Error::InvalidArgument("estimate_ey needs n >= 1".into()));
    }
    let c = Corridor::new(profile, n);
    path_functional(sl, n, mode, "estimate_ey", |p| y_log_weight(&c, p, sl.log_mass), |p| {
        // a path that already crossed, or left the corridor, contributes
        // nothing further; pruning keeps exact enumeration small
        let k = p.len() - 1;
        k > 0 && !(p[k] < c.hi[k] && p[k] >= c.lo[k])
    })
}

/// `E[Z_{f,g}^(n)(x, y)]`: expected number of generation-`n` individuals in
/// `[x n^(1/3), y n^(1/3)]` whose ancestors all stayed in the corridor.
pub fn estimate_ez(
    sl: &SpineLaw,
    profile: &BarrierProfile,
    x: f64,
    y: f64,
    n: usize,
    mode: Mode,
) -> Result<WeightedEstimate> {
    if x > y {
        return Err(Error::InvalidArgument(format!(
            "target interval [{x}, {y}] is reversed"
        )));
    }
    if x == y {
        return Ok(WeightedEstimate::exact(0.0));
    }
    let c = Corridor::new(profile, n);
    let scale = (n as f64).cbrt();
    let (lo, hi) = (x * scale, y * scale);
    path_functional(
        sl,
        n,
        mode,
        "estimate_ez",
        |p| z_log_weight(&c, p, sl.log_mass, lo, hi),
        |p| {
            let k = p.len() - 1;
            !c.contains(k, p[k])
        },
    )
}

/// Shared driver: `weight(path)` is the log contribution of a full path
/// `S_0..S_n`; `dead(prefix)` lets exact enumeration prune prefixes whose
/// contribution is already fixed (it must agree with `weight`).
fn path_functional<W, D>(
    sl: &SpineLaw,
    n: usize,
    mode: Mode,
    name: &str,
    weight: W,
    dead: D,
) -> Result<WeightedEstimate>
where
    W: Fn(&[f64]) -> f64 + Sync,
    D: Fn(&[f64]) -> bool,
{
    match mode {
        Mode::Exact { depth_cap, budget } => {
            let atoms = sl
                .atoms()
                .ok_or_else(|| Error::NotEnumerable(sl.base.describe()))?;
            check_budget(atoms.len(), n, depth_cap, budget)?;
            let mut path = vec![0.0];
            let mut acc = Vec::new();
            enumerate_pruned(atoms, n, 0.0, &mut path, &weight, &dead, &mut acc);
            let lw = log_sum_exp(&acc);
            Ok(WeightedEstimate {
                mean: lw.exp(),
                log_mean: lw,
                stderr: 0.0,
                rel_stderr: 0.0,
                samples: 0,
                hits: acc.len() as u64,
            })
        }
        Mode::MonteCarlo { reps, seed } => {
            let stream = SeedStream::named(seed, name);
            let acc = stream.fold_replicas(
                reps,
                |_, rng, acc: &mut LogWeightAccumulator| {
                    let p = sample_spine_path(sl, n, 0.0, rng);
                    let lw = weight(&p.positions);
                    if lw == f64::NEG_INFINITY {
                        acc.push_zero();
                    } else {
                        acc.push_log(lw);
                    }
                    Ok(())
                },
                |a, b| a.merge(&b),
            )?;
            Ok(acc.estimate())
        }
    }
}

/// Collects `log(prob) + weight(path)` for every spine path, where `prob` is
/// the product of spine atom probabilities. A pruned prefix is completed by
/// its own weight (remaining steps integrate to one).
fn enumerate_pruned<W, D>(
    atoms: &[SpineAtom],
    n: usize,
    log_p: f64,
    path: &mut Vec<f64>,
    weight: &W,
    dead: &D,
    out: &mut Vec<f64>,
) where
    W: Fn(&[f64]) -> f64,
    D: Fn(&[f64]) -> bool,
{
    let k = path.len() - 1;
    if k == n || dead(path) {
        // a pruned prefix has a sealed fate, so its weight is read off the prefix
        let w = weight(path);
        if w > f64::NEG_INFINITY {
            out.push(log_p + w);
        }
        return;
    }
    let pos = path[k];
    for a in atoms {
        path.push(pos + a.step);
        enumerate_pruned(atoms, n, log_p + a.prob.ln(), path, weight, dead, out);
        path.pop();
    }
}
