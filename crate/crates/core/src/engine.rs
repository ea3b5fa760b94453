//! Forward simulation of the branching random walk under killing and
//! selection, the domination order on populations, and the rank-indexed
//! coupling of two selection processes.
//!
//! Two simulation styles live here. `run` and `coupled_run` move a whole
//! generation at a time with one sequential generator. The survival and
//! consistent-displacement statistics instead give every node its own
//! generator, seeded from a hash of its ancestry, so the same tree can be
//! explored depth-first, re-explored at a lower kill level, or extended to a
//! longer horizon without changing any displacement.

use rand::rngs::SmallRng;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::curves::phi_inverse;
use crate::error::{Error, Result};
use crate::laws::ReproductionLaw;
use crate::profile::{BarrierProfile, Curve};
use crate::seed::{mix64, SeedStream};
use crate::spine::Corridor;
use crate::stats::{Estimate, MeanAccumulator, Proportion, Z95};

/// Default hard limit on the number of live particles.
pub const DEFAULT_CAPACITY: usize = 50_000_000;

/// Particle positions of one generation, kept in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    positions: Vec<f64>,
    generation: usize,
    cap: Option<usize>,
}

fn sort_desc(v: &mut [f64]) {
    v.sort_unstable_by(|a, b| b.total_cmp(a));
}

impl Population {
    pub fn new(mut positions: Vec<f64>) -> Self {
        sort_desc(&mut positions);
        Population {
            positions,
            generation: 0,
            cap: None,
        }
    }

    /// `q` particles at 0.
    pub fn founders(q: usize) -> Self {
        Population::new(vec![0.0; q])
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = Some(cap);
        self
    }

    pub fn with_generation(mut self, k: usize) -> Self {
        self.generation = k;
        self
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn cap(&self) -> Option<usize> {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn max(&self) -> Option<f64> {
        self.positions.first().copied()
    }

    pub fn min(&self) -> Option<f64> {
        self.positions.last().copied()
    }
}

/// Children of `parents` in parent order (unsorted).
fn offspring<R: Rng + ?Sized>(
    parents: &[f64],
    law: &ReproductionLaw,
    rng: &mut R,
    cap: usize,
    generation: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(parents.len() * 2);
    let mut buf = Vec::new();
    for &x in parents {
        buf.clear();
        law.sample_into(rng, &mut buf);
        out.extend(buf.iter().map(|l| x + l));
        if out.len() > cap {
            return Err(Error::Overflow {
                generation,
                size: out.len(),
                cap,
            });
        }
    }
    Ok(out)
}

/// Replaces every particle by its children.
pub fn step<R: Rng + ?Sized>(pop: &Population, law: &ReproductionLaw, rng: &mut R) -> Result<Population> {
    if pop.is_empty() {
        return Err(Error::InvalidArgument("step on an empty population".into()));
    }
    let k = pop.generation + 1;
    let mut next = offspring(&pop.positions, law, rng, pop.cap.unwrap_or(usize::MAX), k)?;
    sort_desc(&mut next);
    Ok(Population {
        positions: next,
        generation: k,
        cap: pop.cap,
    })
}

/// Number of survivors allowed at generation `k` under fixed-count selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CountRule {
    Constant { count: u64 },
    /// `floor(exp(a k^(1/3)))`.
    CubeRootExp { a: f64 },
    /// `counts[k]`, the last entry repeating.
    Table { counts: Vec<u64> },
}

fn floor_exp(x: f64) -> u64 {
    let v = x.exp().floor();
    if v >= u64::MAX as f64 {
        u64::MAX
    } else {
        v as u64
    }
}

impl CountRule {
    pub fn at(&self, k: usize) -> u64 {
        match self {
            CountRule::Constant { count } => *count,
            CountRule::CubeRootExp { a } => floor_exp(a * (k as f64).cbrt()),
            CountRule::Table { counts } => counts[k.min(counts.len() - 1)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CountRule::CubeRootExp { a } if !(a.is_finite() && *a > 0.0) => {
                Err(Error::InvalidArgument(format!("count exponent {a} must be positive")))
            }
            CountRule::Table { counts } if counts.is_empty() => {
                Err(Error::InvalidArgument("empty count table".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Rule deciding which children survive each generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurvivalRegime {
    /// Kill below `horizon^(1/3) f(k/horizon)`.
    KillingBoundary { f: Curve, horizon: usize },
    /// Keep the `phi(k)` rightmost children.
    TopCount { phi: CountRule },
    /// Keep the `floor(exp(horizon^(1/3) h(k/horizon)))` rightmost, starting
    /// from that many founders at 0.
    Profile { h: Curve, horizon: usize },
    /// Kill below `-eps k`.
    SlopedLine { eps: f64 },
}

impl SurvivalRegime {
    pub fn validate(&self) -> Result<()> {
        match self {
            SurvivalRegime::KillingBoundary { f, horizon } => {
                f.validate()?;
                if *horizon == 0 {
                    return Err(Error::InvalidArgument("killing horizon must be positive".into()));
                }
                Ok(())
            }
            SurvivalRegime::TopCount { phi } => phi.validate(),
            SurvivalRegime::Profile { h, horizon } => {
                h.validate()?;
                if *horizon == 0 {
                    return Err(Error::InvalidArgument("profile horizon must be positive".into()));
                }
                if h.min() <= 0.0 {
                    return Err(Error::InvalidProfile("selection profile must be positive".into()));
                }
                Ok(())
            }
            SurvivalRegime::SlopedLine { eps } => {
                if eps.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!("slope {eps} is not finite")))
                }
            }
        }
    }

    /// Fixed horizon the regime was scaled for, if any.
    pub fn horizon(&self) -> Option<usize> {
        match self {
            SurvivalRegime::KillingBoundary { horizon, .. } | SurvivalRegime::Profile { horizon, .. } => {
                Some(*horizon)
            }
            _ => None,
        }
    }

    /// Kill level at generation `k` for killing regimes.
    pub fn threshold(&self, k: usize) -> Option<f64> {
        match self {
            SurvivalRegime::KillingBoundary { f, horizon } => {
                let n = *horizon as f64;
                Some(n.cbrt() * f.eval(k as f64 / n))
            }
            SurvivalRegime::SlopedLine { eps } => Some(-eps * k as f64),
            _ => None,
        }
    }

    /// Survivor cap at generation `k` for selection regimes.
    pub fn cap(&self, k: usize) -> Option<u64> {
        match self {
            SurvivalRegime::TopCount { phi } => Some(phi.at(k)),
            SurvivalRegime::Profile { h, horizon } => {
                let n = *horizon as f64;
                Some(floor_exp(n.cbrt() * h.eval(k as f64 / n)))
            }
            _ => None,
        }
    }

    pub fn is_selection(&self) -> bool {
        matches!(self, SurvivalRegime::TopCount { .. } | SurvivalRegime::Profile { .. })
    }

    /// Generation-0 population before the regime is first applied.
    pub fn initial(&self, cap: usize) -> Result<Population> {
        let q = match self {
            SurvivalRegime::Profile { .. } => self.cap(0).expect("selection"),
            _ => 1,
        };
        if q as u128 > cap as u128 {
            return Err(Error::Overflow {
                generation: 0,
                size: usize::try_from(q).unwrap_or(usize::MAX),
                cap,
            });
        }
        Ok(Population::founders(q as usize).with_cap(cap))
    }
}

/// Indices of the `cap` largest entries of `values`, ties at the cut broken
/// uniformly at random. Uses linear-time selection, and draws from `rng` only
/// when a group of equal values straddles the cut.
pub fn select_top_indices<R: Rng + ?Sized>(values: &[f64], cap: usize, rng: &mut R) -> Vec<usize> {
    let len = values.len();
    if cap >= len {
        return (0..len).collect();
    }
    if cap == 0 {
        return Vec::new();
    }
    let mut scratch = values.to_vec();
    let (_, &mut cut, _) = scratch.select_nth_unstable_by(cap - 1, |a, b| b.total_cmp(a));
    let mut keep = Vec::with_capacity(cap);
    let mut tied = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match v.total_cmp(&cut) {
            std::cmp::Ordering::Greater => keep.push(i),
            std::cmp::Ordering::Equal => tied.push(i),
            std::cmp::Ordering::Less => {}
        }
    }
    let need = cap - keep.len();
    if need == tied.len() {
        keep.extend(tied);
    } else {
        keep.extend(sample_indices(rng, tied.len(), need).into_iter().map(|j| tied[j]));
    }
    keep
}

/// Survivors of unsorted `children` at generation `k`, sorted descending.
fn select<R: Rng + ?Sized>(mut children: Vec<f64>, regime: &SurvivalRegime, k: usize, rng: &mut R) -> Vec<f64> {
    if let Some(t) = regime.threshold(k) {
        children.retain(|&x| x >= t);
    } else {
        let cap = usize::try_from(regime.cap(k).expect("selection")).unwrap_or(usize::MAX);
        if cap < children.len() {
            let idx = select_top_indices(&children, cap, rng);
            children = idx.into_iter().map(|i| children[i]).collect();
        }
    }
    sort_desc(&mut children);
    children
}

/// Applies the regime's generation-`k` rule to `pop`.
pub fn apply_regime<R: Rng + ?Sized>(
    pop: &Population,
    regime: &SurvivalRegime,
    k: usize,
    rng: &mut R,
) -> Population {
    Population {
        positions: select(pop.positions.clone(), regime, k, rng),
        generation: pop.generation,
        cap: pop.cap,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenRecord {
    pub k: usize,
    pub count: u64,
    pub min_pos: Option<f64>,
    pub max_pos: Option<f64>,
}

impl GenRecord {
    fn of(k: usize, positions: &[f64]) -> Self {
        GenRecord {
            k,
            count: positions.len() as u64,
            min_pos: positions.last().copied(),
            max_pos: positions.first().copied(),
        }
    }
}

/// Per-generation summary of one run. Records stop at extinction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub records: Vec<GenRecord>,
    pub survived: bool,
    pub rng_seed: Option<u64>,
}

impl RunStats {
    pub fn last(&self) -> &GenRecord {
        self.records.last().expect("at least generation 0")
    }
}

fn check_horizon(regime: &SurvivalRegime, n: usize) -> Result<()> {
    regime.validate()?;
    match regime.horizon() {
        Some(h) if h != n => Err(Error::InvalidArgument(format!(
            "regime scaled for horizon {h} but run to {n}"
        ))),
        _ => Ok(()),
    }
}

/// Simulates `n` generations under `regime` with the default capacity.
pub fn run<R: Rng + ?Sized>(regime: &SurvivalRegime, law: &ReproductionLaw, n: usize, rng: &mut R) -> Result<RunStats> {
    run_capped(regime, law, n, rng, DEFAULT_CAPACITY)
}

pub fn run_capped<R: Rng + ?Sized>(
    regime: &SurvivalRegime,
    law: &ReproductionLaw,
    n: usize,
    rng: &mut R,
    cap: usize,
) -> Result<RunStats> {
    check_horizon(regime, n)?;
    let start = regime.initial(cap)?;
    let mut pos = select(start.positions, regime, 0, rng);
    let mut records = vec![GenRecord::of(0, &pos)];
    for k in 1..=n {
        if pos.is_empty() {
            break;
        }
        let children = offspring(&pos, law, rng, cap, k)?;
        pos = select(children, regime, k, rng);
        records.push(GenRecord::of(k, &pos));
    }
    Ok(RunStats {
        survived: !pos.is_empty() && records.len() == n + 1,
        records,
        rng_seed: None,
    })
}

/// Runs replica `i` of `stream`, tagging the stats with a token identifying
/// the generator.
pub fn run_replica(
    regime: &SurvivalRegime,
    law: &ReproductionLaw,
    n: usize,
    stream: &SeedStream,
    i: u64,
) -> Result<RunStats> {
    let mut rng = stream.replica(i);
    let mut stats = run(regime, law, n, &mut rng)?;
    stats.rng_seed = Some(mix64(stream.seed() ^ mix64(i)));
    Ok(stats)
}

/// `a ≼ b`: for every level, `b` has at least as many particles above it.
pub fn dominates(a: &Population, b: &Population) -> bool {
    dominated_sorted(&a.positions, &b.positions)
}

fn dominated_sorted(a: &[f64], b: &[f64]) -> bool {
    a.len() <= b.len() && a.iter().zip(b).all(|(x, y)| x <= y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledRun {
    pub a: RunStats,
    pub b: RunStats,
    /// Whether `a ≼ b` after each generation, starting with generation 0.
    pub order_held: Vec<bool>,
}

impl CoupledRun {
    pub fn always_ordered(&self) -> bool {
        self.order_held.iter().all(|&x| x)
    }
}

/// Checks that `a`'s rule is pointwise at least as strict as `b`'s on `0..=n`.
pub fn check_coupling(a: &SurvivalRegime, b: &SurvivalRegime, n: usize) -> Result<()> {
    let bad = |k: usize, why: String| Err(Error::IncompatibleRegimes(format!("generation {k}: {why}")));
    match (a.is_selection(), b.is_selection()) {
        (true, true) => {
            for k in 0..=n {
                let (ca, cb) = (a.cap(k).expect("selection"), b.cap(k).expect("selection"));
                if ca > cb {
                    return bad(k, format!("cap {ca} exceeds {cb}"));
                }
            }
            Ok(())
        }
        (false, false) => {
            for k in 0..=n {
                let (ta, tb) = (a.threshold(k).expect("killing"), b.threshold(k).expect("killing"));
                if ta < tb {
                    return bad(k, format!("kill level {ta} below {tb}"));
                }
            }
            Ok(())
        }
        _ => Err(Error::IncompatibleRegimes(
            "cannot couple a selection regime with a killing regime".into(),
        )),
    }
}

/// Runs both regimes from their own initial populations on shared randomness.
pub fn coupled_run<R: Rng + ?Sized>(
    a: &SurvivalRegime,
    b: &SurvivalRegime,
    law: &ReproductionLaw,
    n: usize,
    rng: &mut R,
) -> Result<CoupledRun> {
    let pa = a.initial(DEFAULT_CAPACITY)?;
    let pb = b.initial(DEFAULT_CAPACITY)?;
    coupled_run_from(a, b, pa, pb, law, n, rng)
}

/// Coupled run from given generation-0 populations. At every generation the
/// `j`-th ranked particle of either process reproduces with the `j`-th block
/// of displacements, blocks being drawn once per rank from `rng`.
pub fn coupled_run_from<R: Rng + ?Sized>(
    a: &SurvivalRegime,
    b: &SurvivalRegime,
    start_a: Population,
    start_b: Population,
    law: &ReproductionLaw,
    n: usize,
    rng: &mut R,
) -> Result<CoupledRun> {
    check_horizon(a, n)?;
    check_horizon(b, n)?;
    check_coupling(a, b, n)?;
    let cap = start_a.cap.or(start_b.cap).unwrap_or(DEFAULT_CAPACITY);
    let mut xa = select(start_a.positions, a, 0, rng);
    let mut xb = select(start_b.positions, b, 0, rng);
    let mut ra = vec![GenRecord::of(0, &xa)];
    let mut rb = vec![GenRecord::of(0, &xb)];
    let mut held = vec![dominated_sorted(&xa, &xb)];
    let mut flat: Vec<f64> = Vec::new();
    let mut offsets: Vec<usize> = Vec::new();
    for k in 1..=n {
        if xa.is_empty() && xb.is_empty() {
            break;
        }
        let ranks = xa.len().max(xb.len());
        flat.clear();
        offsets.clear();
        offsets.push(0);
        for _ in 0..ranks {
            law.sample_into(rng, &mut flat);
            offsets.push(flat.len());
            if flat.len() > cap {
                return Err(Error::Overflow {
                    generation: k,
                    size: flat.len(),
                    cap,
                });
            }
        }
        let grow = |parents: &[f64]| -> Vec<f64> {
            let mut out = Vec::new();
            for (j, &x) in parents.iter().enumerate() {
                out.extend(flat[offsets[j]..offsets[j + 1]].iter().map(|l| x + l));
            }
            out
        };
        let ca = grow(&xa);
        let cb = grow(&xb);
        if !xa.is_empty() {
            xa = select(ca, a, k, rng);
            ra.push(GenRecord::of(k, &xa));
        }
        if !xb.is_empty() {
            xb = select(cb, b, k, rng);
            rb.push(GenRecord::of(k, &xb));
        }
        held.push(dominated_sorted(&xa, &xb));
    }
    let stats = |records: Vec<GenRecord>, last: &[f64]| RunStats {
        survived: !last.is_empty() && records.len() == n + 1,
        records,
        rng_seed: None,
    };
    Ok(CoupledRun {
        a: stats(ra, &xa),
        b: stats(rb, &xb),
        order_held: held,
    })
}

/// Identifier of child `i` of node `id`.
#[inline]
fn child_id(id: u64, i: usize) -> u64 {
    mix64(id ^ mix64(0xA076_1D64_78BD_642F ^ i as u64))
}

/// Children displacements of node `id`, a function of `id` alone.
fn node_children(law: &ReproductionLaw, id: u64, buf: &mut Vec<f64>) {
    let mut rng = SmallRng::seed_from_u64(id);
    buf.clear();
    law.sample_into(&mut rng, buf);
}

/// Whether some lineage of the tree rooted at `root` keeps
/// `V(u_k) >= levels[k]` for every `k` up to `levels.len() - 1`.
/// Depth-first with the highest child first, stopping at the first survivor.
pub fn survives_tree(law: &ReproductionLaw, levels: &[f64], root: u64) -> bool {
    let n = levels.len() - 1;
    if 0.0 < levels[0] {
        return false;
    }
    let mut stack = vec![(0usize, 0.0f64, root)];
    let mut buf = Vec::new();
    let mut kids: Vec<(f64, u64)> = Vec::new();
    while let Some((k, x, id)) = stack.pop() {
        if k == n {
            return true;
        }
        node_children(law, id, &mut buf);
        kids.clear();
        for (i, l) in buf.iter().enumerate() {
            let y = x + l;
            if y >= levels[k + 1] {
                kids.push((y, child_id(id, i)));
            }
        }
        kids.sort_unstable_by(|p, q| p.0.total_cmp(&q.0));
        stack.extend(kids.iter().map(|&(y, c)| (k + 1, y, c)));
    }
    false
}

/// Survival frequency of the branching random walk killed below `levels`.
pub fn killed_survival(law: &ReproductionLaw, levels: &[f64], reps: u64, stream: &SeedStream) -> Result<Proportion> {
    if levels.is_empty() {
        return Err(Error::InvalidArgument("no kill levels".into()));
    }
    stream.fold_replicas(
        reps,
        |_, rng, acc: &mut Proportion| {
            acc.record(survives_tree(law, levels, rng.next_u64()));
            Ok(())
        },
        |acc, p| acc.merge(&p),
    )
}

/// Kill levels `n^(1/3) f(k/n)`, `k = 0..=n`.
pub fn boundary_levels(f: &Curve, n: usize) -> Vec<f64> {
    let scale = (n as f64).cbrt();
    (0..=n)
        .map(|k| scale * f.eval(if n == 0 { 0.0 } else { k as f64 / n as f64 }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinDisplacementOptions {
    /// Step by which the trial kill level is lowered.
    pub slack: f64,
    /// Node budget of the final search.
    pub budget: u64,
}

impl Default for MinDisplacementOptions {
    fn default() -> Self {
        MinDisplacementOptions {
            slack: 1.0,
            budget: 1 << 40,
        }
    }
}

/// `max_{|u|=n} min_{k<=n} V(u_k)` for the tree rooted at `root`.
///
/// The kill level is lowered from 0 by `opts.slack` until a depth-first
/// search finds a surviving lineage; that level is a lower bound, and a
/// branch-and-bound search above it (highest child first, pruning below the
/// best lineage found so far) returns the exact maximum.
pub fn consistent_min_displacement(
    law: &ReproductionLaw,
    n: usize,
    root: u64,
    opts: MinDisplacementOptions,
) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    if !(opts.slack > 0.0) {
        return Err(Error::InvalidArgument("slack must be positive".into()));
    }
    let mut levels = vec![f64::NEG_INFINITY; n + 1];
    levels[0] = 0.0;
    if !survives_tree(law, &levels, root) {
        return Err(Error::InvalidArgument(format!(
            "tree rooted at {root} dies before generation {n}"
        )));
    }
    let mut level = 0.0;
    loop {
        levels[1..].fill(level);
        if survives_tree(law, &levels, root) {
            break;
        }
        level -= opts.slack;
    }
    let mut best = level;
    let mut found = false;
    let mut visited = 0u64;
    // (depth, position, running min, node id)
    let mut stack = vec![(0usize, 0.0f64, 0.0f64, root)];
    let mut buf = Vec::new();
    let mut kids: Vec<(f64, f64, u64)> = Vec::new();
    while let Some((k, x, m, id)) = stack.pop() {
        if m < best || (found && m == best) {
            continue;
        }
        if k == n {
            best = m;
            found = true;
            continue;
        }
        visited += 1;
        if visited > opts.budget {
            return Err(Error::EnumerationTooLarge {
                size: visited as f64,
                budget: opts.budget as f64,
            });
        }
        node_children(law, id, &mut buf);
        kids.clear();
        for (i, l) in buf.iter().enumerate() {
            let y = x + l;
            let m2 = m.min(y);
            if m2 >= best {
                kids.push((y, m2, child_id(id, i)));
            }
        }
        kids.sort_unstable_by(|p, q| p.1.total_cmp(&q.1).then(p.0.total_cmp(&q.0)));
        stack.extend(kids.iter().map(|&(y, m2, c)| (k + 1, y, m2, c)));
    }
    debug_assert!(found);
    Ok(best)
}

/// One cell of the killed-survival scaling table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRow {
    pub eps: f64,
    pub n: usize,
    /// `eps n^(2/3)`.
    pub theta: f64,
    pub survival: Proportion,
    pub rho: f64,
    pub rho_ci: (f64, f64),
    /// `eps^(1/2) log rho`.
    pub eps_scaled: f64,
    /// `n^(-1/3) log rho` with its interval from the Wilson bounds.
    pub n_scaled: f64,
    pub n_scaled_ci: (f64, f64),
    /// `-pi sigma / (2 theta)^(1/2)`.
    pub lower_ref: f64,
    /// `Phi^(-1)(theta)`.
    pub phi_inv: f64,
    pub zero_hit: bool,
}

/// Survival of the walk killed below `-eps j` for every `(eps, n)` cell.
/// `sigma2` is the variance of the normalized law.
pub fn survival_scaling_experiment(
    law: &ReproductionLaw,
    cells: &[(f64, usize)],
    sigma2: f64,
    reps: u64,
    stream: &SeedStream,
) -> Result<Vec<SurvivalRow>> {
    let sigma = sigma2.sqrt();
    cells
        .iter()
        .enumerate()
        .map(|(c, &(eps, n))| {
            if !(eps > 0.0) {
                return Err(Error::InvalidArgument(format!("slope {eps} must be positive")));
            }
            let levels: Vec<f64> = (0..=n).map(|j| -eps * j as f64).collect();
            let p = killed_survival(law, &levels, reps, &stream.derive(c as u64))?;
            let rho = p.freq();
            let (lo, hi) = p.wilson(Z95);
            let scale = if n == 0 { f64::NAN } else { (n as f64).cbrt().recip() };
            let theta = eps * (n as f64).powf(2.0 / 3.0);
            Ok(SurvivalRow {
                eps,
                n,
                theta,
                survival: p,
                rho,
                rho_ci: (lo, hi),
                eps_scaled: eps.sqrt() * rho.ln(),
                n_scaled: scale * rho.ln(),
                n_scaled_ci: (scale * lo.ln(), scale * hi.ln()),
                lower_ref: -std::f64::consts::PI * sigma / (2.0 * theta).sqrt(),
                phi_inv: if theta > 0.0 { phi_inverse(theta, sigma2)? } else { f64::NAN },
                zero_hit: p.is_zero_hit(),
            })
        })
        .collect()
}

/// Cells `(theta n^(-2/3), n)`.
pub fn theta_cells(theta: f64, ns: &[usize]) -> Vec<(f64, usize)> {
    ns.iter().map(|&n| (theta * (n as f64).powf(-2.0 / 3.0), n)).collect()
}

/// Direct count of generation-`n` particles in `[x n^(1/3), y n^(1/3)]` whose
/// ancestors all stayed in the corridor, from one simulated tree.
pub fn corridor_count<R: Rng + ?Sized>(
    law: &ReproductionLaw,
    profile: &BarrierProfile,
    x: f64,
    y: f64,
    n: usize,
    rng: &mut R,
    cap: usize,
) -> Result<u64> {
    let c = Corridor::new(profile, n);
    if !c.contains(0, 0.0) {
        return Ok(0);
    }
    let mut pos = vec![0.0];
    for k in 1..=n {
        let mut children = offspring(&pos, law, rng, cap, k)?;
        children.retain(|&v| c.contains(k, v));
        pos = children;
        if pos.is_empty() {
            return Ok(0);
        }
    }
    let scale = (n as f64).cbrt();
    let (lo, hi) = (x * scale, y * scale);
    if x >= y {
        return Ok(0);
    }
    Ok(pos.iter().filter(|&&v| v >= lo && v <= hi).count() as u64)
}

/// Monte Carlo mean of `corridor_count`.
pub fn direct_ez(
    law: &ReproductionLaw,
    profile: &BarrierProfile,
    x: f64,
    y: f64,
    n: usize,
    reps: u64,
    stream: &SeedStream,
) -> Result<Estimate> {
    let acc = stream.fold_replicas(
        reps,
        |_, rng, acc: &mut MeanAccumulator| {
            acc.push(corridor_count(law, profile, x, y, n, rng, DEFAULT_CAPACITY)? as f64);
            Ok(())
        },
        |acc, p| acc.merge(&p),
    )?;
    Ok(acc.estimate())
}
