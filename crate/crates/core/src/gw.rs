//! Galton-Watson processes: generating-function iteration, exact simulation
//! of generation sizes, the left-tail bounds by minimal offspring number, and
//! the population floor of a branching random walk above a sloped line.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laws::ReproductionLaw;
use crate::seed::SeedStream;
use crate::stats::{Proportion, Z95};

/// Work limit (inner-loop terms) for the exact tail recursion.
const TAIL_WORK_BUDGET: f64 = 4e9;

/// Offspring distribution on the nonnegative integers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(u64, f64)>", into = "Vec<(u64, f64)>")]
pub struct OffspringLaw {
    /// Support points in increasing order with positive masses.
    atoms: Vec<(u64, f64)>,
}

impl TryFrom<Vec<(u64, f64)>> for OffspringLaw {
    type Error = Error;
    fn try_from(v: Vec<(u64, f64)>) -> Result<Self> {
        OffspringLaw::new(v)
    }
}

impl From<OffspringLaw> for Vec<(u64, f64)> {
    fn from(l: OffspringLaw) -> Self {
        l.atoms
    }
}

/// Which branch of the left-tail bound applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailCase {
    /// Minimal offspring 0: `q + C z^(alpha/(alpha+1))`.
    Extinction,
    /// Minimal offspring 1: `C z^alpha`.
    Single,
    /// Minimal offspring `b >= 2`: `exp(-C z^(-log b/(log m - log b)))`.
    Multiple,
}

impl TailCase {
    pub fn tag(&self) -> &'static str {
        match self {
            TailCase::Extinction => "b0",
            TailCase::Single => "b1",
            TailCase::Multiple => "b2plus",
        }
    }
}

impl OffspringLaw {
    /// `pmf` as `(count, probability)` pairs; zero masses are dropped and the
    /// total must be 1 within 1e-12.
    pub fn new(pmf: Vec<(u64, f64)>) -> Result<Self> {
        let mut atoms: Vec<(u64, f64)> = Vec::new();
        for (k, p) in pmf {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::InvalidLaw(format!("mass {p} at {k}")));
            }
            if p == 0.0 {
                continue;
            }
            match atoms.iter_mut().find(|a| a.0 == k) {
                Some(a) => a.1 += p,
                None => atoms.push((k, p)),
            }
        }
        atoms.sort_by_key(|a| a.0);
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidLaw(format!("offspring masses sum to {total}")));
        }
        Ok(OffspringLaw { atoms })
    }

    pub fn atoms(&self) -> &[(u64, f64)] {
        &self.atoms
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|&(k, p)| k as f64 * p).sum()
    }

    /// Smallest count with positive mass.
    pub fn min_offspring(&self) -> u64 {
        self.atoms[0].0
    }

    pub fn mass(&self, k: u64) -> f64 {
        self.atoms.iter().find(|a| a.0 == k).map_or(0.0, |a| a.1)
    }

    /// Generating function `f(s) = E[s^X]`.
    pub fn pgf(&self, s: f64) -> f64 {
        self.atoms.iter().map(|&(k, p)| p * s.powi(k as i32)).sum()
    }

    pub fn pgf_derivative(&self, s: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.0 > 0)
            .map(|&(k, p)| p * k as f64 * s.powi(k as i32 - 1))
            .sum()
    }

    /// Extinction probability: the limit of `f^k(0)`, increasing.
    pub fn extinction_prob(&self) -> f64 {
        if self.min_offspring() > 0 {
            return 0.0;
        }
        let mut s = 0.0;
        for _ in 0..10_000_000 {
            let next = self.pgf(s);
            if next - s <= 1e-16 {
                return next;
            }
            s = next;
        }
        s
    }

    /// `-log f'(q) / log m`, infinite when `f'(q) = 0`.
    pub fn alpha(&self) -> Result<f64> {
        self.require_supercritical()?;
        let d = self.pgf_derivative(self.extinction_prob());
        if d == 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(-d.ln() / self.mean().ln())
    }

    pub fn require_supercritical(&self) -> Result<()> {
        let m = self.mean();
        if m > 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidLaw(format!("mean {m} is not supercritical")))
        }
    }

    pub fn tail_case(&self) -> TailCase {
        match self.min_offspring() {
            0 => TailCase::Extinction,
            1 => TailCase::Single,
            _ => TailCase::Multiple,
        }
    }

    /// Total offspring of `parents` individuals, sampled exactly through
    /// sequential binomial splits of the parents among support points.
    pub fn sample_total<R: Rng + ?Sized>(&self, parents: u64, rng: &mut R) -> Option<u64> {
        let mut remaining = parents;
        let mut rest = 1.0;
        let mut total: u64 = 0;
        let last = self.atoms.len() - 1;
        for (i, &(k, p)) in self.atoms.iter().enumerate() {
            if remaining == 0 {
                break;
            }
            let c = if i == last {
                remaining
            } else {
                let q = (p / rest).clamp(0.0, 1.0);
                Binomial::new(remaining, q).expect("valid binomial").sample(rng)
            };
            remaining -= c;
            rest -= p;
            total = total.checked_add(k.checked_mul(c)?)?;
        }
        Some(total)
    }
}

/// `f^k(s)`.
pub fn iterate_f(law: &OffspringLaw, s: f64, k: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidArgument(format!("s = {s} is outside [0, 1]")));
    }
    let mut v = s;
    for _ in 0..k {
        v = law.pgf(v);
    }
    Ok(v)
}

/// One draw of `Z_n` with `Z_0 = 1`.
pub fn simulate_z<R: Rng + ?Sized>(law: &OffspringLaw, n: usize, rng: &mut R) -> Result<u64> {
    let mut z: u64 = 1;
    for k in 1..=n {
        if z == 0 {
            break;
        }
        z = law.sample_total(z, rng).ok_or(Error::CountOverflow(k))?;
    }
    Ok(z)
}

/// Upper bound on `P(Z_n <= z m^n)` with constant `c`.
pub fn left_tail_bound(law: &OffspringLaw, z: f64, c: f64) -> Result<(f64, TailCase)> {
    law.require_supercritical()?;
    if !(z > 0.0 && z < 1.0) {
        return Err(Error::InvalidArgument(format!("z = {z} is outside (0, 1)")));
    }
    let case = law.tail_case();
    let v = match case {
        TailCase::Extinction => {
            let a = law.alpha()?;
            law.extinction_prob() + c * z.powf(a / (a + 1.0))
        }
        TailCase::Single => c * z.powf(law.alpha()?),
        TailCase::Multiple => (-c * z.powf(-multiple_exponent(law)?)).exp(),
    };
    Ok((v, case))
}

/// `log b / (log m - log b)` for `b >= 2`.
pub fn multiple_exponent(law: &OffspringLaw) -> Result<f64> {
    let b = law.min_offspring() as f64;
    let m = law.mean();
    if b < 2.0 {
        return Err(Error::InvalidArgument("exponent defined for b >= 2".into()));
    }
    if m <= b {
        return Err(Error::DegenerateLaw(format!("mean {m} does not exceed b = {b}")));
    }
    Ok(b.ln() / (m.ln() - b.ln()))
}

/// Least-squares constant of the bound shape through `(z, p)` points:
/// `p - q ~ C z^(alpha/(alpha+1))`, `p ~ C z^alpha`, or `-log p ~ C z^(-beta)`.
pub fn fit_tail_constant(law: &OffspringLaw, points: &[(f64, f64)]) -> Result<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = match law.tail_case() {
        TailCase::Extinction => {
            let a = law.alpha()?;
            let q = law.extinction_prob();
            points.iter().map(|&(z, p)| (z.powf(a / (a + 1.0)), p - q)).unzip()
        }
        TailCase::Single => {
            let a = law.alpha()?;
            points.iter().map(|&(z, p)| (z.powf(a), p)).unzip()
        }
        TailCase::Multiple => {
            let beta = multiple_exponent(law)?;
            points.iter().map(|&(z, p)| (z.powf(-beta), -p.ln())).unzip()
        }
    };
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    if !(sxx > 0.0) || !sxy.is_finite() {
        return Err(Error::InvalidArgument("tail fit needs finite nonzero points".into()));
    }
    Ok(sxy / sxx)
}

/// Empirical `P(Z_n <= z m^n)`.
pub fn left_tail_empirical(law: &OffspringLaw, z: f64, n: usize, reps: u64, stream: &SeedStream) -> Result<Proportion> {
    let level = z * law.mean().powi(n as i32);
    stream.fold_replicas(
        reps,
        |_, rng, acc: &mut Proportion| {
            acc.record((simulate_z(law, n, rng)? as f64) <= level);
            Ok(())
        },
        |acc, p| acc.merge(&p),
    )
}

/// Accumulates `exp(log_v)` into `acc[j]` against a shared log reference.
struct ScaledVec {
    vals: Vec<f64>,
    log_ref: f64,
}

impl ScaledVec {
    fn new(len: usize) -> Self {
        ScaledVec {
            vals: vec![0.0; len],
            log_ref: f64::NEG_INFINITY,
        }
    }

    fn add(&mut self, j: usize, log_v: f64) {
        if log_v == f64::NEG_INFINITY {
            return;
        }
        if log_v > self.log_ref + 600.0 || self.log_ref == f64::NEG_INFINITY {
            let shift = (self.log_ref - log_v).exp();
            if shift.is_finite() {
                self.vals.iter_mut().for_each(|x| *x *= shift);
            }
            self.log_ref = log_v;
        }
        self.vals[j] += (log_v - self.log_ref).exp();
    }

    fn log_at(&self, j: usize) -> f64 {
        self.vals[j].ln() + self.log_ref
    }
}

/// Exact `P(Z_n <= level)` for laws with minimal offspring at least 1.
/// Sizes never decrease, so `Z_k` only matters up to `level / b^(n-k)`; the
/// truncated distribution is pushed forward in log-scaled arithmetic.
pub fn left_tail_exact(law: &OffspringLaw, level: u64, n: usize) -> Result<f64> {
    let b = law.min_offspring();
    if b == 0 {
        return Err(Error::InvalidArgument(
            "exact tail recursion needs minimal offspring >= 1".into(),
        ));
    }
    let lim = |k: usize| -> u64 {
        let mut v = level;
        for _ in k..n {
            v /= b;
        }
        v
    };
    if lim(0) < 1 {
        return Ok(0.0);
    }
    let mut work = 0.0;
    'est: for k in 0..n {
        let hi = lim(k + 1);
        for v in 1..=lim(k) {
            work += sum_dist_cost(&law.atoms, v, hi);
            if work > TAIL_WORK_BUDGET {
                break 'est;
            }
        }
    }
    if work > TAIL_WORK_BUDGET {
        return Err(Error::EnumerationTooLarge {
            size: work,
            budget: TAIL_WORK_BUDGET,
        });
    }
    // log P(Z_k = v), v = 0..=lim(k)
    let mut dist = vec![f64::NEG_INFINITY; 2];
    dist[1] = 0.0;
    let log_atoms: Vec<(u64, f64)> = law.atoms.iter().map(|&(k, p)| (k, p.ln())).collect();
    for k in 0..n {
        let hi = lim(k + 1) as usize;
        let mut next = ScaledVec::new(hi + 1);
        for (v, &lp) in dist.iter().enumerate() {
            if lp == f64::NEG_INFINITY || v == 0 {
                continue;
            }
            push_sum_dist(&log_atoms, v as u64, hi, lp, &mut next);
        }
        dist = (0..=hi).map(|j| next.log_at(j)).collect();
    }
    Ok(dist.iter().map(|&l| l.exp()).sum::<f64>().min(1.0))
}

/// Inner-loop count of `push_sum_dist` for one `v`.
fn sum_dist_cost(atoms: &[(u64, f64)], v: u64, hi: u64) -> f64 {
    let b = atoms[0].0;
    if b.saturating_mul(v) > hi {
        return 0.0;
    }
    match atoms.len() {
        1 => 1.0,
        2 => (v.min((hi - b * v) / (atoms[1].0 - b)) + 1) as f64,
        k => v as f64 * (hi + 1) as f64 * k as f64,
    }
}

/// Adds `exp(base) * P(X_1 + ... + X_v = j)` for `j <= hi` into `out`.
fn push_sum_dist(log_atoms: &[(u64, f64)], v: u64, hi: usize, base: f64, out: &mut ScaledVec) {
    let b = log_atoms[0].0;
    if b.saturating_mul(v) > hi as u64 {
        return;
    }
    if log_atoms.len() == 1 {
        out.add((b * v) as usize, base);
        return;
    }
    if log_atoms.len() == 2 {
        // v b + (a2 - b) B with B ~ Bin(v, p2), walked up from B = 0
        let (a2, lp2) = log_atoms[1];
        let lp1 = log_atoms[0].1;
        let step = a2 - b;
        let mut lt = v as f64 * lp1;
        let mut j = 0u64;
        loop {
            let pos = b * v + step * j;
            if pos > hi as u64 {
                break;
            }
            out.add(pos as usize, base + lt);
            if j == v {
                break;
            }
            lt += ((v - j) as f64).ln() - ((j + 1) as f64).ln() + lp2 - lp1;
            j += 1;
        }
        return;
    }
    // general support: v-fold convolution truncated at hi, rescaled per factor
    let mut conv = vec![0.0f64; hi + 1];
    conv[0] = 1.0;
    let mut log_scale = 0.0;
    let mut tmp = vec![0.0f64; hi + 1];
    for _ in 0..v {
        tmp.iter_mut().for_each(|x| *x = 0.0);
        for (i, &c) in conv.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for &(a, lp) in log_atoms {
                let t = i + a as usize;
                if t > hi {
                    break;
                }
                tmp[t] += c * lp.exp();
            }
        }
        let m = tmp.iter().cloned().fold(0.0, f64::max);
        if m == 0.0 {
            return;
        }
        tmp.iter_mut().for_each(|x| *x /= m);
        log_scale += m.ln();
        std::mem::swap(&mut conv, &mut tmp);
    }
    for (j, &c) in conv.iter().enumerate() {
        if c > 0.0 {
            out.add(j, base + log_scale + c.ln());
        }
    }
}

/// One row of the tail table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub z: f64,
    pub n: usize,
    pub empirical: f64,
    pub ci: (f64, f64),
    pub bound: f64,
    pub case: TailCase,
}

/// Empirical tail next to the bound with constant `c`, for every `(z, n)`.
pub fn tail_table(
    law: &OffspringLaw,
    zs: &[f64],
    ns: &[usize],
    c: f64,
    reps: u64,
    stream: &SeedStream,
) -> Result<Vec<TailRow>> {
    let mut rows = Vec::new();
    for (i, &n) in ns.iter().enumerate() {
        for (j, &z) in zs.iter().enumerate() {
            let p = left_tail_empirical(law, z, n, reps, &stream.derive((i * zs.len() + j) as u64))?;
            let (bound, case) = left_tail_bound(law, z, c)?;
            rows.push(TailRow {
                z,
                n,
                empirical: p.freq(),
                ci: p.wilson(Z95),
                bound,
                case,
            });
        }
    }
    Ok(rows)
}

pub fn tail_rows_csv(rows: &[TailRow]) -> String {
    let mut s = String::from("z,n,empirical,ci_lo,ci_hi,bound,case\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.z,
            r.n,
            r.empirical,
            r.ci.0,
            r.ci.1,
            r.bound,
            r.case.tag()
        ));
    }
    s
}

/// Number of generation-`n` individuals whose ancestors all satisfy
/// `V(u_j) >= -j a`. Lattice laws are simulated with lumped site counts.
pub fn floor_count<R: Rng + ?Sized>(
    law: &ReproductionLaw,
    a: f64,
    n: usize,
    rng: &mut R,
    cap: usize,
) -> Result<u64> {
    if let Some(lat) = law.lattice() {
        return lattice_floor_count(&lat.realizations, lat.unit, lat.offset, a, n, rng);
    }
    let mut pos = vec![0.0];
    let mut buf = Vec::new();
    for j in 1..=n {
        let mut next = Vec::new();
        for &x in &pos {
            buf.clear();
            law.sample_into(rng, &mut buf);
            next.extend(buf.iter().map(|l| x + l).filter(|&y| y >= -(j as f64) * a));
            if next.len() > cap {
                return Err(Error::Overflow {
                    generation: j,
                    size: next.len(),
                    cap,
                });
            }
        }
        pos = next;
        if pos.is_empty() {
            break;
        }
    }
    Ok(pos.len() as u64)
}

/// Particles lumped by lattice site; each site's parents split among
/// realizations by sequential binomial draws, so the count law is exact.
fn lattice_floor_count<R: Rng + ?Sized>(
    realizations: &[(Vec<i64>, f64)],
    unit: f64,
    offset: f64,
    a: f64,
    n: usize,
    rng: &mut R,
) -> Result<u64> {
    use std::collections::BTreeMap;
    let mut sites: BTreeMap<i64, u64> = BTreeMap::new();
    sites.insert(0, 1);
    for j in 1..=n {
        let floor = -(j as f64) * a;
        let mut next: BTreeMap<i64, u64> = BTreeMap::new();
        for (&s, &count) in &sites {
            let mut remaining = count;
            let mut rest = 1.0;
            for (i, (kids, p)) in realizations.iter().enumerate() {
                if remaining == 0 {
                    break;
                }
                let c = if i + 1 == realizations.len() {
                    remaining
                } else {
                    let q = (p / rest).clamp(0.0, 1.0);
                    Binomial::new(remaining, q).expect("valid binomial").sample(rng)
                };
                remaining -= c;
                rest -= p;
                if c == 0 {
                    continue;
                }
                for &k in kids {
                    let site = s + k;
                    if unit * site as f64 + j as f64 * offset >= floor {
                        let e = next.entry(site).or_insert(0);
                        *e = e.checked_add(c).ok_or(Error::CountOverflow(j))?;
                    }
                }
            }
        }
        sites = next;
        if sites.is_empty() {
            return Ok(0);
        }
    }
    sites
        .values()
        .try_fold(0u64, |acc, &c| acc.checked_add(c))
        .ok_or(Error::CountOverflow(n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorRow {
    pub rho: f64,
    /// Fraction of replicas with count `>= rho^n`.
    pub hits: Proportion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthFloorReport {
    /// Floor slope.
    pub floor: f64,
    pub n: usize,
    pub truncated_mean: f64,
    pub rows: Vec<FloorRow>,
    /// Largest tested `rho` whose frequency reaches `threshold`.
    pub rho_hat: Option<f64>,
    pub threshold: f64,
}

/// Frequency of `#{|u| = n : V(u_j) >= -j a, j <= n} >= rho^n` for each `rho`.
pub fn growth_floor_experiment(
    law: &ReproductionLaw,
    a: f64,
    n: usize,
    rhos: &[f64],
    threshold: f64,
    reps: u64,
    stream: &SeedStream,
) -> Result<GrowthFloorReport> {
    let tm = law.truncated_mean(a);
    if !(tm > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "a = {a} too small: truncated mean {tm} is not above 1"
        )));
    }
    let counts = stream.map_replicas(reps, |_, rng| floor_count(law, a, n, rng, crate::engine::DEFAULT_CAPACITY))?;
    let rows: Vec<FloorRow> = rhos
        .iter()
        .map(|&rho| {
            let need = rho.powi(n as i32);
            let mut p = Proportion::default();
            for &c in &counts {
                p.record(c as f64 >= need);
            }
            FloorRow { rho, hits: p }
        })
        .collect();
    let rho_hat = rows
        .iter()
        .filter(|r| r.hits.freq() >= threshold)
        .map(|r| r.rho)
        .fold(None, |best: Option<f64>, r| Some(best.map_or(r, |b| b.max(r))));
    Ok(GrowthFloorReport {
        floor: a,
        n,
        truncated_mean: tm,
        rows,
        rho_hat,
        threshold,
    })
}
