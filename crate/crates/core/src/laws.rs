//! Reproduction laws for the branching random walk and their boundary-case
//! normalization.
//!
//! A law is a base point process (an explicit finite table of realizations, or
//! a Poisson-count Gaussian cloud) composed with an affine map
//! `l -> scale * l + shift` applied to every child displacement. Normalizing a
//! law only changes the affine map, so enumeration, sampling and lattice
//! structure carry over unchanged.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SeedStream;
use crate::stats::{log_sum_exp, MeanAccumulator};

/// Largest table produced by expanding an `iid` spec.
const MAX_TABLE: usize = 1 << 20;

/// One atom of a finite-support point process law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Realization {
    pub children: Vec<f64>,
    pub prob: f64,
}

/// Config-level description of a law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    /// Two children, each displaced by +1 or -1 independently with probability 1/2.
    BinaryPm1,
    /// Explicit list of realizations.
    Table { realizations: Vec<Realization> },
    /// A fixed number of children with i.i.d. displacements from `atoms` (`[value, prob]`).
    Iid { children: usize, atoms: Vec<[f64; 2]> },
    /// `1 + Poisson(mean - 1)` children with i.i.d. `N(0, sd^2)` displacements.
    PoissonGaussian { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, PartialEq)]
enum Base {
    Table {
        realizations: Vec<Realization>,
        cumulative: Vec<f64>,
    },
    PoissonGaussian {
        mean: f64,
        sd: f64,
    },
}

/// Law of the point process of children displacements. Immutable and `Sync`;
/// sampling always goes through an explicit generator.
#[derive(Debug, Clone, PartialEq)]
pub struct ReproductionLaw {
    spec: LawSpec,
    base: Base,
    scale: f64,
    shift: f64,
}

/// Log-moment `kappa` together with its first two derivatives at one `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tilt {
    pub kappa: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Finite-support law whose displacements sit on `unit * k + offset`, `k` integer.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeForm {
    pub unit: f64,
    pub offset: f64,
    pub realizations: Vec<(Vec<i64>, f64)>,
}

impl ReproductionLaw {
    pub fn from_spec(spec: &LawSpec) -> Result<Self> {
        let base = match spec {
            LawSpec::BinaryPm1 => table_base(expand_iid(2, &[[1.0, 0.5], [-1.0, 0.5]])?)?,
            LawSpec::Table { realizations } => table_base(realizations.clone())?,
            LawSpec::Iid { children, atoms } => table_base(expand_iid(*children, atoms)?)?,
            LawSpec::PoissonGaussian { mean, sd } => {
                if !(mean.is_finite() && *mean >= 1.0) {
                    return Err(Error::InvalidLaw(format!(
                        "poisson_gaussian mean must be >= 1 (got {mean})"
                    )));
                }
                if !(sd.is_finite() && *sd > 0.0) {
                    return Err(Error::InvalidLaw(format!(
                        "poisson_gaussian sd must be positive (got {sd})"
                    )));
                }
                Base::PoissonGaussian {
                    mean: *mean,
                    sd: *sd,
                }
            }
        };
        Ok(ReproductionLaw {
            spec: spec.clone(),
            base,
            scale: 1.0,
            shift: 0.0,
        })
    }

    pub fn table(realizations: Vec<Realization>) -> Result<Self> {
        Self::from_spec(&LawSpec::Table { realizations })
    }

    pub fn binary_pm1() -> Self {
        Self::from_spec(&LawSpec::BinaryPm1).expect("static law")
    }

    /// Two children with i.i.d. displacements uniform on `{-1, 0, 1}`.
    pub fn binary_uniform3() -> Self {
        Self::from_spec(&LawSpec::Iid {
            children: 2,
            atoms: vec![[-1.0, 1.0 / 3.0], [0.0, 1.0 / 3.0], [1.0, 1.0 / 3.0]],
        })
        .expect("static law")
    }

    pub fn spec(&self) -> &LawSpec {
        &self.spec
    }

    /// `(scale, shift)` of the affine map applied to base displacements.
    pub fn affine(&self) -> (f64, f64) {
        (self.scale, self.shift)
    }

    /// The same law with displacements mapped by `l -> scale * l + shift`.
    pub fn with_affine(&self, scale: f64, shift: f64) -> Self {
        ReproductionLaw {
            spec: self.spec.clone(),
            base: self.base.clone(),
            scale: scale * self.scale,
            shift: scale * self.shift + shift,
        }
    }

    pub fn describe(&self) -> String {
        let name = match &self.spec {
            LawSpec::BinaryPm1 => "binary_pm1".to_string(),
            LawSpec::Table { realizations } => format!("table({} atoms)", realizations.len()),
            LawSpec::Iid { children, atoms } => format!("iid({children} x {} atoms)", atoms.len()),
            LawSpec::PoissonGaussian { mean, sd } => format!("poisson_gaussian({mean}, {sd})"),
        };
        if self.scale == 1.0 && self.shift == 0.0 {
            name
        } else {
            format!("{name} * {:.12} + {:.12}", self.scale, self.shift)
        }
    }

    pub fn is_enumerable(&self) -> bool {
        matches!(self.base, Base::Table { .. })
    }

    /// All realizations with their probabilities, displacements already mapped.
    pub fn enumerate(&self) -> Option<Vec<Realization>> {
        match &self.base {
            Base::Table { realizations, .. } => Some(
                realizations
                    .iter()
                    .map(|r| Realization {
                        children: r.children.iter().map(|&l| self.map(l)).collect(),
                        prob: r.prob,
                    })
                    .collect(),
            ),
            Base::PoissonGaussian { .. } => None,
        }
    }

    /// Lattice structure of an enumerable law with integer base atoms.
    pub fn lattice(&self) -> Option<LatticeForm> {
        let Base::Table { realizations, .. } = &self.base else {
            return None;
        };
        let mut out = Vec::with_capacity(realizations.len());
        for r in realizations {
            let mut ks = Vec::with_capacity(r.children.len());
            for &c in &r.children {
                if (c - c.round()).abs() > 1e-12 || c.abs() > 1e15 {
                    return None;
                }
                ks.push(c.round() as i64);
            }
            out.push((ks, r.prob));
        }
        Some(LatticeForm {
            unit: self.scale,
            offset: self.shift,
            realizations: out,
        })
    }

    #[inline]
    fn map(&self, l: f64) -> f64 {
        self.scale * l + self.shift
    }

    /// Appends one realization of the point process to `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        match &self.base {
            Base::Table {
                realizations,
                cumulative,
            } => {
                let i = pick(cumulative, rng.random::<f64>());
                out.extend(realizations[i].children.iter().map(|&l| self.map(l)));
            }
            Base::PoissonGaussian { mean, sd } => {
                let extra = poisson(*mean - 1.0, rng);
                let normal = Normal::new(0.0, *sd).expect("validated sd");
                for _ in 0..=extra {
                    out.push(self.map(normal.sample(rng)));
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut v = Vec::new();
        self.sample_into(rng, &mut v);
        v
    }

    /// `E[#L]`.
    pub fn mean_offspring(&self) -> f64 {
        match &self.base {
            Base::Table { realizations, .. } => realizations
                .iter()
                .map(|r| r.prob * r.children.len() as f64)
                .sum(),
            Base::PoissonGaussian { mean, .. } => *mean,
        }
    }

    /// Upper bound on a single displacement, when the support is bounded.
    pub fn max_displacement(&self) -> Option<f64> {
        self.enumerate().map(|rs| {
            rs.iter()
                .flat_map(|r| r.children.iter().copied())
                .fold(f64::NEG_INFINITY, f64::max)
        })
    }

    /// Largest `|l|` over the support, when bounded.
    pub fn max_abs_displacement(&self) -> Option<f64> {
        self.enumerate().map(|rs| {
            rs.iter()
                .flat_map(|r| r.children.iter().map(|l| l.abs()))
                .fold(0.0, f64::max)
        })
    }

    /// `E[sum_l 1{l >= -a}]`.
    pub fn truncated_mean(&self, a: f64) -> f64 {
        match &self.base {
            Base::Table { realizations, .. } => realizations
                .iter()
                .map(|r| {
                    r.prob
                        * r.children
                            .iter()
                            .filter(|&&l| self.map(l) >= -a)
                            .count() as f64
                })
                .sum(),
            Base::PoissonGaussian { mean, sd } => {
                // P(scale * X + shift >= -a), X ~ N(0, sd^2)
                let s = self.scale * sd;
                let p = 0.5 * libm::erfc(-((a + self.shift) / s) / std::f64::consts::SQRT_2);
                mean * p
            }
        }
    }

    /// Exact `kappa`, `kappa'`, `kappa''` at `theta` when the law has an
    /// enumeration or a closed form.
    pub fn tilt(&self, theta: f64) -> Option<Tilt> {
        match &self.base {
            Base::Table { realizations, .. } => {
                let mut logw = Vec::new();
                let mut ls = Vec::new();
                for r in realizations {
                    for &c in &r.children {
                        let l = self.map(c);
                        logw.push(r.prob.ln() + theta * l);
                        ls.push(l);
                    }
                }
                let kappa = log_sum_exp(&logw);
                let (mut m1, mut m2) = (0.0, 0.0);
                for (lw, l) in logw.iter().zip(&ls) {
                    let w = (lw - kappa).exp();
                    m1 += w * l;
                }
                for (lw, l) in logw.iter().zip(&ls) {
                    let w = (lw - kappa).exp();
                    m2 += w * (l - m1) * (l - m1);
                }
                Some(Tilt {
                    kappa,
                    d1: m1,
                    d2: m2,
                })
            }
            Base::PoissonGaussian { mean, sd } => {
                let v = self.scale * self.scale * sd * sd;
                Some(Tilt {
                    kappa: theta * self.shift + mean.ln() + 0.5 * theta * theta * v,
                    d1: self.shift + theta * v,
                    d2: v,
                })
            }
        }
    }

    /// `E[#{children at the largest displacement}]` for bounded laws.
    pub fn top_mass(&self) -> Option<f64> {
        let top = self.max_displacement()?;
        let rs = self.enumerate()?;
        Some(
            rs.iter()
                .map(|r| r.prob * r.children.iter().filter(|&&l| l == top).count() as f64)
                .sum(),
        )
    }

    /// True when every child of every realization sits at the same displacement.
    pub fn is_degenerate(&self) -> bool {
        match &self.base {
            Base::Table { realizations, .. } => {
                let first = realizations[0].children[0];
                realizations
                    .iter()
                    .all(|r| r.children.iter().all(|&c| c == first))
            }
            Base::PoissonGaussian { .. } => false,
        }
    }
}

fn pick(cumulative: &[f64], u: f64) -> usize {
    // first index whose cumulative weight exceeds u
    cumulative
        .partition_point(|&c| c <= u)
        .min(cumulative.len() - 1)
}

fn poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive rate").sample(rng) as u64
}

fn table_base(realizations: Vec<Realization>) -> Result<Base> {
    if realizations.is_empty() {
        return Err(Error::InvalidLaw("empty realization table".into()));
    }
    let mut kept = Vec::with_capacity(realizations.len());
    let mut total = 0.0;
    for r in realizations {
        if !(r.prob.is_finite() && r.prob >= 0.0) {
            return Err(Error::InvalidLaw(format!("bad probability {}", r.prob)));
        }
        if r.children.is_empty() {
            if r.prob > 0.0 {
                return Err(Error::InvalidLaw(
                    "realization with no children has positive probability (P(#L = 0) must be 0)"
                        .into(),
                ));
            }
            continue;
        }
        if r.children.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidLaw("non-finite displacement".into()));
        }
        total += r.prob;
        if r.prob > 0.0 {
            kept.push(r);
        }
    }
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidLaw(format!(
            "probabilities sum to {total}, expected 1"
        )));
    }
    let mut acc = 0.0;
    let cumulative = kept
        .iter()
        .map(|r| {
            acc += r.prob;
            acc
        })
        .collect();
    Ok(Base::Table {
        realizations: kept,
        cumulative,
    })
}

fn expand_iid(children: usize, atoms: &[[f64; 2]]) -> Result<Vec<Realization>> {
    if children == 0 {
        return Err(Error::InvalidLaw("iid law needs at least one child".into()));
    }
    if atoms.is_empty() {
        return Err(Error::InvalidLaw("iid law needs atoms".into()));
    }
    let size = (atoms.len() as f64).powi(children as i32);
    if size > MAX_TABLE as f64 {
        return Err(Error::EnumerationTooLarge {
            size,
            budget: MAX_TABLE as f64,
        });
    }
    let mut out = vec![Realization {
        children: Vec::new(),
        prob: 1.0,
    }];
    for _ in 0..children {
        let mut next = Vec::with_capacity(out.len() * atoms.len());
        for r in &out {
            for [v, p] in atoms {
                let mut c = r.children.clone();
                c.push(*v);
                next.push(Realization {
                    children: c,
                    prob: r.prob * p,
                });
            }
        }
        out = next;
    }
    Ok(out)
}

/// Where moments come from: exact enumeration/closed form, or sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentSource {
    Exact,
    MonteCarlo { samples: u64, seed: u64 },
}

/// A moment value; `stderr` is `None` for exact evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentValue {
    pub value: f64,
    pub stderr: Option<f64>,
}

/// `log E[sum_{l in L} exp(theta * l)]`.
pub fn kappa(law: &ReproductionLaw, theta: f64, source: MomentSource) -> Result<MomentValue> {
    match source {
        MomentSource::Exact => {
            let t = law.tilt(theta).ok_or_else(|| {
                Error::NotEnumerable(format!("{}: supply a Monte Carlo budget", law.describe()))
            })?;
            if !t.kappa.is_finite() {
                return Err(Error::MomentDiverges(format!("kappa({theta}) = {}", t.kappa)));
            }
            Ok(MomentValue {
                value: t.kappa,
                stderr: None,
            })
        }
        MomentSource::MonteCarlo { samples, seed } => {
            let stream = SeedStream::named(seed, "kappa");
            let acc = stream.fold_replicas(
                samples,
                |_, rng, acc: &mut MeanAccumulator| {
                    let l = law.sample(rng);
                    acc.push(l.iter().map(|x| (theta * x).exp()).sum());
                    Ok(())
                },
                |a, b| a.merge(&b),
            )?;
            let e = acc.estimate();
            if !(e.mean.is_finite() && e.stderr.is_finite()) || e.mean <= 0.0 {
                return Err(Error::MomentDiverges(format!(
                    "empirical E[sum exp({theta} l)] = {} (stderr {})",
                    e.mean, e.stderr
                )));
            }
            Ok(MomentValue {
                value: e.mean.ln(),
                stderr: Some(e.stderr / e.mean),
            })
        }
    }
}

/// Affine normalization putting a law into the boundary case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryForm {
    pub theta_star: f64,
    pub kappa_star: f64,
    pub sigma2: f64,
}

impl BoundaryForm {
    /// The law with every child mapped by `l -> theta* l - kappa(theta*)`.
    pub fn apply(&self, law: &ReproductionLaw) -> ReproductionLaw {
        law.with_affine(self.theta_star, -self.kappa_star)
    }
}

const THETA_MIN: f64 = 1e-3;
const THETA_MAX: f64 = 50.0;
const SCAN_POINTS: usize = 400;

/// Finds `theta*` with `theta kappa'(theta) = kappa(theta)` by a log-grid scan
/// over `[1e-3, 50]` followed by bisection.
pub fn normalize_to_boundary(law: &ReproductionLaw) -> Result<BoundaryForm> {
    if law.is_degenerate() {
        return Err(Error::DegenerateLaw(format!(
            "{}: all mass at one displacement, sigma^2 would vanish",
            law.describe()
        )));
    }
    if let Some(top) = law.top_mass() {
        if top >= 1.0 {
            return Err(Error::NoBoundaryNormalization(format!(
                "{}: E[#children at the top of the support] = {top} >= 1, so \
                 theta kappa' - kappa < 0 for every theta and only tends to 0 as theta -> inf",
                law.describe()
            )));
        }
    }
    let h = |theta: f64| -> Result<f64> {
        let t = law.tilt(theta).ok_or_else(|| {
            Error::NotEnumerable(format!(
                "{}: normalization needs exact moments",
                law.describe()
            ))
        })?;
        let v = theta * t.d1 - t.kappa;
        if !v.is_finite() {
            return Err(Error::MomentDiverges(format!("kappa near theta = {theta}")));
        }
        // values within rounding of zero carry no sign information
        let noise = 64.0 * f64::EPSILON * ((theta * t.d1).abs() + t.kappa.abs());
        Ok(if v.abs() <= noise { 0.0 } else { v })
    };
    let ratio = (THETA_MAX / THETA_MIN).ln() / (SCAN_POINTS - 1) as f64;
    let mut prev_theta = THETA_MIN;
    let first = h(prev_theta)?;
    if first >= 0.0 {
        return Err(Error::NoBoundaryNormalization(format!(
            "theta kappa' - kappa = {first:e} >= 0 at theta = {THETA_MIN} (E[#L] <= 1?)"
        )));
    }
    let mut bracket = None;
    for i in 1..SCAN_POINTS {
        let theta = THETA_MIN * (ratio * i as f64).exp();
        if h(theta)? > 0.0 {
            bracket = Some((prev_theta, theta));
            break;
        }
        prev_theta = theta;
    }
    let (mut lo, mut hi) = bracket.ok_or_else(|| {
        Error::NoBoundaryNormalization(format!(
            "no sign change of theta kappa' - kappa on [{THETA_MIN}, {THETA_MAX}]"
        ))
    })?;
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta_star = if h(lo)?.abs() <= h(hi)?.abs() { lo } else { hi };
    let residual = h(theta_star)?;
    if residual.abs() >= 1e-10 {
        return Err(Error::NoBoundaryNormalization(format!(
            "bisection residual {residual:e} above 1e-10"
        )));
    }
    let t = law.tilt(theta_star).expect("checked above");
    let sigma2 = theta_star * theta_star * t.d2;
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::DegenerateLaw(format!("sigma^2 = {sigma2}")));
    }
    Ok(BoundaryForm {
        theta_star,
        kappa_star: t.kappa,
        sigma2,
    })
}

/// Normalizes and returns the boundary-case law together with its form.
pub fn boundary_law(law: &ReproductionLaw) -> Result<(ReproductionLaw, BoundaryForm)> {
    let bf = normalize_to_boundary(law)?;
    Ok((bf.apply(law), bf))
}

/// Deviations from the boundary case: `r1 = E[sum e^l] - 1`, `r2 = E[sum l e^l]`,
/// and `sigma2 = E[sum l^2 e^l]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub r1: f64,
    pub r2: f64,
    pub sigma2: f64,
    /// Standard errors of the three entries when estimated by sampling.
    pub stderr: Option<[f64; 3]>,
}

pub fn boundary_residuals(law: &ReproductionLaw, source: MomentSource) -> Result<Residuals> {
    match source {
        MomentSource::Exact => {
            if let Some(rs) = law.enumerate() {
                let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
                for r in &rs {
                    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
                    for &l in &r.children {
                        let e = l.exp();
                        a += e;
                        b += l * e;
                        c += l * l * e;
                    }
                    m0 += r.prob * a;
                    m1 += r.prob * b;
                    m2 += r.prob * c;
                }
                check_finite(&[m0, m1, m2])?;
                return Ok(Residuals {
                    r1: m0 - 1.0,
                    r2: m1,
                    sigma2: m2,
                    stderr: None,
                });
            }
            let t = law.tilt(1.0).ok_or_else(|| {
                Error::NotEnumerable(format!("{}: supply a Monte Carlo budget", law.describe()))
            })?;
            let m0 = t.kappa.exp();
            check_finite(&[m0, t.d1, t.d2])?;
            Ok(Residuals {
                r1: m0 - 1.0,
                r2: t.d1 * m0,
                sigma2: (t.d2 + t.d1 * t.d1) * m0,
                stderr: None,
            })
        }
        MomentSource::MonteCarlo { samples, seed } => {
            #[derive(Default)]
            struct Acc([MeanAccumulator; 3]);
            let stream = SeedStream::named(seed, "boundary_residuals");
            let acc = stream.fold_replicas(
                samples,
                |_, rng, acc: &mut Acc| {
                    let l = law.sample(rng);
                    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
                    for &x in &l {
                        let e = x.exp();
                        a += e;
                        b += x * e;
                        c += x * x * e;
                    }
                    acc.0[0].push(a);
                    acc.0[1].push(b);
                    acc.0[2].push(c);
                    Ok(())
                },
                |a, b| {
                    for i in 0..3 {
                        a.0[i].merge(&b.0[i]);
                    }
                },
            )?;
            let e: Vec<_> = acc.0.iter().map(|a| a.estimate()).collect();
            check_finite(&[e[0].mean, e[1].mean, e[2].mean])?;
            Ok(Residuals {
                r1: e[0].mean - 1.0,
                r2: e[1].mean,
                sigma2: e[2].mean,
                stderr: Some([e[0].stderr, e[1].stderr, e[2].stderr]),
            })
        }
    }
}

fn check_finite(xs: &[f64]) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::MomentDiverges(format!("non-finite moments {xs:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    fn two_at_minus_log2() -> ReproductionLaw {
        ReproductionLaw::table(vec![Realization {
            children: vec![-LN_2, -LN_2],
            prob: 1.0,
        }])
        .unwrap()
    }

    // mpmath, 30 digits: root of theta kappa' = kappa for two children uniform on {-1, 0, 1}
    const UNIF3_THETA: f64 = 2.116_055_686_132_231;
    const UNIF3_KAPPA: f64 = 1.837_247_636_860_650_4;
    const UNIF3_SIGMA2: f64 = 0.626_815_811_300_485_6;

    #[test]
    fn kappa_binary_closed_form() {
        let law = ReproductionLaw::binary_pm1();
        let k0 = kappa(&law, 0.0, MomentSource::Exact).unwrap().value;
        assert!((k0 - LN_2).abs() < 1e-15);
        let k2 = kappa(&law, 2.0, MomentSource::Exact).unwrap().value;
        assert!((k2 - (2.0 * 2f64.cosh()).ln()).abs() < 1e-14);
        assert!((k2 - 2.018_149_927_917_81).abs() < 1e-12);
    }

    #[test]
    fn binary_pm1_has_no_finite_root() {
        let err = normalize_to_boundary(&ReproductionLaw::binary_pm1()).unwrap_err();
        assert!(matches!(err, Error::NoBoundaryNormalization(_)), "{err}");
        // the gap theta tanh theta - log(2 cosh theta) is negative and closes only at infinity
        for t in [0.5f64, 1.1996, 5.0, 10.0] {
            assert!(t * t.tanh() - (2.0 * t.cosh()).ln() < 0.0);
        }
        assert_eq!(ReproductionLaw::binary_pm1().top_mass(), Some(1.0));
    }

    #[test]
    fn kappa_of_normalized_law_at_one_is_zero() {
        let (norm, _) = boundary_law(&ReproductionLaw::binary_uniform3()).unwrap();
        let k = kappa(&norm, 1.0, MomentSource::Exact).unwrap().value;
        assert!(k.abs() < 1e-12);
    }

    #[test]
    fn kappa_mc_reports_stderr() {
        let law = ReproductionLaw::binary_pm1();
        let m = kappa(
            &law,
            0.5,
            MomentSource::MonteCarlo {
                samples: 20_000,
                seed: 1,
            },
        )
        .unwrap();
        let exact = (2.0 * 0.5f64.cosh()).ln();
        let se = m.stderr.unwrap();
        assert!(se > 0.0);
        assert!((m.value - exact).abs() < 5.0 * se);
    }

    #[test]
    fn uniform3_theta_star() {
        let law = ReproductionLaw::binary_uniform3();
        let bf = normalize_to_boundary(&law).unwrap();
        let t = bf.theta_star;
        assert!((t - UNIF3_THETA).abs() < 1e-9, "theta* = {t}");
        assert!((bf.kappa_star - UNIF3_KAPPA).abs() < 1e-9);
        // analytic kappa'' = (2 cosh t + 4) / (1 + 2 cosh t)^2
        let c = t.cosh();
        let analytic = t * t * (2.0 * c + 4.0) / (1.0 + 2.0 * c).powi(2);
        assert!((bf.sigma2 - analytic).abs() < 1e-8);
        assert!((bf.sigma2 - UNIF3_SIGMA2).abs() < 1e-8);
        let res = boundary_residuals(&bf.apply(&law), MomentSource::Exact).unwrap();
        assert!((res.sigma2 - analytic).abs() < 1e-8);
        assert!(res.r1.abs() < 1e-9 && res.r2.abs() < 1e-9);
    }

    #[test]
    fn normalization_is_idempotent() {
        let (norm, _) = boundary_law(&ReproductionLaw::binary_uniform3()).unwrap();
        let again = normalize_to_boundary(&norm).unwrap();
        assert!((again.theta_star - 1.0).abs() < 1e-8);
        assert!(again.kappa_star.abs() < 1e-8);
    }

    #[test]
    fn residuals_two_atom_law() {
        let law = two_at_minus_log2();
        let r = boundary_residuals(&law, MomentSource::Exact).unwrap();
        assert!(r.r1.abs() < 1e-15);
        assert!((r.r2 + LN_2).abs() < 1e-15);
        assert!((r.sigma2 - LN_2 * LN_2).abs() < 1e-15);
        let again = boundary_residuals(&law, MomentSource::Exact).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn degenerate_law_rejected_by_normalization() {
        assert!(matches!(
            normalize_to_boundary(&two_at_minus_log2()),
            Err(Error::DegenerateLaw(_))
        ));
    }

    #[test]
    fn subcritical_law_has_no_normalization() {
        let law = ReproductionLaw::table(vec![
            Realization {
                children: vec![1.0],
                prob: 0.5,
            },
            Realization {
                children: vec![-1.0],
                prob: 0.5,
            },
        ])
        .unwrap();
        assert!(matches!(
            normalize_to_boundary(&law),
            Err(Error::NoBoundaryNormalization(_))
        ));
    }

    #[test]
    fn table_validation() {
        assert!(ReproductionLaw::table(vec![Realization {
            children: vec![],
            prob: 1.0
        }])
        .is_err());
        assert!(ReproductionLaw::table(vec![Realization {
            children: vec![0.0],
            prob: 0.9
        }])
        .is_err());
    }

    #[test]
    fn poisson_gaussian_closed_form() {
        let law = ReproductionLaw::from_spec(&LawSpec::PoissonGaussian {
            mean: 0.5f64.exp(),
            sd: 0.7,
        })
        .unwrap();
        let (norm, bf) = boundary_law(&law).unwrap();
        // sigma^2 = 2 log m for the Gaussian family
        assert!((bf.sigma2 - 1.0).abs() < 1e-9);
        let r = boundary_residuals(&norm, MomentSource::Exact).unwrap();
        assert!(r.r1.abs() < 1e-9 && r.r2.abs() < 1e-9);
        // sampler-only check: exact residuals inside the 99% CI of the MC estimate
        let mc = boundary_residuals(
            &norm,
            MomentSource::MonteCarlo {
                samples: 200_000,
                seed: 3,
            },
        )
        .unwrap();
        let se = mc.stderr.unwrap();
        assert!(mc.r1.abs() < crate::stats::Z99 * se[0]);
        assert!(mc.r2.abs() < crate::stats::Z99 * se[1]);
        assert!((mc.sigma2 - r.sigma2).abs() < crate::stats::Z99 * se[2]);
    }

    #[test]
    fn sampler_matches_enumeration_chi_square() {
        // 4 realizations of binary_pm1, counted by identity of the child pair
        let law = ReproductionLaw::binary_pm1();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0u64; 4];
        let n = 40_000;
        for _ in 0..n {
            let l = law.sample(&mut rng);
            let idx = (l[0] > 0.0) as usize * 2 + (l[1] > 0.0) as usize;
            counts[idx] += 1;
        }
        let e = n as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 99.9% quantile of chi-square with 3 dof
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    #[test]
    fn lattice_survives_normalization() {
        let (norm, bf) = boundary_law(&ReproductionLaw::binary_uniform3()).unwrap();
        let lat = norm.lattice().unwrap();
        assert!((lat.unit - bf.theta_star).abs() < 1e-15);
        assert!((lat.offset + bf.kappa_star).abs() < 1e-15);
        assert_eq!(lat.realizations.len(), 9);
    }
}
