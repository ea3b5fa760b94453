//! Experiment configuration, dispatch and persistence.
//!
//! A run reads one TOML config, evaluates every `(seed, cell)` pair, and
//! writes JSON-lines records plus a flat summary CSV. Files are written under
//! an `.incomplete` suffix and renamed once the whole run succeeded.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::curves::{compute_lambda, crossing_exponent, cubic_constant, rate_coefficient, selection_curves, solve_g};
use crate::engine::{
    self, boundary_levels, consistent_min_displacement, coupled_run, killed_survival, survival_scaling_experiment,
    theta_cells, CountRule, MinDisplacementOptions, SurvivalRegime,
};
use crate::error::{Error, Result};
use crate::gw::{self, OffspringLaw};
use crate::laws::{boundary_law, boundary_residuals, normalize_to_boundary, LawSpec, MomentSource, ReproductionLaw};
use crate::profile::{BarrierProfile, Curve};
use crate::seed::SeedStream;
use crate::spine::{estimate_ey, estimate_ez, Mode, SpineLaw};
use crate::stats::{median, median_ci, MeanAccumulator, Z95};
use crate::walks::{mogulskii_rate, rate_convergence_report, Estimator, ScaleRule, StepLaw};

pub const SCHEMA_VERSION: u32 = 1;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    BoundaryCheck,
    ManyToOne,
    MogulskiiRate,
    CurveSolve,
    Lambda,
    KilledBrw,
    SelectionFixed,
    SelectionProfile,
    ConsistentDisplacement,
    SurvivalScaling,
    GwTail,
    CouplingProperty,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 12] = [
        ExperimentKind::BoundaryCheck,
        ExperimentKind::ManyToOne,
        ExperimentKind::MogulskiiRate,
        ExperimentKind::CurveSolve,
        ExperimentKind::Lambda,
        ExperimentKind::KilledBrw,
        ExperimentKind::SelectionFixed,
        ExperimentKind::SelectionProfile,
        ExperimentKind::ConsistentDisplacement,
        ExperimentKind::SurvivalScaling,
        ExperimentKind::GwTail,
        ExperimentKind::CouplingProperty,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::BoundaryCheck => "boundary_check",
            ExperimentKind::ManyToOne => "many_to_one",
            ExperimentKind::MogulskiiRate => "mogulskii_rate",
            ExperimentKind::CurveSolve => "curve_solve",
            ExperimentKind::Lambda => "lambda",
            ExperimentKind::KilledBrw => "killed_brw",
            ExperimentKind::SelectionFixed => "selection_fixed",
            ExperimentKind::SelectionProfile => "selection_profile",
            ExperimentKind::ConsistentDisplacement => "consistent_displacement",
            ExperimentKind::SurvivalScaling => "survival_scaling",
            ExperimentKind::GwTail => "gw_tail",
            ExperimentKind::CouplingProperty => "coupling_property",
        }
    }

    pub fn describe(&self) -> &'static str {
        match self {
            ExperimentKind::BoundaryCheck => "boundary normalization of a law and its moment residuals",
            ExperimentKind::ManyToOne => "E[Y] and E[Z] corridor functionals by spine enumeration and sampling",
            ExperimentKind::MogulskiiRate => "scaled log confinement probabilities against the small-deviation rate",
            ExperimentKind::CurveSolve => "critical curve above a killing curve from a start value",
            ExperimentKind::Lambda => "survival threshold of the critical curve",
            ExperimentKind::KilledBrw => "survival frequency under a killing curve",
            ExperimentKind::SelectionFixed => "extremes under selection of floor(exp(a k^(1/3))) particles",
            ExperimentKind::SelectionProfile => "extremes under selection with a profile h",
            ExperimentKind::ConsistentDisplacement => "max over lineages of the running minimum",
            ExperimentKind::SurvivalScaling => "survival above the line -eps j",
            ExperimentKind::GwTail => "Galton-Watson left tail against its bound",
            ExperimentKind::CouplingProperty => "domination order along rank-coupled selection runs",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind '{s}'")))
    }
}

/// Step law of the one-dimensional walk in `mogulskii_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WalkSpec {
    Pm1,
    Gaussian { sd: f64 },
    Lattice { unit: f64, atoms: Vec<(i64, f64)> },
    /// The spine step of the configured law.
    Spine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorSpec {
    #[default]
    Exact,
    MonteCarlo,
    Both,
}

/// Experiment-specific parameters; each kind reads the fields it needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Curve>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Curve>,
    /// Killing curve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kill_curve: Option<Curve>,
    /// Start value of a critical curve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    /// Variance override when no law is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    /// Selection profile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<Curve>,
    /// Selection exponent `a` in `floor(exp(a k^(1/3)))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// Explicit slopes; horizons follow `n = round((theta / eps)^(3/2))`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eps: Vec<f64>,
    /// Target interval `[x, y]` of the Z functional.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walk: Option<WalkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offspring: Option<OffspringLaw>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_constant: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap_a: Option<CountRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap_b: Option<CountRule>,
    /// Points in a tabulated curve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    /// Also emit per-generation records of the first replica.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub trace: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Caps {
    #[serde(default = "default_population")]
    pub population: usize,
    #[serde(default = "default_depth")]
    pub depth_cap: usize,
    #[serde(default = "default_budget")]
    pub enumeration_budget: f64,
}

fn default_population() -> usize {
    engine::DEFAULT_CAPACITY
}
fn default_depth() -> usize {
    crate::spine::DEFAULT_DEPTH_CAP
}
fn default_budget() -> f64 {
    crate::spine::DEFAULT_BUDGET
}
fn yes() -> bool {
    true
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            population: default_population(),
            depth_cap: default_depth(),
            enumeration_budget: default_budget(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// File stem; defaults to the name, then the experiment kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stem: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Map the law to its boundary-case normalization before use.
    #[serde(default = "yes")]
    pub normalize: bool,
    /// The user's assertion that the law satisfies the integrability condition;
    /// it is not checked.
    #[serde(default = "yes")]
    pub assume_integrable: bool,
    #[serde(default)]
    pub ns: Vec<usize>,
    #[serde(default)]
    pub reps: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law: Option<LawSpec>,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn stem(&self) -> String {
        self.output
            .stem
            .clone()
            .or_else(|| self.name.clone())
            .unwrap_or_else(|| self.experiment.name().to_string())
    }

    fn need_law(&self) -> Result<&LawSpec> {
        self.law
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} needs a [law] table", self.experiment.name())))
    }

    fn need<T: Clone>(&self, v: &Option<T>, key: &str) -> Result<T> {
        v.clone()
            .ok_or_else(|| Error::Config(format!("{} needs params.{key}", self.experiment.name())))
    }

    /// Schema checks done before any file is touched.
    pub fn validate(&self) -> Result<()> {
        use ExperimentKind::*;
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        let kind = self.experiment;
        let needs_ns = !matches!(kind, BoundaryCheck | CurveSolve | Lambda)
            && !(kind == SurvivalScaling && !self.params.eps.is_empty());
        if needs_ns && self.ns.is_empty() {
            return Err(Error::Config(format!("{} needs a nonempty n list", kind.name())));
        }
        let needs_reps = matches!(
            kind,
            KilledBrw | SelectionFixed | SelectionProfile | ConsistentDisplacement | SurvivalScaling | GwTail
                | CouplingProperty
        ) || (matches!(kind, ManyToOne | MogulskiiRate)
            && self.params.estimator.unwrap_or_default() != EstimatorSpec::Exact);
        if needs_reps && self.reps == 0 {
            return Err(Error::Config(format!("{} needs reps > 0", kind.name())));
        }
        let uses_law = !matches!(kind, GwTail | CurveSolve | Lambda | MogulskiiRate);
        if uses_law {
            let spec = self.need_law()?;
            ReproductionLaw::from_spec(spec)?;
            if !self.assume_integrable && kind != BoundaryCheck {
                return Err(Error::Config(
                    "assume_integrable = false: the integrability condition must be asserted".into(),
                ));
            }
        }
        let p = &self.params;
        match kind {
            BoundaryCheck => {}
            ManyToOne => {
                self.profile()?;
                let t = self.need(&p.target, "target")?;
                if t[0] > t[1] {
                    return Err(Error::Config("params.target must be [x, y] with x <= y".into()));
                }
            }
            MogulskiiRate => {
                self.profile()?;
                if matches!(p.walk, Some(WalkSpec::Spine)) {
                    self.need_law()?;
                }
            }
            CurveSolve => {
                self.need(&p.kill_curve, "kill_curve")?.validate()?;
                self.need(&p.start, "start")?;
                self.sigma2_param()?;
            }
            Lambda => {
                self.need(&p.kill_curve, "kill_curve")?.validate()?;
                self.sigma2_param()?;
            }
            KilledBrw => self.need(&p.kill_curve, "kill_curve")?.validate()?,
            SelectionFixed => {
                let a = self.need(&p.cap_rate, "cap_rate")?;
                if !(a > 0.0) {
                    return Err(Error::Config("params.cap_rate must be positive".into()));
                }
            }
            SelectionProfile => {
                let h = self.need(&p.profile, "profile")?;
                h.validate()?;
                if h.min() <= 0.0 {
                    return Err(Error::Config("params.profile must be positive".into()));
                }
            }
            ConsistentDisplacement => {}
            SurvivalScaling => {
                let theta = self.need(&p.theta, "theta")?;
                if !(theta > 0.0) || p.eps.iter().any(|&e| !(e > 0.0)) {
                    return Err(Error::Config("theta and eps must be positive".into()));
                }
            }
            GwTail => {
                self.need(&p.offspring, "offspring")?.require_supercritical()?;
                if p.zs.is_empty() || p.zs.iter().any(|&z| !(z > 0.0 && z < 1.0)) {
                    return Err(Error::Config("params.zs must be a nonempty list in (0, 1)".into()));
                }
            }
            CouplingProperty => {
                let (a, b) = (self.need(&p.cap_a, "cap_a")?, self.need(&p.cap_b, "cap_b")?);
                a.validate()?;
                b.validate()?;
                let n = self.ns.iter().copied().max().unwrap_or(0);
                engine::check_coupling(
                    &SurvivalRegime::TopCount { phi: a },
                    &SurvivalRegime::TopCount { phi: b },
                    n,
                )?;
            }
        }
        Ok(())
    }

    fn profile(&self) -> Result<BarrierProfile> {
        let lower = self.need(&self.params.lower, "lower")?;
        let upper = self.need(&self.params.upper, "upper")?;
        BarrierProfile::new(lower, upper)
    }

    fn sigma2_param(&self) -> Result<f64> {
        if let Some(s) = self.params.sigma2 {
            if !(s > 0.0) {
                return Err(Error::Config("params.sigma2 must be positive".into()));
            }
            return Ok(s);
        }
        match &self.law {
            Some(_) => Ok(self.resolved_law()?.1),
            None => Err(Error::Config(format!(
                "{} needs params.sigma2 or a law",
                self.experiment.name()
            ))),
        }
    }

    /// The law as used by experiments, with its variance `E[sum l^2 e^l]`.
    pub fn resolved_law(&self) -> Result<(ReproductionLaw, f64)> {
        let raw = ReproductionLaw::from_spec(self.need_law()?)?;
        if self.normalize {
            let (law, bf) = boundary_law(&raw)?;
            Ok((law, bf.sigma2))
        } else {
            let r = boundary_residuals(&raw, MomentSource::Exact)?;
            Ok((raw, r.sigma2))
        }
    }
}

/// Point of a plot series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub x: f64,
    pub y: Option<f64>,
    pub series: String,
    #[serde(default)]
    pub ci_lo: Option<f64>,
    #[serde(default)]
    pub ci_hi: Option<f64>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, Default)]
struct Cell {
    metrics: Map<String, Value>,
    plot: Vec<PlotPoint>,
}

impl Cell {
    fn set(&mut self, key: &str, v: impl Into<Value>) -> &mut Self {
        self.metrics.insert(key.to_string(), v.into());
        self
    }

    fn point(&mut self, x: f64, y: f64, series: &str, ci: Option<(f64, f64)>) -> &mut Self {
        self.plot.push(PlotPoint {
            x,
            y: finite(y),
            series: series.to_string(),
            ci_lo: ci.and_then(|c| finite(c.0)),
            ci_hi: ci.and_then(|c| finite(c.1)),
        });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub version: String,
    pub experiment: ExperimentKind,
    pub config_hash: String,
    pub seed: u64,
    pub cell: usize,
    pub metrics: Map<String, Value>,
    pub plot: Vec<PlotPoint>,
    /// SHA-256 of `(metrics, plot)`; equal across reruns with the same config and seed.
    pub metrics_hash: String,
    pub wall_time_s: f64,
    pub config: ExperimentConfig,
}

impl ResultRecord {
    /// Record with the timing field cleared, for reproducibility comparisons.
    pub fn without_timing(&self) -> ResultRecord {
        ResultRecord {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

/// Evaluated experiment: records plus the reference lines printed next to them.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub records: Vec<ResultRecord>,
    pub notes: Vec<String>,
}

/// Runs every `(seed, cell)` of `config` in memory.
pub fn evaluate(config: &ExperimentConfig) -> Result<Evaluation> {
    evaluate_with(config, |_| Ok(()))
}

fn evaluate_with<F>(config: &ExperimentConfig, mut sink: F) -> Result<Evaluation>
where
    F: FnMut(&ResultRecord) -> Result<()>,
{
    config.validate()?;
    let hash = config.hash();
    let mut records = Vec::new();
    let mut notes = Vec::new();
    for &seed in &config.seeds {
        let t0 = Instant::now();
        let (cells, mut extra) = dispatch(config, seed)
            .map_err(|e| Error::Config(format!("{} (seed {seed}): {e}", config.experiment.name())))?;
        let elapsed = t0.elapsed().as_secs_f64();
        for n in extra.drain(..) {
            if !notes.contains(&n) {
                notes.push(n);
            }
        }
        let count = cells.len().max(1) as f64;
        for (i, c) in cells.into_iter().enumerate() {
            let body = serde_json::to_string(&(&c.metrics, &c.plot)).expect("metrics serialize");
            let rec = ResultRecord {
                version: VERSION.to_string(),
                experiment: config.experiment,
                config_hash: hash.clone(),
                seed,
                cell: i,
                metrics: c.metrics,
                plot: c.plot,
                metrics_hash: hex::encode(Sha256::digest(body.as_bytes())),
                wall_time_s: elapsed / count,
                config: config.clone(),
            };
            sink(&rec)?;
            records.push(rec);
        }
    }
    Ok(Evaluation { records, notes })
}

type Cells = (Vec<Cell>, Vec<String>);

fn dispatch(c: &ExperimentConfig, seed: u64) -> Result<Cells> {
    let stream = SeedStream::named(seed, c.experiment.name());
    match c.experiment {
        ExperimentKind::BoundaryCheck => run_boundary_check(c, seed),
        ExperimentKind::ManyToOne => run_many_to_one(c, seed),
        ExperimentKind::MogulskiiRate => run_mogulskii(c, seed),
        ExperimentKind::CurveSolve => run_curve_solve(c),
        ExperimentKind::Lambda => run_lambda(c),
        ExperimentKind::KilledBrw => run_killed(c, &stream),
        ExperimentKind::SelectionFixed | ExperimentKind::SelectionProfile => run_selection(c, &stream),
        ExperimentKind::ConsistentDisplacement => run_consistent(c, &stream),
        ExperimentKind::SurvivalScaling => run_survival_scaling(c, &stream),
        ExperimentKind::GwTail => run_gw_tail(c, &stream),
        ExperimentKind::CouplingProperty => run_coupling(c, &stream),
    }
}

fn run_boundary_check(c: &ExperimentConfig, seed: u64) -> Result<Cells> {
    let raw = ReproductionLaw::from_spec(c.need_law()?)?;
    let bf = normalize_to_boundary(&raw)?;
    let law = bf.apply(&raw);
    let source = if law.is_enumerable() || law.tilt(1.0).is_some() {
        MomentSource::Exact
    } else {
        MomentSource::MonteCarlo {
            samples: c.reps.max(100_000),
            seed,
        }
    };
    let r = boundary_residuals(&law, source)?;
    let t = raw.tilt(bf.theta_star);
    let mut cell = Cell::default();
    cell.set("law", raw.describe())
        .set("theta_star", bf.theta_star)
        .set("kappa_star", bf.kappa_star)
        .set("sigma2", bf.sigma2)
        .set(
            "theta_residual",
            t.map_or(f64::NAN, |t| (bf.theta_star * t.d1 - t.kappa).abs()),
        )
        .set("r1", r.r1)
        .set("r2", r.r2)
        .set("sigma2_moment", r.sigma2)
        .set("exact", r.stderr.is_none());
    cell.point(0.0, bf.theta_star, "theta_star", None)
        .point(0.0, bf.sigma2, "sigma2", None);
    Ok((vec![cell], vec![]))
}

fn run_many_to_one(c: &ExperimentConfig, seed: u64) -> Result<Cells> {
    let (law, sigma2) = c.resolved_law()?;
    let sl = SpineLaw::new(&law)?;
    let profile = c.profile()?;
    let [x, y] = c.need(&c.params.target, "target")?;
    let est = c.params.estimator.unwrap_or_default();
    let y_ref = -crossing_exponent(&profile, sigma2)?;
    let z_ref = -(x + mogulskii_rate(&profile, 1.0, sigma2)?);
    let exact_mode = Mode::Exact {
        depth_cap: c.caps.depth_cap,
        budget: c.caps.enumeration_budget,
    };
    let mut cells = Vec::new();
    for (i, &n) in c.ns.iter().enumerate() {
        let mut cell = Cell::default();
        cell.set("n", n as u64);
        let scale = (n as f64).cbrt().recip();
        let mut modes = Vec::new();
        if est != EstimatorSpec::MonteCarlo {
            modes.push(("exact", exact_mode));
        }
        if est != EstimatorSpec::Exact {
            modes.push((
                "mc",
                Mode::MonteCarlo {
                    reps: c.reps,
                    seed: seed ^ (i as u64).wrapping_mul(0x9E37_79B9),
                },
            ));
        }
        for (tag, mode) in modes {
            let ey = estimate_ey(&sl, &profile, n, mode);
            let ez = estimate_ez(&sl, &profile, x, y, n, mode);
            for (name, r) in [("ey", ey), ("ez", ez)] {
                match r {
                    Ok(e) => {
                        cell.set(&format!("{name}_{tag}"), e.mean)
                            .set(&format!("{name}_{tag}_stderr"), e.stderr)
                            .set(&format!("{name}_{tag}_scaled_log"), scale * e.log_mean);
                        let ci = (e.mean - Z95 * e.stderr, e.mean + Z95 * e.stderr);
                        cell.point(n as f64, e.mean, &format!("{name}_{tag}"), Some(ci));
                    }
                    Err(Error::EnumerationTooLarge { .. }) => {
                        cell.set(&format!("{name}_{tag}"), Value::Null);
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        cell.set("ey_reference_exponent", y_ref).set("ez_reference_exponent", z_ref);
        cells.push(cell);
    }
    let notes = vec![
        format!("n^(-1/3) log E[Y] reference: -inf_t(g_t + H_t) = {y_ref:.6}"),
        format!("n^(-1/3) log E[Z] reference: -(x + H_1) = {z_ref:.6}"),
    ];
    Ok((cells, notes))
}

fn run_mogulskii(c: &ExperimentConfig, seed: u64) -> Result<Cells> {
    let profile = c.profile()?;
    let step = match c.params.walk.clone().unwrap_or(WalkSpec::Pm1) {
        WalkSpec::Pm1 => StepLaw::pm1(),
        WalkSpec::Gaussian { sd } => StepLaw::gaussian(sd)?,
        WalkSpec::Lattice { unit, atoms } => StepLaw::lattice(unit, atoms)?,
        WalkSpec::Spine => StepLaw::spine(&c.resolved_law()?.0)?,
    };
    let sigma2 = step.sigma2();
    let rule = ScaleRule::Power {
        exponent: c.params.scale_exponent.unwrap_or(1.0 / 3.0),
    };
    let est = c.params.estimator.unwrap_or_default();
    let mut cells: Vec<Cell> = c.ns.iter().map(|&n| {
        let mut cell = Cell::default();
        cell.set("n", n as u64).set("a_n", rule.a_n(n));
        cell
    }).collect();
    let mut target = f64::NAN;
    let mut runs = Vec::new();
    if est != EstimatorSpec::MonteCarlo {
        runs.push(("exact", Estimator::Exact));
    }
    if est != EstimatorSpec::Exact {
        runs.push(("mc", Estimator::MonteCarlo { reps: c.reps, seed }));
    }
    for (tag, e) in runs {
        let rows = rate_convergence_report(&step, &profile, rule, &c.ns, sigma2, e)?;
        for (cell, r) in cells.iter_mut().zip(&rows) {
            target = r.target_constant;
            cell.set(&format!("{tag}_prob"), r.estimate)
                .set(&format!("{tag}_stderr"), r.stderr)
                .set(&format!("{tag}_scaled_log"), r.scaled_log);
            cell.point(r.n as f64, r.scaled_log, &format!("scaled_log_{tag}"), None);
        }
    }
    for cell in &mut cells {
        let n = cell.metrics["n"].as_f64().unwrap_or(f64::NAN);
        cell.set("target_constant", target);
        cell.point(n, target, "reference", None);
    }
    Ok((cells, vec![format!("(a_n^2/n) log P reference: {target:.6} (sigma^2 = {sigma2})")]))
}

fn run_curve_solve(c: &ExperimentConfig) -> Result<Cells> {
    let f = c.need(&c.params.kill_curve, "kill_curve")?;
    let x = c.need(&c.params.start, "start")?;
    let sigma2 = c.sigma2_param()?;
    let curve = solve_g(x, &f, sigma2)?;
    let points = c.params.points.unwrap_or(101);
    let mut cell = Cell::default();
    cell.set("x", x)
        .set("sigma2", sigma2)
        .set("t_max", curve.t_max)
        .set("touched", curve.touched)
        .set("t_touch", curve.t_touch.map_or(Value::Null, Value::from))
        .set("max_residual", curve.max_residual(200, 0.9)?);
    if curve.touched {
        cell.set("g_end", Value::Null);
    } else {
        cell.set("g_end", curve.eval(1.0).unwrap_or(f64::NAN));
    }
    for (t, ft, gt) in curve.table(points) {
        cell.point(t, gt, "g", None).point(t, ft, "f", None);
    }
    Ok((vec![cell], vec![]))
}

fn run_lambda(c: &ExperimentConfig) -> Result<Cells> {
    let f = c.need(&c.params.kill_curve, "kill_curve")?;
    let sigma2 = c.sigma2_param()?;
    let l = compute_lambda(&f, sigma2)?;
    let mut cell = Cell::default();
    cell.set("lambda", l.lambda)
        .set("bracket_lo", l.bracket.0)
        .set("bracket_hi", l.bracket.1)
        .set("sigma2", sigma2);
    let mut notes = Vec::new();
    if f.is_constant() {
        let closed = f.eval(0.0) + cubic_constant(sigma2);
        cell.set("closed_form", closed).set("error", (l.lambda - closed).abs());
        notes.push(format!("constant f: lambda = c + (3 pi^2 sigma^2/2)^(1/3) = {closed:.10}"));
    }
    cell.point(0.0, l.lambda, "lambda", Some(l.bracket));
    Ok((vec![cell], notes))
}

fn run_killed(c: &ExperimentConfig, stream: &SeedStream) -> Result<Cells> {
    let (law, sigma2) = c.resolved_law()?;
    let f = c.need(&c.params.kill_curve, "kill_curve")?;
    let lambda = compute_lambda(&f, sigma2).map(|l| l.lambda);
    let mut cells = Vec::new();
    for (i, &n) in c.ns.iter().enumerate() {
        let p = killed_survival(&law, &boundary_levels(&f, n), c.reps, &stream.derive(i as u64))?;
        let ci = p.wilson(Z95);
        let mut cell = Cell::default();
        cell.set("n", n as u64)
            .set("survivors", p.successes)
            .set("reps", p.trials)
            .set("survival", p.freq())
            .set("ci_lo", ci.0)
            .set("ci_hi", ci.1);
        match &lambda {
            Ok(l) => {
                cell.set("lambda", *l).set("predicted_survival", *l < 0.0);
            }
            Err(_) => {
                cell.set("lambda", Value::Null);
            }
        }
        cell.point(n as f64, p.freq(), "survival", Some(ci));
        cells.push(cell);
    }
    let note = match lambda {
        Ok(l) => format!("lambda(f) = {l:.6}: the killed walk survives in the limit iff lambda < 0"),
        Err(e) => format!("lambda(f) unavailable: {e}"),
    };
    Ok((cells, vec![note]))
}

fn run_selection(c: &ExperimentConfig, stream: &SeedStream) -> Result<Cells> {
    let (law, sigma2) = c.resolved_law()?;
    let coef = rate_coefficient(sigma2);
    let (max_ref, min_ref, note) = match c.experiment {
        ExperimentKind::SelectionFixed => {
            let a = c.need(&c.params.cap_rate, "cap_rate")?;
            let m = -3.0 * coef / (a * a);
            (
                m,
                -(a + 3.0 * coef / (a * a)),
                format!("a = {a}: M_n/n^(1/3) -> -3 pi^2 sigma^2/(2 a^2) = {m:.6}, m_n/n^(1/3) -> -(a + 3 pi^2 sigma^2/(2 a^2)) = {:.6}", -(a + 3.0 * coef / (a * a))),
            )
        }
        _ => {
            let h = c.need(&c.params.profile, "profile")?;
            let pair = selection_curves(&h, sigma2)?;
            let g1 = pair.terminal();
            let f1 = pair.f_sel.eval(1.0);
            (
                g1,
                f1,
                format!("M_n/n^(1/3) -> h_0 - (pi^2 sigma^2/2) int ds/h^2 = {g1:.6}, m_n/n^(1/3) -> {f1:.6}"),
            )
        }
    };
    let mut cells = Vec::new();
    for (i, &n) in c.ns.iter().enumerate() {
        let regime = match c.experiment {
            ExperimentKind::SelectionFixed => SurvivalRegime::TopCount {
                phi: CountRule::CubeRootExp {
                    a: c.need(&c.params.cap_rate, "cap_rate")?,
                },
            },
            _ => SurvivalRegime::Profile {
                h: c.need(&c.params.profile, "profile")?,
                horizon: n,
            },
        };
        let s = stream.derive(i as u64);
        let cap = c.caps.population;
        let runs = s.map_replicas(c.reps, |_, rng| engine::run_capped(&regime, &law, n, rng, cap))?;
        let scale = (n as f64).cbrt();
        let maxs: Vec<f64> = runs.iter().map(|r| r.last().max_pos.unwrap_or(f64::NAN) / scale).collect();
        let mins: Vec<f64> = runs.iter().map(|r| r.last().min_pos.unwrap_or(f64::NAN) / scale).collect();
        let mut cell = Cell::default();
        cell.set("n", n as u64).set("reps", c.reps).set("count", runs[0].last().count);
        for (name, xs, reference) in [("max", &maxs, max_ref), ("min", &mins, min_ref)] {
            let mut acc = MeanAccumulator::default();
            xs.iter().for_each(|&v| acc.push(v));
            let e = acc.estimate();
            cell.set(&format!("{name}_scaled_mean"), e.mean)
                .set(&format!("{name}_scaled_stderr"), e.stderr)
                .set(&format!("{name}_scaled_median"), median(xs))
                .set(&format!("{name}_reference"), reference);
            cell.point(n as f64, e.mean, &format!("{name}_scaled"), Some(e.ci(Z95)))
                .point(n as f64, reference, &format!("{name}_reference"), None);
        }
        cells.push(cell);
        if c.params.trace {
            let mut t = Cell::default();
            t.set("n", n as u64).set("trace", serde_json::to_value(&runs[0].records).expect("records"));
            cells.push(t);
        }
    }
    Ok((cells, vec![note]))
}

fn run_consistent(c: &ExperimentConfig, stream: &SeedStream) -> Result<Cells> {
    let (law, sigma2) = c.resolved_law()?;
    let reference = -cubic_constant(sigma2);
    let opts = MinDisplacementOptions::default();
    let mut cells = Vec::new();
    for (i, &n) in c.ns.iter().enumerate() {
        let scale = (n as f64).cbrt().max(1.0);
        let vals = stream
            .derive(i as u64)
            .map_replicas(c.reps, |_, rng| consistent_min_displacement(&law, n, rng.next_u64(), opts))?;
        let scaled: Vec<f64> = vals.iter().map(|v| v / scale).collect();
        let med = median(&scaled);
        let ci = median_ci(&scaled, Z95);
        let mut acc = MeanAccumulator::default();
        scaled.iter().for_each(|&v| acc.push(v));
        let mut cell = Cell::default();
        cell.set("n", n as u64)
            .set("reps", c.reps)
            .set("median_scaled", med)
            .set("median_ci_lo", ci.0)
            .set("median_ci_hi", ci.1)
            .set("mean_scaled", acc.estimate().mean)
            .set("reference", reference);
        cell.point(n as f64, med, "median_scaled", Some(ci))
            .point(n as f64, reference, "reference", None);
        cells.push(cell);
    }
    Ok((
        cells,
        vec![format!("limit -(3 pi^2 sigma^2/2)^(1/3) = {reference:.6}")],
    ))
}

fn run_survival_scaling(c: &ExperimentConfig, stream: &SeedStream) -> Result<Cells> {
    let (law, sigma2) = c.resolved_law()?;
    let theta = c.need(&c.params.theta, "theta")?;
    let cells_in: Vec<(f64, usize)> = if c.params.eps.is_empty() {
        theta_cells(theta, &c.ns)
    } else {
        c.params
            .eps
            .iter()
            .map(|&e| (e, ((theta / e).powf(1.5)).round().max(1.0) as usize))
            .collect()
    };
    let rows = survival_scaling_experiment(&law, &cells_in, sigma2, c.reps, stream)?;
    let limit = -std::f64::consts::PI * sigma2.sqrt() / std::f64::consts::SQRT_2;
    let mut cells = Vec::new();
    for r in rows {
        let mut cell = Cell::default();
        cell.set("eps", r.eps)
            .set("n", r.n as u64)
            .set("theta", r.theta)
            .set("survivors", r.survival.successes)
            .set("reps", r.survival.trials)
            .set("rho", r.rho)
            .set("rho_ci_lo", r.rho_ci.0)
            .set("rho_ci_hi", r.rho_ci.1)
            .set("eps_scaled", r.eps_scaled)
            .set("n_scaled", r.n_scaled)
            .set("n_scaled_ci_lo", r.n_scaled_ci.0)
            .set("n_scaled_ci_hi", r.n_scaled_ci.1)
            .set("lower_ref", r.lower_ref)
            .set("phi_inverse", r.phi_inv)
            .set("zero_hit", r.zero_hit);
        let e = r.eps.sqrt();
        cell.point(r.eps, r.eps_scaled, "eps_scaled", Some((e * r.rho_ci.0.ln(), e * r.rho_ci.1.ln())))
            .point(r.eps, limit, "reference", None);
        cells.push(cell);
    }
    Ok((
        cells,
        vec![format!(
            "eps^(1/2) log rho -> -pi sigma/sqrt(2) = {limit:.6}; n^(-1/3) log rho in [-pi sigma/sqrt(2 theta), Phi^-1(theta)]"
        )],
    ))
}

fn run_gw_tail(c: &ExperimentConfig, stream: &SeedStream) -> Result<Cells> {
    let law = c.need(&c.params.offspring, "offspring")?;
    let cst = c.params.tail_constant.unwrap_or(1.0);
    let rows = gw::tail_table(&law, &c.params.zs, &c.ns, cst, c.reps, stream)?;
    let m = law.mean();
    let mut cells = Vec::new();
    for r in rows {
        let exact = if law.min_offspring() >= 1 {
            let level = (r.z * m.powi(r.n as i32)).floor() as u64;
            gw::left_tail_exact(&law, level, r.n).ok()
        } else {
            None
        };
        let mut cell = Cell::default();
        cell.set("z", r.z)
            .set("n", r.n as u64)
            .set("empirical", r.empirical)
            .set("ci_lo", r.ci.0)
            .set("ci_hi", r.ci.1)
            .set("bound", r.bound)
            .set("case", r.case.tag())
            .set("exact", exact.map_or(Value::Null, Value::from));
        cell.point(r.z, r.empirical, &format!("empirical_n{}", r.n), Some(r.ci))
            .point(r.z, r.bound, "bound", None);
        if let Some(e) = exact {
            cell.point(r.z, e, &format!("exact_n{}", r.n), None);
        }
        cells.push(cell);
    }
    Ok((cells, vec![format!("tail case {}, constant C = {cst}", law.tail_case().tag())]))
}

fn run_coupling(c: &ExperimentConfig, stream: &SeedStream) -> Result<Cells> {
    let (law, _) = c.resolved_law()?;
    let a = SurvivalRegime::TopCount {
        phi: c.need(&c.params.cap_a, "cap_a")?,
    };
    let b = SurvivalRegime::TopCount {
        phi: c.need(&c.params.cap_b, "cap_b")?,
    };
    let mut cells = Vec::new();
    for (i, &n) in c.ns.iter().enumerate() {
        let runs = stream
            .derive(i as u64)
            .map_replicas(c.reps, |_, rng| coupled_run(&a, &b, &law, n, rng))?;
        let violations: u64 = runs
            .iter()
            .map(|r| r.order_held.iter().filter(|&&h| !h).count() as u64)
            .sum();
        let bad_runs = runs.iter().filter(|r| !r.always_ordered()).count() as u64;
        let mut cell = Cell::default();
        cell.set("n", n as u64)
            .set("reps", c.reps)
            .set("violations", violations)
            .set("violating_runs", bad_runs);
        cell.point(n as f64, violations as f64, "violations", None);
        cells.push(cell);
    }
    Ok((cells, vec![]))
}

/// Where `run_experiment` writes.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Output directory; falls back to the config's `output.dir`, then `results`.
    pub out_dir: Option<PathBuf>,
    /// Replaces the config's seed list.
    pub seed: Option<u64>,
    /// Worker threads for replica parallelism (results do not depend on it).
    pub workers: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records_path: PathBuf,
    pub summary_path: PathBuf,
    pub evaluation: Evaluation,
    pub summary_csv: String,
}

fn incomplete(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".incomplete");
    PathBuf::from(s)
}

/// Validates, evaluates and persists an experiment.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    let mut config = config.clone();
    if let Some(s) = opts.seed {
        config.seeds = vec![s];
    }
    config.validate()?;
    let dir = opts
        .out_dir
        .clone()
        .or_else(|| config.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let stem = config.stem();
    let records_path = dir.join(format!("{stem}.jsonl"));
    let summary_path = dir.join(format!("{stem}_summary.csv"));
    let partial = incomplete(&records_path);
    let mut file = File::create(&partial).map_err(|e| Error::Io(format!("{}: {e}", partial.display())))?;
    let mut go = || {
        evaluate_with(&config, |rec| {
            let line = serde_json::to_string(rec).expect("record serializes");
            writeln!(file, "{line}")?;
            file.flush()?;
            Ok(())
        })
    };
    let evaluation = match opts.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(go),
        None => go(),
    }?;
    let summary_csv = summary_csv(&evaluation.records);
    let partial_summary = incomplete(&summary_path);
    fs::write(&partial_summary, &summary_csv)?;
    fs::rename(&partial, &records_path)?;
    fs::rename(&partial_summary, &summary_path)?;
    Ok(RunOutput {
        records_path,
        summary_path,
        evaluation,
        summary_csv,
    })
}

fn csv_field(v: &Value) -> Option<String> {
    match v {
        Value::Null => Some(String::new()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(if s.contains(',') || s.contains('"') {
            format!("\"{}\"", s.replace('"', "\"\""))
        } else {
            s.clone()
        }),
        _ => None,
    }
}

/// One row per record with the scalar metrics as columns.
pub fn summary_csv(records: &[ResultRecord]) -> String {
    let mut cols: Vec<String> = Vec::new();
    for r in records {
        for (k, v) in &r.metrics {
            if csv_field(v).is_some() && !cols.contains(k) {
                cols.push(k.clone());
            }
        }
    }
    let mut out = String::from("seed,cell");
    for k in &cols {
        out.push(',');
        out.push_str(k);
    }
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{}", r.seed, r.cell);
        for k in &cols {
            out.push(',');
            if let Some(s) = r.metrics.get(k).and_then(csv_field) {
                out.push_str(&s);
            }
        }
        out.push('\n');
    }
    out
}

/// Parses a JSON-lines result file; a bad line is reported with its number.
pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>> {
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ResultRecord = serde_json::from_str(&line).map_err(|e| Error::RecordParse {
            line: i + 1,
            msg: format!("{}: {e}", path.display()),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Long-format CSV `x,y,series,ci_lo,ci_hi` from result files of one config.
pub fn emit_plot_data(paths: &[PathBuf], kind: Option<ExperimentKind>) -> Result<String> {
    let mut records = Vec::new();
    for p in paths {
        records.extend(read_records(p)?);
    }
    let Some(first) = records.first() else {
        return Err(Error::Config("no records in the given files".into()));
    };
    let hash = first.config_hash.clone();
    if let Some(bad) = records.iter().find(|r| r.config_hash != hash) {
        return Err(Error::Config(format!(
            "mixed configs: {} and {}",
            &hash[..12],
            &bad.config_hash[..12]
        )));
    }
    if let Some(k) = kind {
        if first.experiment != k {
            return Err(Error::Config(format!(
                "records are {}, not {}",
                first.experiment.name(),
                k.name()
            )));
        }
    }
    let mut seeds: Vec<u64> = records.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let tag_seed = seeds.len() > 1;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut out = String::from("x,y,series,ci_lo,ci_hi\n");
    for r in &records {
        for p in &r.plot {
            let series = if tag_seed {
                format!("{};seed={}", p.series, r.seed)
            } else {
                p.series.clone()
            };
            let _ = writeln!(out, "{},{},{},{},{}", p.x, opt(p.y), series, opt(p.ci_lo), opt(p.ci_hi));
        }
    }
    Ok(out)
}

/// `(name, description)` of every experiment kind.
pub fn list_experiments() -> Vec<(&'static str, &'static str)> {
    ExperimentKind::ALL.iter().map(|k| (k.name(), k.describe())).collect()
}
