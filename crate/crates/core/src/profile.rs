//! Continuous functions on `[0, 1]` used as killing curves, corridor walls and
//! selection profiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid used to validate strict ordering of a profile's two walls.
const CHECK_GRID: usize = 1024;

/// A real function on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Curve {
    Constant { value: f64 },
    /// `intercept + slope * t`
    Affine { intercept: f64, slope: f64 },
    /// `offset + scale * (t + eps)^(1/3)`
    CubeRoot { scale: f64, eps: f64, offset: f64 },
    /// Piecewise-linear interpolation through `(ts[i], values[i])`; `ts` must
    /// start at 0, end at 1 and increase strictly.
    Table { ts: Vec<f64>, values: Vec<f64> },
}

impl Curve {
    pub fn constant(value: f64) -> Self {
        Curve::Constant { value }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Curve::Constant { value } if !value.is_finite() => {
                Err(Error::InvalidProfile(format!("constant {value}")))
            }
            Curve::Affine { intercept, slope } if !(intercept.is_finite() && slope.is_finite()) => {
                Err(Error::InvalidProfile("non-finite affine coefficients".into()))
            }
            Curve::CubeRoot { scale, eps, offset } => {
                if !(scale.is_finite() && offset.is_finite() && eps.is_finite() && *eps >= 0.0) {
                    Err(Error::InvalidProfile(
                        "cube_root needs finite scale/offset and eps >= 0".into(),
                    ))
                } else {
                    Ok(())
                }
            }
            Curve::Table { ts, values } => {
                if ts.len() < 2 || ts.len() != values.len() {
                    return Err(Error::InvalidProfile(
                        "table needs matching ts/values with at least two knots".into(),
                    ));
                }
                if ts[0] != 0.0 || *ts.last().unwrap() != 1.0 {
                    return Err(Error::InvalidProfile("table must span [0, 1]".into()));
                }
                if ts.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::InvalidProfile("table knots must increase".into()));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidProfile("non-finite table value".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Curve::Constant { value } => *value,
            Curve::Affine { intercept, slope } => intercept + slope * t,
            Curve::CubeRoot { scale, eps, offset } => offset + scale * (t + eps).max(0.0).cbrt(),
            Curve::Table { ts, values } => {
                let i = segment(ts, t);
                let w = (t - ts[i]) / (ts[i + 1] - ts[i]);
                values[i] + w * (values[i + 1] - values[i])
            }
        }
    }

    /// Right derivative at `t` (one-sided slope on tables).
    pub fn slope(&self, t: f64) -> f64 {
        match self {
            Curve::Constant { .. } => 0.0,
            Curve::Affine { slope, .. } => *slope,
            Curve::CubeRoot { scale, eps, .. } => {
                let s = (t + eps).max(f64::MIN_POSITIVE);
                scale / (3.0 * s.cbrt() * s.cbrt())
            }
            Curve::Table { ts, values } => {
                let i = segment(ts, t);
                (values[i + 1] - values[i]) / (ts[i + 1] - ts[i])
            }
        }
    }

    /// Interior breakpoints where the curve is not smooth.
    pub fn knots(&self) -> Vec<f64> {
        match self {
            Curve::Table { ts, .. } => ts[1..ts.len() - 1].to_vec(),
            _ => Vec::new(),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Curve::Constant { .. } => true,
            Curve::Affine { slope, .. } => *slope == 0.0,
            Curve::CubeRoot { scale, .. } => *scale == 0.0,
            Curve::Table { values, .. } => values.iter().all(|v| *v == values[0]),
        }
    }

    /// Maximum over `[0, 1]` (exact for every variant: all are monotone or
    /// piecewise linear).
    pub fn max(&self) -> f64 {
        match self {
            Curve::Table { values, .. } => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            _ => self.eval(0.0).max(self.eval(1.0)),
        }
    }

    pub fn min(&self) -> f64 {
        match self {
            Curve::Table { values, .. } => values.iter().copied().fold(f64::INFINITY, f64::min),
            _ => self.eval(0.0).min(self.eval(1.0)),
        }
    }

    /// Piecewise-linear table through `knots` equispaced samples.
    pub fn tabulate(&self, knots: usize) -> Curve {
        let m = knots.max(2);
        let ts: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
        let values = ts.iter().map(|&t| self.eval(t)).collect();
        Curve::Table { ts, values }
    }

    /// `self + c`.
    pub fn shifted(&self, c: f64) -> Curve {
        match self {
            Curve::Constant { value } => Curve::Constant { value: value + c },
            Curve::Affine { intercept, slope } => Curve::Affine {
                intercept: intercept + c,
                slope: *slope,
            },
            Curve::CubeRoot { scale, eps, offset } => Curve::CubeRoot {
                scale: *scale,
                eps: *eps,
                offset: offset + c,
            },
            Curve::Table { ts, values } => Curve::Table {
                ts: ts.clone(),
                values: values.iter().map(|v| v + c).collect(),
            },
        }
    }
}

/// Index `i` of the table segment `[ts[i], ts[i+1]]` containing `t`.
fn segment(ts: &[f64], t: f64) -> usize {
    let n = ts.len();
    ts.partition_point(|&x| x <= t).clamp(1, n - 1) - 1
}

/// Lower and upper walls `(f, g)` of a space-time corridor on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierProfile {
    pub lower: Curve,
    pub upper: Curve,
}

impl BarrierProfile {
    /// Builds a profile, checking `lower < upper` on a 1024-point grid. Equality is
    /// tolerated only at the two endpoints.
    pub fn new(lower: Curve, upper: Curve) -> Result<Self> {
        lower.validate()?;
        upper.validate()?;
        let p = BarrierProfile { lower, upper };
        for i in 0..=CHECK_GRID {
            let t = i as f64 / CHECK_GRID as f64;
            let w = p.width(t);
            let endpoint = i == 0 || i == CHECK_GRID;
            if w < 0.0 || (w == 0.0 && !endpoint) || w.is_nan() {
                return Err(Error::InvalidProfile(format!(
                    "lower wall meets upper wall at t = {t} (width {w})"
                )));
            }
        }
        Ok(p)
    }

    pub fn constant(lower: f64, upper: f64) -> Result<Self> {
        Self::new(Curve::constant(lower), Curve::constant(upper))
    }

    pub fn width(&self, t: f64) -> f64 {
        self.upper.eval(t) - self.lower.eval(t)
    }

    /// Union of both walls' breakpoints, sorted.
    pub fn knots(&self) -> Vec<f64> {
        let mut k = self.lower.knots();
        k.extend(self.upper.knots());
        k.sort_by(f64::total_cmp);
        k.dedup();
        k
    }
}
