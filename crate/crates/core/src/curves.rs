//! Critical curves `g' = -(pi^2 sigma^2 / 2) / (g - f)^2`, the survival
//! threshold `lambda`, the function `Phi`, and the curve pair built from a
//! selection profile.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::profile::{BarrierProfile, Curve};
use crate::quad;
use crate::walks::rate_table;

/// Width below which `g` is considered to have met `f`.
pub const TOUCH_TOL: f64 = 1e-8;
/// Largest ODE step, so that the stored nodes resolve the curve.
const MAX_STEP: f64 = 1.0 / 512.0;
/// Switch to the cubed-width model when `g - f` falls below this fraction of
/// the initial width.
const LOCAL_SWITCH: f64 = 1e-3;
/// Minimum knots for tabulated selection curves.
pub const SELECTION_KNOTS: usize = 1024;

/// `pi^2 sigma^2 / 2`.
pub fn rate_coefficient(sigma2: f64) -> f64 {
    0.5 * PI * PI * sigma2
}

/// `(3 pi^2 sigma^2 / 2)^(1/3)`.
pub fn cubic_constant(sigma2: f64) -> f64 {
    (1.5 * PI * PI * sigma2).cbrt()
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand-Prince step; `None` if a stage leaves the domain.
fn dopri_step<F: Fn(f64, f64) -> Option<f64>>(rhs: &F, t: f64, y: f64, h: f64) -> Option<(f64, f64)> {
    let mut k = [0.0; 7];
    for s in 0..7 {
        let mut yi = y;
        for (j, kj) in k.iter().enumerate().take(s) {
            yi += h * A[s][j] * kj;
        }
        k[s] = rhs(t + C[s] * h, yi)?;
    }
    let mut y5 = y;
    let mut err = 0.0;
    for s in 0..7 {
        y5 += h * B5[s] * k[s];
        err += h * (B5[s] - B4[s]) * k[s];
    }
    Some((y5, err.abs()))
}

/// A solution `g^x` of the critical-curve equation above a lower curve `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalCurve {
    pub start: f64,
    lower: Curve,
    coef: f64,
    /// Nodes of the Dormand-Prince phase: `(t, g)`.
    ts: Vec<f64>,
    gs: Vec<f64>,
    /// Nodes of the cubed-width phase: `(t, (g - f)^3)`.
    local_ts: Vec<f64>,
    local_us: Vec<f64>,
    /// End of the computed range: 1, or the touch time.
    pub t_max: f64,
    /// Time at which `g` meets `f` (extrapolated with the local cubic model,
    /// possibly beyond 1), if the solver reached the touch regime.
    pub t_touch: Option<f64>,
    pub touched: bool,
}

impl CriticalCurve {
    /// `g_t` for `t` in `[0, t_max]`.
    pub fn eval(&self, t: f64) -> Option<f64> {
        if !(0.0..=self.t_max).contains(&t) {
            return None;
        }
        let last = *self.ts.last().expect("nonempty");
        if t <= last {
            let i = self.ts.partition_point(|&x| x <= t).max(1) - 1;
            let h = t - self.ts[i];
            if h == 0.0 {
                return Some(self.gs[i]);
            }
            let rhs = |s: f64, g: f64| self.field(s, g);
            return dopri_step(&rhs, self.ts[i], self.gs[i], h).map(|(y, _)| y);
        }
        // cubed-width phase: u is nearly linear in t, interpolate linearly
        let lt = &self.local_ts;
        let lu = &self.local_us;
        if lt.is_empty() {
            return None;
        }
        let i = lt.partition_point(|&x| x <= t);
        let u = if i == 0 {
            lu[0]
        } else if i >= lt.len() {
            // between the last node and the extrapolated touch
            let j = lt.len() - 1;
            let slope = self.local_rate(lt[j], lu[j]);
            (lu[j] + slope * (t - lt[j])).max(0.0)
        } else {
            let w = (t - lt[i - 1]) / (lt[i] - lt[i - 1]);
            lu[i - 1] + w * (lu[i] - lu[i - 1])
        };
        Some(self.lower.eval(t) + u.max(0.0).cbrt())
    }

    fn field(&self, t: f64, g: f64) -> Option<f64> {
        let w = g - self.lower.eval(t);
        if w > 0.0 {
            Some(-self.coef / (w * w))
        } else {
            None
        }
    }

    /// `d/dt (g - f)^3` in terms of `u = (g - f)^3`.
    fn local_rate(&self, t: f64, u: f64) -> f64 {
        cubed_width_rate(&self.lower, self.coef, t, u)
    }

    pub fn lower(&self) -> &Curve {
        &self.lower
    }

    /// Samples `(t, f_t, g_t)` on `points` equispaced times in `[0, t_max]`.
    pub fn table(&self, points: usize) -> Vec<(f64, f64, f64)> {
        let m = points.max(2);
        (0..m)
            .map(|i| {
                let t = self.t_max * i as f64 / (m - 1) as f64;
                (t, self.lower.eval(t), self.eval(t).expect("in range"))
            })
            .collect()
    }

    pub fn to_csv(&self, points: usize) -> String {
        let mut s = String::from("t,f_t,g_t\n");
        for (t, f, g) in self.table(points) {
            let _ = writeln!(s, "{t},{f},{g}");
        }
        s
    }

    /// `max |g_t - g_0 + H_t(f, g)|` over `checks` times in `[0, frac * t_max]`,
    /// with `H_t` recomputed by adaptive Simpson on the stored solution.
    pub fn max_residual(&self, checks: usize, frac: f64) -> Result<f64> {
        let end = frac * self.t_max;
        let integrand = |s: f64| {
            let w = self.eval(s).expect("in range") - self.lower.eval(s);
            self.coef / (w * w)
        };
        let mut worst: f64 = 0.0;
        let mut acc = 0.0;
        let mut prev = 0.0;
        for i in 1..=checks {
            let t = end * i as f64 / checks as f64;
            acc += quad::simpson(integrand, prev, t, 1e-13)?;
            prev = t;
            let g = self.eval(t).expect("in range");
            worst = worst.max((g - self.start + acc).abs());
        }
        Ok(worst)
    }
}

/// Solves `g_t = x - H_t(f, g)` forward from `g_0 = x` until `t = 1` or `g`
/// meets `f`.
pub fn solve_g(x: f64, f: &Curve, sigma2: f64) -> Result<CriticalCurve> {
    f.validate()?;
    let f0 = f.eval(0.0);
    if !(x > f0) {
        return Err(Error::InvalidArgument(format!(
            "start {x} must lie above f_0 = {f0}"
        )));
    }
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma2 = {sigma2}")));
    }
    let coef = rate_coefficient(sigma2);
    let mut curve = CriticalCurve {
        start: x,
        lower: f.clone(),
        coef,
        ts: vec![0.0],
        gs: vec![x],
        local_ts: Vec::new(),
        local_us: Vec::new(),
        t_max: 1.0,
        t_touch: None,
        touched: false,
    };
    let w0 = x - f0;
    let switch = LOCAL_SWITCH * w0;
    let mut stops: Vec<f64> = f.knots();
    stops.push(1.0);
    let rhs = |t: f64, g: f64| curve_field(f, coef, t, g);

    let (mut t, mut g) = (0.0f64, x);
    let mut h = MAX_STEP.min(0.1 * w0.powi(3) / coef).max(1e-12);
    let mut stop_idx = 0;
    // a start this close to f touches within ~w0^3 / c: go straight to the local model
    let mut local = w0 < 1e-4;
    while !local && t < 1.0 {
        while stops[stop_idx] <= t {
            stop_idx += 1;
        }
        let next_stop = stops[stop_idx];
        let step = h.min(MAX_STEP).min(next_stop - t);
        let tol = 1e-13 * g.abs().max(1.0);
        match dopri_step(&rhs, t, g, step) {
            Some((y, err)) if err <= tol => {
                t = if next_stop - t <= step { next_stop } else { t + step };
                g = y;
                curve.ts.push(t);
                curve.gs.push(g);
                let fac = if err == 0.0 {
                    4.0
                } else {
                    (0.9 * (tol / err).powf(0.2)).clamp(0.2, 4.0)
                };
                h = step * fac;
                if g - f.eval(t) < switch {
                    local = true;
                }
            }
            Some((_, err)) => {
                h = step * (0.9 * (tol / err).powf(0.2)).clamp(0.1, 0.5);
            }
            None => h = step * 0.25,
        }
        if h < 1e-15 {
            return Err(Error::OdeFailed(format!(
                "step size underflow at t = {t} (width {})",
                g - f.eval(t)
            )));
        }
    }
    if !local {
        return Ok(curve);
    }
    // cubed width u = (g - f)^3 obeys u' = -3c - 3 u^(2/3) f'(t), smooth through the touch
    let mut u = (g - f.eval(t)).max(0.0).powi(3);
    curve.local_ts.push(t);
    curve.local_us.push(u);
    let u_touch = TOUCH_TOL.powi(3);
    let rate = |s: f64, v: f64| cubed_width_rate(f, coef, s, v);
    while t < 1.0 && u > u_touch {
        let r = rate(t, u).abs().max(1e-300);
        let dt = (0.02 * u / r).min(MAX_STEP).min(1.0 - t);
        let k1 = rate(t, u);
        let k2 = rate(t + 0.5 * dt, (u + 0.5 * dt * k1).max(0.0));
        let k3 = rate(t + 0.5 * dt, (u + 0.5 * dt * k2).max(0.0));
        let k4 = rate(t + dt, (u + dt * k3).max(0.0));
        u = (u + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).max(0.0);
        t = if 1.0 - t <= dt { 1.0 } else { t + dt };
        curve.local_ts.push(t);
        curve.local_us.push(u);
    }
    let r = rate(t, u);
    let t_touch = if r < 0.0 { t + u / -r } else { f64::INFINITY };
    curve.t_touch = Some(t_touch);
    if t_touch <= 1.0 {
        curve.touched = true;
        curve.t_max = t_touch;
    }
    Ok(curve)
}

fn cubed_width_rate(f: &Curve, coef: f64, t: f64, u: f64) -> f64 {
    -3.0 * coef - 3.0 * u.max(0.0).powf(2.0 / 3.0) * f.slope(t)
}

fn curve_field(f: &Curve, coef: f64, t: f64, g: f64) -> Option<f64> {
    let w = g - f.eval(t);
    if w > 0.0 {
        Some(-coef / (w * w))
    } else {
        None
    }
}

/// Threshold `lambda` with its bisection bracket and critical curve.
#[derive(Debug, Clone)]
pub struct Lambda {
    pub lambda: f64,
    pub bracket: (f64, f64),
    pub curve: CriticalCurve,
}

/// Smallest start `x` whose curve spans `[0, 1]` above `f`, by bisection on
/// the monotone predicate "no touch before 1". Returns the bracket midpoint.
pub fn compute_lambda(f: &Curve, sigma2: f64) -> Result<Lambda> {
    let k = cubic_constant(sigma2);
    let f0 = f.eval(0.0);
    let mut lo = f0 + 1e-9 * f0.abs().max(1.0);
    let mut hi = f.max() + 10.0 * k;
    let survives = |x: f64| -> Result<bool> { Ok(!solve_g(x, f, sigma2)?.touched) };
    if survives(lo)? {
        return Err(Error::BracketFailure(format!(
            "curve from {lo} (just above f_0) already spans [0, 1]"
        )));
    }
    if !survives(hi)? {
        return Err(Error::BracketFailure(format!(
            "curve from X_max = {hi} touches f before t = 1"
        )));
    }
    while hi - lo > 1e-10 * hi.abs().max(1.0) {
        let mid = 0.5 * (lo + hi);
        if survives(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    Ok(Lambda {
        lambda,
        bracket: (lo, hi),
        curve: solve_g(lambda, f, sigma2)?,
    })
}

/// `Phi(lambda) = pi^2 sigma^2 / (2 lambda^2) - lambda / 3`.
pub fn phi(lambda: f64, sigma2: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("phi needs lambda > 0, got {lambda}")));
    }
    Ok(rate_coefficient(sigma2) / (lambda * lambda) - lambda / 3.0)
}

/// Inverse of the decreasing map `Phi` on the branch where `Phi > 0`.
pub fn phi_inverse(theta: f64, sigma2: f64) -> Result<f64> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "phi_inverse needs theta > 0, got {theta}"
        )));
    }
    let phi_ = |l: f64| rate_coefficient(sigma2) / (l * l) - l / 3.0;
    let mut hi = cubic_constant(sigma2);
    let mut lo = hi;
    while phi_(lo) <= theta {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(Error::BracketFailure(format!("theta = {theta} out of range")));
        }
    }
    for _ in 0..200 {
        let mid = (0.5 * (lo.ln() + hi.ln())).exp();
        if mid <= lo || mid >= hi {
            break;
        }
        if phi_(mid) > theta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut l = 0.5 * (lo + hi);
    for _ in 0..3 {
        let d = -2.0 * rate_coefficient(sigma2) / (l * l * l) - 1.0 / 3.0;
        let next = l - (phi_(l) - theta) / d;
        if next > 0.0 {
            l = next;
        }
    }
    let residual = (phi_(l) - theta).abs();
    if residual > 1e-12 * theta.max(1.0) {
        return Err(Error::BracketFailure(format!(
            "phi_inverse residual {residual:e} at theta = {theta}"
        )));
    }
    Ok(l)
}

/// Walls `(f, g)` built from a positive selection profile `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionCurvePair {
    pub f_sel: Curve,
    pub g_sel: Curve,
    pub profile: Curve,
}

impl SelectionCurvePair {
    pub fn profile(&self) -> Result<BarrierProfile> {
        BarrierProfile::new(self.f_sel.clone(), self.g_sel.clone())
    }

    /// `g_1 = h_0 - (pi^2 sigma^2 / 2) int_0^1 ds / h_s^2`.
    pub fn terminal(&self) -> f64 {
        self.g_sel.eval(1.0)
    }
}

/// `g_t = h_0 - (pi^2 sigma^2 / 2) int_0^t ds / h_s^2` and `f_t = g_t - h_t`,
/// tabulated on at least `SELECTION_KNOTS` knots plus the knots of `h`.
pub fn selection_curves(h: &Curve, sigma2: f64) -> Result<SelectionCurvePair> {
    h.validate()?;
    let mut ts: Vec<f64> = (0..=SELECTION_KNOTS)
        .map(|i| i as f64 / SELECTION_KNOTS as f64)
        .collect();
    ts.extend(h.knots());
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let mut hv = Vec::with_capacity(ts.len());
    for &t in &ts {
        let v = h.eval(t);
        if !(v > 0.0) {
            return Err(Error::InvalidProfile(format!(
                "selection profile must be positive, h({t}) = {v}"
            )));
        }
        hv.push(v);
    }
    let coef = rate_coefficient(sigma2);
    let mut gs = Vec::with_capacity(ts.len());
    let mut acc = 0.0;
    gs.push(hv[0]);
    for w in ts.windows(2) {
        acc += quad::integrate(|s| h.eval(s).powi(-2), &[w[0], w[1]], 1e-13, 0.0)?.value;
        gs.push(hv[0] - coef * acc);
    }
    let fs = gs.iter().zip(&hv).map(|(g, h)| g - h).collect();
    Ok(SelectionCurvePair {
        f_sel: Curve::Table {
            ts: ts.clone(),
            values: fs,
        },
        g_sel: Curve::Table { ts, values: gs },
        profile: h.clone(),
    })
}

/// `inf_t (g_t + H_t(f, g))` over a 1025-point grid plus the profile's knots.
pub fn crossing_exponent(profile: &BarrierProfile, sigma2: f64) -> Result<f64> {
    let mut ts: Vec<f64> = (0..=1024).map(|i| i as f64 / 1024.0).collect();
    ts.extend(profile.knots());
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let hs = rate_table(profile, &ts, sigma2)?;
    Ok(ts
        .iter()
        .zip(&hs)
        .map(|(&t, &h)| profile.upper.eval(t) + h)
        .fold(f64::INFINITY, f64::min))
}
