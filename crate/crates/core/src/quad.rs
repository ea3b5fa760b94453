//! One-dimensional quadrature: globally adaptive Gauss-Kronrod (7/15 points)
//! and an independent adaptive Simpson rule used for cross-checks.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub value: f64,
    pub error: f64,
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Integrates `f` over `[points[0], points.last()]`, never placing a panel
/// across an interior point of `points`. Panels are bisected in order of
/// largest error estimate until the total estimate meets `max(abs, rel*|I|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, points: &[f64], rel: f64, abs: f64) -> Result<Quad> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("quadrature needs an interval".into()));
    }
    let mut panels: Vec<(f64, f64, f64, f64)> = Vec::new();
    for w in points.windows(2) {
        if w[1] > w[0] {
            let (v, e) = gk15(&f, w[0], w[1]);
            panels.push((w[0], w[1], v, e));
        }
    }
    loop {
        let value: f64 = panels.iter().map(|p| p.2).sum();
        let error: f64 = panels.iter().map(|p| p.3).sum();
        if !value.is_finite() {
            return Err(Error::QuadratureFailed(format!(
                "non-finite integrand on [{}, {}]",
                points[0],
                points[points.len() - 1]
            )));
        }
        if error <= abs.max(rel * value.abs()) {
            return Ok(Quad { value, error });
        }
        if panels.len() >= MAX_INTERVALS {
            return Err(Error::QuadratureFailed(format!(
                "error estimate {error:e} after {MAX_INTERVALS} panels (value {value})"
            )));
        }
        let (i, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty");
        let (a, b, _, _) = panels[i];
        let m = 0.5 * (a + b);
        if !(m > a && m < b) {
            // panel at floating-point resolution: accept what we have
            return Ok(Quad { value, error });
        }
        let (v1, e1) = gk15(&f, a, m);
        let (v2, e2) = gk15(&f, m, b);
        panels[i] = (a, m, v1, e1);
        panels.push((m, b, v2, e2));
    }
}

/// Adaptive Simpson rule with Richardson correction.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64> {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 {
            return Err(Error::QuadratureFailed(format!(
                "simpson recursion limit on [{a}, {b}]"
            )));
        }
        if diff.abs() <= 15.0 * tol || b - a < 1e-14 {
            return Ok(left + right + diff / 15.0);
        }
        Ok(rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
            + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
    }
    if b <= a {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let v = rec(&f, a, b, fa, fm, fb, whole, tol, 60)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::QuadratureFailed("non-finite simpson value".into()))
    }
}
