//! Monte Carlo summaries: proportions with Wilson intervals, plain means,
//! and importance-weight means accumulated in log space.
//!
//! Every accumulator here merges associatively so that replica blocks can be
//! folded in a fixed order regardless of how many workers produced them.

use serde::{Deserialize, Serialize};

/// Normal quantile used for the default 95% intervals.
pub const Z95: f64 = 1.959_963_984_540_054;
/// Normal quantile for 99% intervals.
pub const Z99: f64 = 2.575_829_303_548_901;

/// Binomial count with Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
}

impl Proportion {
    pub fn new(successes: u64, trials: u64) -> Self {
        Proportion { successes, trials }
    }

    pub fn record(&mut self, hit: bool) {
        self.trials += 1;
        if hit {
            self.successes += 1;
        }
    }

    pub fn merge(&mut self, other: &Proportion) {
        self.successes += other.successes;
        self.trials += other.trials;
    }

    pub fn freq(&self) -> f64 {
        if self.trials == 0 {
            return f64::NAN;
        }
        self.successes as f64 / self.trials as f64
    }

    pub fn stderr(&self) -> f64 {
        let p = self.freq();
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }

    /// Wilson score interval at normal quantile `z`.
    pub fn wilson(&self, z: f64) -> (f64, f64) {
        if self.trials == 0 {
            return (0.0, 1.0);
        }
        let n = self.trials as f64;
        let p = self.freq();
        let z2 = z * z;
        let denom = 1.0 + z2 / n;
        let centre = (p + z2 / (2.0 * n)) / denom;
        let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
        ((centre - half).max(0.0), (centre + half).min(1.0))
    }

    pub fn is_zero_hit(&self) -> bool {
        self.successes == 0
    }
}

/// Mean and standard error of a real-valued sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: u64,
    /// Number of samples with a nonzero contribution.
    pub hits: u64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate {
            mean: value,
            stderr: 0.0,
            samples: 0,
            hits: 0,
        }
    }

    /// True when no sample contributed: the zero estimate carries no information.
    pub fn zero_hit(&self) -> bool {
        self.samples > 0 && self.hits == 0
    }

    pub fn ci(&self, z: f64) -> (f64, f64) {
        (self.mean - z * self.stderr, self.mean + z * self.stderr)
    }
}

/// Running sums for a plain sample mean.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanAccumulator {
    count: u64,
    hits: u64,
    sum: f64,
    sum_sq: f64,
}

impl MeanAccumulator {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        if x != 0.0 {
            self.hits += 1;
        }
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &MeanAccumulator) {
        self.count += other.count;
        self.hits += other.hits;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn estimate(&self) -> Estimate {
        let n = self.count as f64;
        let mean = self.sum / n;
        let var = if self.count > 1 {
            ((self.sum_sq / n - mean * mean) * n / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        Estimate {
            mean,
            stderr: (var / n).sqrt(),
            samples: self.count,
            hits: self.hits,
        }
    }
}

/// Accumulates nonnegative weights `w = exp(log_w)` without leaving log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogWeightAccumulator {
    count: u64,
    hits: u64,
    log_sum: f64,
    log_sum_sq: f64,
}

impl Default for LogWeightAccumulator {
    fn default() -> Self {
        LogWeightAccumulator {
            count: 0,
            hits: 0,
            log_sum: f64::NEG_INFINITY,
            log_sum_sq: f64::NEG_INFINITY,
        }
    }
}

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum(exp(xs)))`, returning `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_infinite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl LogWeightAccumulator {
    /// Records a sample with weight `exp(log_w)`.
    pub fn push_log(&mut self, log_w: f64) {
        self.count += 1;
        if log_w == f64::NEG_INFINITY {
            return;
        }
        self.hits += 1;
        self.log_sum = log_add(self.log_sum, log_w);
        self.log_sum_sq = log_add(self.log_sum_sq, 2.0 * log_w);
    }

    /// Records a sample contributing zero.
    pub fn push_zero(&mut self) {
        self.count += 1;
    }

    pub fn merge(&mut self, other: &LogWeightAccumulator) {
        self.count += other.count;
        self.hits += other.hits;
        self.log_sum = log_add(self.log_sum, other.log_sum);
        self.log_sum_sq = log_add(self.log_sum_sq, other.log_sum_sq);
    }

    pub fn estimate(&self) -> WeightedEstimate {
        let n = self.count as f64;
        let log_mean = self.log_sum - n.ln();
        // var = (E[w^2] - E[w]^2) * n/(n-1); relative form avoids overflow
        let log_second = self.log_sum_sq - n.ln();
        let rel = if self.hits == 0 {
            0.0
        } else {
            (log_second - 2.0 * log_mean).exp() - 1.0
        };
        let rel_var = if self.count > 1 {
            (rel.max(0.0)) * n / (n - 1.0) / n
        } else {
            0.0
        };
        let rel_stderr = rel_var.sqrt();
        WeightedEstimate {
            mean: log_mean.exp(),
            log_mean,
            stderr: log_mean.exp() * rel_stderr,
            rel_stderr,
            samples: self.count,
            hits: self.hits,
        }
    }
}

/// Importance-sampling mean reported both linearly and on the log scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedEstimate {
    pub mean: f64,
    pub log_mean: f64,
    pub stderr: f64,
    /// stderr / mean, finite even when `mean` underflows.
    pub rel_stderr: f64,
    pub samples: u64,
    pub hits: u64,
}

impl WeightedEstimate {
    pub fn zero_hit(&self) -> bool {
        self.hits == 0
    }

    pub fn exact(value: f64) -> Self {
        WeightedEstimate {
            mean: value,
            log_mean: value.ln(),
            stderr: 0.0,
            rel_stderr: 0.0,
            samples: 0,
            hits: 0,
        }
    }
}

/// Ordinary least squares `y = a + b x`, returning `(a, b)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

/// Median of a sample (average of the middle pair for even sizes).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Distribution-free confidence interval for the median from order statistics.
pub fn median_ci(xs: &[f64], z: f64) -> (f64, f64) {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    let half = 0.5 * z * n.sqrt();
    let lo = ((n / 2.0 - half).floor().max(0.0)) as usize;
    let hi = ((n / 2.0 + half).ceil() as usize).min(v.len() - 1);
    (v[lo], v[hi])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_contains_freq() {
        let p = Proportion::new(30, 100);
        let (lo, hi) = p.wilson(Z95);
        assert!(lo < 0.3 && 0.3 < hi);
        let z = Proportion::new(0, 50);
        let (lo, hi) = z.wilson(Z95);
        assert!(lo.abs() < 1e-12);
        assert!(hi > 0.0 && hi < 0.1);
    }

    #[test]
    fn log_weights_match_linear() {
        let ws: [f64; 5] = [0.5, 2.0, 0.0, 1.25, 3.0];
        let mut acc = LogWeightAccumulator::default();
        let mut lin = MeanAccumulator::default();
        for &w in &ws {
            if w == 0.0 {
                acc.push_zero()
            } else {
                acc.push_log(w.ln())
            }
            lin.push(w);
        }
        let a = acc.estimate();
        let b = lin.estimate();
        assert!((a.mean - b.mean).abs() < 1e-12);
        assert!((a.stderr - b.stderr).abs() < 1e-12);
        assert_eq!(a.hits, 4);
    }

    #[test]
    fn log_weights_survive_underflow() {
        let mut acc = LogWeightAccumulator::default();
        acc.push_log(-2000.0);
        acc.push_log(-2001.0);
        let e = acc.estimate();
        assert!(e.mean == 0.0);
        assert!((e.log_mean - (-2000.0 + (1.0 + (-1.0f64).exp()).ln() - 2f64.ln())).abs() < 1e-12);
        assert!(e.rel_stderr > 0.0 && e.rel_stderr.is_finite());
    }

    #[test]
    fn merge_is_order_free_for_counts() {
        let mut a = MeanAccumulator::default();
        let mut b = MeanAccumulator::default();
        a.push(1.0);
        b.push(3.0);
        let mut ab = a;
        ab.merge(&b);
        assert_eq!(ab.estimate().mean, 2.0);
    }

    #[test]
    fn fit_recovers_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 1.5 - 2.0 * x).collect();
        let (a, b) = linear_fit(&xs, &ys);
        assert!((a - 1.5).abs() < 1e-12 && (b + 2.0).abs() < 1e-12);
    }

    #[test]
    fn ci_width_scales_as_inverse_root_reps() {
        let width = |n: u64| {
            let (lo, hi) = Proportion::new(n * 3 / 10, n).wilson(Z95);
            hi - lo
        };
        // four times the replicas halves the width; twice gives 1/sqrt 2
        assert!((width(40_000) / width(160_000) - 2.0).abs() < 1e-3);
        assert!((width(40_000) / width(80_000) - 2f64.sqrt()).abs() < 1e-3);
    }
}
