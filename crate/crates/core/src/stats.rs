//! Scalar estimates with confidence intervals and the small statistical
//! toolbox behind them: pairwise sums, jackknife, Clopper–Pearson intervals
//! and Kolmogorov–Smirnov distances.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::{erf_inv, erfc_inv};

use crate::error::{Error, Result};

/// Default two-sided confidence level.
pub const DEFAULT_CONFIDENCE: f64 = 0.99;

/// A scalar estimate with standard error and a two-sided confidence interval.
///
/// Quadrature and closed-form values carry `std_error = 0` and a zero-width
/// interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub value: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence: f64,
    pub count: usize,
    pub seed: u64,
    pub estimator: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl EstimateWithCI {
    /// Exact value (closed form or deterministic quadrature).
    pub fn exact(value: f64, estimator: &str) -> Self {
        EstimateWithCI {
            value,
            std_error: 0.0,
            ci_low: value,
            ci_high: value,
            confidence: DEFAULT_CONFIDENCE,
            count: 0,
            seed: 0,
            estimator: estimator.to_string(),
            flags: Vec::new(),
        }
    }

    /// Normal-approximation interval `value ± z·se`.
    pub fn normal(value: f64, std_error: f64, confidence: f64, count: usize, seed: u64, estimator: &str) -> Self {
        let se = if std_error.is_finite() { std_error.max(0.0) } else { f64::MAX };
        let half = z_two_sided(confidence) * se;
        EstimateWithCI {
            value,
            std_error: se,
            ci_low: value - half,
            ci_high: value + half,
            confidence,
            count,
            seed,
            estimator: estimator.to_string(),
            flags: Vec::new(),
        }
    }

    pub fn with_count(mut self, count: usize) -> Self {
        self.count = count;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_flag(mut self, flag: impl Into<String>) -> Self {
        self.flags.push(flag.into());
        self
    }

    /// Clamps the interval to `[lo, hi]` (used for quantities with a known range).
    pub fn clamp_ci(mut self, lo: f64, hi: f64) -> Self {
        self.ci_low = self.ci_low.max(lo);
        self.ci_high = self.ci_high.min(hi);
        self
    }

    /// Multiplies value, error and interval by a constant.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.value *= factor;
        self.std_error *= factor.abs();
        let (a, b) = (self.ci_low * factor, self.ci_high * factor);
        self.ci_low = a.min(b);
        self.ci_high = a.max(b);
        self
    }

    pub fn is_exact(&self) -> bool {
        self.std_error == 0.0
    }
}

/// Two-sided standard normal quantile: `P(|Z| ≤ z) = confidence`.
pub fn z_two_sided(confidence: f64) -> f64 {
    std::f64::consts::SQRT_2 * erf_inv(confidence)
}

/// Standard normal quantile function, accurate in both tails.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
    }
}

/// Standard normal upper quantile: `z` with `P(Z > z) = q`, accurate for tiny `q`.
pub fn normal_upper_quantile(q: f64) -> f64 {
    -normal_quantile(q)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Sum with a fixed pairwise reduction tree.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if xs.len() <= BLOCK {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Mean, unbiased variance and standard error of the mean.
#[derive(Debug, Clone, Copy)]
pub struct Summary {
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub count: usize,
}

impl Summary {
    /// Summarizes `values`. With `weights` (quadrature) the mean is the
    /// weighted sum and the standard error is zero.
    pub fn of(values: &[f64], weights: Option<&[f64]>) -> Summary {
        let count = values.len();
        match weights {
            Some(w) => {
                let prods: Vec<f64> = values.iter().zip(w).map(|(v, w)| v * w).collect();
                let mean = pairwise_sum(&prods);
                let sq: Vec<f64> = values.iter().zip(w).map(|(v, w)| w * (v - mean) * (v - mean)).collect();
                Summary {
                    mean,
                    variance: pairwise_sum(&sq),
                    std_error: 0.0,
                    count,
                }
            }
            None => {
                let n = count as f64;
                let mean = pairwise_sum(values) / n;
                let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
                let variance = if count > 1 { pairwise_sum(&sq) / (n - 1.0) } else { 0.0 };
                Summary {
                    mean,
                    variance,
                    std_error: (variance / n).sqrt(),
                    count,
                }
            }
        }
    }
}

/// Sample covariance (unbiased) or weighted covariance.
pub fn covariance(a: &[f64], b: &[f64], weights: Option<&[f64]>) -> f64 {
    let ma = Summary::of(a, weights).mean;
    let mb = Summary::of(b, weights).mean;
    match weights {
        Some(w) => {
            let p: Vec<f64> = a.iter().zip(b).zip(w).map(|((x, y), w)| w * (x - ma) * (y - mb)).collect();
            pairwise_sum(&p)
        }
        None => {
            let p: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
            pairwise_sum(&p) / (a.len() as f64 - 1.0).max(1.0)
        }
    }
}

/// Plug-in variance with a leave-one-out jackknife standard error.
///
/// Returns `(variance, std_error)`; the point value uses the `N - 1` divisor.
pub fn variance_jackknife(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n < 3 {
        return (Summary::of(values, None).variance, f64::INFINITY);
    }
    let nf = n as f64;
    let mean = pairwise_sum(values) / nf;
    let c: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let s1 = pairwise_sum(&c);
    let sq: Vec<f64> = c.iter().map(|v| v * v).collect();
    let s2 = pairwise_sum(&sq);
    let full = (s2 - s1 * s1 / nf) / (nf - 1.0);
    let m = nf - 1.0;
    let loo: Vec<f64> = c
        .iter()
        .map(|&x| {
            let a = s1 - x;
            let b = s2 - x * x;
            (b - a * a / m) / (m - 1.0)
        })
        .collect();
    let loo_mean = pairwise_sum(&loo) / nf;
    let dev: Vec<f64> = loo.iter().map(|v| (v - loo_mean) * (v - loo_mean)).collect();
    let se = ((nf - 1.0) / nf * pairwise_sum(&dev)).sqrt();
    (full, se)
}

/// Exact (Clopper–Pearson) two-sided interval for a binomial proportion.
pub fn clopper_pearson(hits: usize, trials: usize, confidence: f64) -> Result<(f64, f64)> {
    if trials == 0 || hits > trials {
        return Err(Error::param("trials", format!("{hits} hits out of {trials} trials")));
    }
    if !(0.0..1.0).contains(&confidence) || confidence == 0.0 {
        return Err(Error::param("confidence", format!("{confidence} not in (0, 1)")));
    }
    let alpha = 1.0 - confidence;
    let k = hits as f64;
    let n = trials as f64;
    let lo = if hits == 0 { 0.0 } else { beta_quantile(k, n - k + 1.0, alpha / 2.0) };
    let hi = if hits == trials { 1.0 } else { beta_quantile(k + 1.0, n - k, 1.0 - alpha / 2.0) };
    Ok((lo, hi))
}

/// Quantile of Beta(a, b) by bisection on the regularized incomplete beta.
fn beta_quantile(a: f64, b: f64, p: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One-sample Kolmogorov–Smirnov distance of `samples` to a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic two-sample KS critical value at level 1%.
pub fn ks_two_sample_critical_1pct(na: usize, nb: usize) -> f64 {
    let (a, b) = (na as f64, nb as f64);
    1.628 * ((a + b) / (a * b)).sqrt()
}

/// Empirical quantile (type 7 interpolation) of already sorted data.
pub fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sample skewness (moment estimator).
pub fn skewness(values: &[f64]) -> f64 {
    let s = Summary::of(values, None);
    let n = values.len() as f64;
    let m2: Vec<f64> = values.iter().map(|v| (v - s.mean).powi(2)).collect();
    let m3: Vec<f64> = values.iter().map(|v| (v - s.mean).powi(3)).collect();
    let m2 = pairwise_sum(&m2) / n;
    let m3 = pairwise_sum(&m3) / n;
    m3 / m2.powf(1.5)
}
