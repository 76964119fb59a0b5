//! Gumbel norming of Gaussian maxima and the variance scaling of the
//! maximum and the median of `n` independent standard normals.
//!
//! Replications of the maximum and the median are drawn exactly from their
//! order-statistic laws: `M_n = Φ^{-1}(U^{1/n})`, evaluated through the upper
//! tail `1 - U^{1/n}` so that large `n` keeps full precision, and the median
//! of `2k + 1` normals as `Φ^{-1}(B)` with `B ~ Beta(k + 1, k + 1)`.
//! [`brute_force_sample`] draws full vectors instead and serves as a
//! cross-check.

use std::io;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{moments_of, orlicz_norm, McParams};
use crate::rng::{derive_seed, open_unit, stream_rng, CHUNK_ROWS};
use crate::stats::{ks_statistic, normal_cdf, normal_quantile, normal_upper_quantile, skewness, sorted_quantile, EstimateWithCI};

/// `a_n = √(2 log n)` and `b_n = a_n - (log 4π + log log n)/(2 a_n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormingConstants {
    pub n: usize,
    pub a_n: f64,
    pub b_n: f64,
}

/// Norming constants for `n ≥ 3`.
pub fn norming(n: usize) -> Result<NormingConstants> {
    if n < 3 {
        return Err(Error::param("n", format!("norming needs n >= 3, got {n}")));
    }
    let l = (n as f64).ln();
    let a_n = (2.0 * l).sqrt();
    let b_n = a_n - ((4.0 * std::f64::consts::PI).ln() + l.ln()) / (2.0 * a_n);
    Ok(NormingConstants { n, a_n, b_n })
}

impl NormingConstants {
    /// `a_n (m - b_n)`.
    pub fn renormalize(&self, m: f64) -> f64 {
        self.a_n * (m - self.b_n)
    }
}

/// CDF `exp(-e^{-x})` of the standard Gumbel law.
pub fn gumbel_cdf(x: f64) -> f64 {
    (-(-x).exp()).exp()
}

pub fn gumbel_quantile(p: f64) -> f64 {
    -(-p.ln()).ln()
}

/// Median `-log log 2` of the standard Gumbel law.
pub fn gumbel_median() -> f64 {
    gumbel_quantile(0.5)
}

/// Skewness `12√6 ζ(3)/π³` of the standard Gumbel law.
pub fn gumbel_skewness() -> f64 {
    const ZETA3: f64 = 1.202_056_903_159_594_2;
    12.0 * 6f64.sqrt() * ZETA3 / std::f64::consts::PI.powi(3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Max,
    Median,
}

impl Statistic {
    pub fn name(self) -> &'static str {
        match self {
            Statistic::Max => "max",
            Statistic::Median => "median",
        }
    }

    fn validate(self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if self == Statistic::Median && n % 2 == 0 {
            return Err(Error::param("n", format!("median needs odd n, got {n}")));
        }
        Ok(())
    }

    /// `log n` for the maximum, `n` for the median.
    pub fn scale(self, n: usize) -> f64 {
        match self {
            Statistic::Max => (n as f64).ln(),
            Statistic::Median => n as f64,
        }
    }
}

/// `count` exact replications of the statistic of `n` standard normals.
pub fn sample_statistic(statistic: Statistic, n: usize, count: usize, seed: u64) -> Result<Vec<f64>> {
    statistic.validate(n)?;
    let beta = match statistic {
        Statistic::Median => {
            let k = (n / 2 + 1) as f64;
            Some(Beta::new(k, k).map_err(|e| Error::param("n", e.to_string()))?)
        }
        Statistic::Max => None,
    };
    let inv_n = 1.0 / n as f64;
    let mut out = vec![0.0; count];
    out.par_chunks_mut(CHUNK_ROWS).enumerate().for_each(|(c, chunk)| {
        let mut rng = stream_rng(seed, c as u64);
        for v in chunk.iter_mut() {
            *v = match &beta {
                None => {
                    // 1 - U^{1/n} without cancellation
                    let u = open_unit(&mut rng);
                    normal_upper_quantile(-(u.ln() * inv_n).exp_m1())
                }
                Some(b) => normal_quantile(b.sample(&mut rng)),
            };
        }
    });
    Ok(out)
}

/// Replications computed from full vectors of `n` normals.
pub fn brute_force_sample(statistic: Statistic, n: usize, count: usize, seed: u64) -> Result<Vec<f64>> {
    statistic.validate(n)?;
    let mut out = vec![0.0; count];
    out.par_chunks_mut(CHUNK_ROWS).enumerate().for_each(|(c, chunk)| {
        let mut rng = stream_rng(seed, c as u64);
        let mut x = vec![0.0; n];
        for v in chunk.iter_mut() {
            x.iter_mut().for_each(|xi| *xi = rng.sample(StandardNormal));
            *v = match statistic {
                Statistic::Max => x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Statistic::Median => *x.select_nth_unstable_by(n / 2, f64::total_cmp).1,
            };
        }
    });
    Ok(out)
}

/// One row of a scaling curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub var_hat: f64,
    pub var_hat_se: f64,
    pub scaled: f64,
    /// KS distance of the normalized statistic to its limit law: Gumbel
    /// after `a_n(M_n - b_n)` for the maximum, `N(0, π/2)` after `√n·` for
    /// the median. Empty for maxima with `n < 3`.
    pub ks: Option<f64>,
}

/// `Var̂` and `Var̂·scale(n)` along an increasing list of `n`. Each `n` uses
/// its own seed derived from `p.seed`.
pub fn scaling_experiment(statistic: Statistic, ns: &[usize], p: &McParams) -> Result<Vec<ScalingRow>> {
    p.validate()?;
    if ns.is_empty() {
        return Err(Error::param("n_list", "empty"));
    }
    if ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("n_list", "must be strictly increasing"));
    }
    ns.iter()
        .map(|&n| {
            let seed = derive_seed(p.seed, &format!("{}:{n}", statistic.name()));
            let xs = sample_statistic(statistic, n, p.samples, seed)?;
            let var = moments_of(&xs, None, p, seed)?.variance;
            let ks = match statistic {
                Statistic::Max if n >= 3 => {
                    let c = norming(n)?;
                    let r: Vec<f64> = xs.iter().map(|&m| c.renormalize(m)).collect();
                    Some(ks_statistic(&r, gumbel_cdf))
                }
                Statistic::Max => None,
                Statistic::Median => {
                    let s = (n as f64).sqrt() / (std::f64::consts::PI / 2.0).sqrt();
                    let r: Vec<f64> = xs.iter().map(|&m| m * s).collect();
                    Some(ks_statistic(&r, normal_cdf))
                }
            };
            Ok(ScalingRow {
                n,
                var_hat: var.value,
                var_hat_se: var.std_error,
                scaled: var.value * statistic.scale(n),
                ks,
            })
        })
        .collect()
}

/// Writes rows as CSV with header `n,var_hat,var_hat_se,scaled,ks`.
pub fn write_scaling_csv<W: io::Write>(rows: &[ScalingRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_scaling_csv<R: io::Read>(r: R) -> Result<Vec<ScalingRow>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqPoint {
    pub p: f64,
    pub empirical: f64,
    pub gumbel: f64,
}

/// Fit of renormalized maxima `a_n(M_n - b_n)` to the Gumbel law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GumbelFit {
    pub n: usize,
    pub samples: usize,
    pub seed: u64,
    pub ks_statistic: f64,
    pub median: f64,
    pub skewness: f64,
    /// Quantiles at `p = 0.01, ..., 0.99`.
    pub qq_table: Vec<QqPoint>,
}

pub fn gumbel_fit(n: usize, p: &McParams) -> Result<GumbelFit> {
    p.validate()?;
    let c = norming(n)?;
    let seed = derive_seed(p.seed, &format!("gumbel:{n}"));
    let mut r: Vec<f64> = sample_statistic(Statistic::Max, n, p.samples, seed)?
        .into_iter()
        .map(|m| c.renormalize(m))
        .collect();
    let ks = ks_statistic(&r, gumbel_cdf);
    let skew = skewness(&r);
    r.sort_by(f64::total_cmp);
    let qq_table = (1..=99)
        .map(|k| {
            let q = k as f64 / 100.0;
            QqPoint {
                p: q,
                empirical: sorted_quantile(&r, q),
                gumbel: gumbel_quantile(q),
            }
        })
        .collect();
    Ok(GumbelFit {
        n,
        samples: p.samples,
        seed,
        ks_statistic: ks,
        median: sorted_quantile(&r, 0.5),
        skewness: skew,
        qq_table,
    })
}

/// `‖∇ median‖²_φ = Σ_i ‖1{x_i is the median}‖²_φ` for odd `n`, from
/// `p.samples` full vectors. Only the index of the median is kept per
/// replication, so memory stays `O(n + samples)`.
pub fn median_gradient_orlicz_sq(n: usize, p: &McParams) -> Result<EstimateWithCI> {
    Statistic::Median.validate(n)?;
    p.validate()?;
    let seed = derive_seed(p.seed, &format!("median_gradient:{n}"));
    let chunks = p.samples.div_ceil(CHUNK_ROWS);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let rows = CHUNK_ROWS.min(p.samples - c * CHUNK_ROWS);
            let mut hits = vec![0usize; n];
            let mut x: Vec<(f64, usize)> = vec![(0.0, 0); n];
            for _ in 0..rows {
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi = (rng.sample(StandardNormal), i);
                }
                let (_, m, _) = x.select_nth_unstable_by(n / 2, |a, b| a.0.total_cmp(&b.0));
                hits[m.1] += 1;
            }
            hits
        })
        .reduce(|| vec![0usize; n], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
    let mut value = 0.0;
    let mut se = 0.0;
    let mut col = vec![0.0; p.samples];
    for &h in &counts {
        if h == 0 {
            continue;
        }
        col[..h].fill(1.0);
        let e = orlicz_norm(&col, None, p, seed)?;
        col[..h].fill(0.0);
        value += e.value * e.value;
        se += 2.0 * e.value * e.std_error;
    }
    Ok(EstimateWithCI::normal(value, se, p.confidence, p.samples, seed, "median_grad_orlicz_sq").clamp_ci(0.0, f64::INFINITY))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_two_sample, ks_two_sample_critical_1pct};
    use approx::assert_relative_eq;

    #[test]
    fn norming_values() {
        assert!((norming(16).unwrap().a_n - 2.355).abs() < 1e-3);
        assert!((norming(100).unwrap().a_n - 3.035).abs() < 1e-3);
        assert!(norming(1000).unwrap().a_n > norming(100).unwrap().a_n);
        assert!(norming(2).is_err());
        for n in [3, 10, 1000, 1 << 20] {
            let c = norming(n).unwrap();
            assert!(c.b_n < c.a_n);
        }
    }

    #[test]
    fn gumbel_constants() {
        assert_relative_eq!(gumbel_median(), 0.366_512_920_581_664_3, epsilon = 1e-12);
        assert_relative_eq!(gumbel_cdf(gumbel_quantile(0.3)), 0.3, epsilon = 1e-12);
        assert!((gumbel_skewness() - 1.1395).abs() < 1e-4);
    }

    #[test]
    fn exact_samplers_match_brute_force() {
        for (s, n) in [(Statistic::Max, 2), (Statistic::Max, 50), (Statistic::Median, 1), (Statistic::Median, 21)] {
            let a = sample_statistic(s, n, 20_000, 1).unwrap();
            let b = brute_force_sample(s, n, 20_000, 2).unwrap();
            let d = ks_two_sample(&a, &b);
            assert!(d < ks_two_sample_critical_1pct(a.len(), b.len()), "{s:?} n={n}: {d}");
        }
    }

    #[test]
    fn max_of_two_variance() {
        let r = scaling_experiment(Statistic::Max, &[2], &McParams::new(200_000, 4)).unwrap();
        let v = 1.0 - 1.0 / std::f64::consts::PI;
        assert!((r[0].var_hat - v).abs() < 4.0 * r[0].var_hat_se, "{:?}", r[0]);
        assert!(r[0].ks.is_none());
    }

    #[test]
    fn median_variance_matches_order_statistic_oracle() {
        // oracle: Var of Φ^{-1}(B), B ~ Beta(k+1, k+1), by quadrature in the
        // normal variable: density of the median is n C(n-1, k) φ Φ^k (1-Φ)^k
        let n = 21usize;
        let k = n / 2;
        let gl = crate::quadrature::gauss_legendre(400, -8.0, 8.0);
        let logc = (1..=n).map(|i| (i as f64).ln()).sum::<f64>() - 2.0 * (1..=k).map(|i| (i as f64).ln()).sum::<f64>();
        let dens = |x: f64| {
            let f = normal_cdf(x);
            (logc - 0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln() + k as f64 * (f * (1.0 - f)).ln()).exp()
        };
        let mass = gl.integrate(dens);
        let var = gl.integrate(|x| x * x * dens(x));
        assert_relative_eq!(mass, 1.0, epsilon = 1e-9);
        let r = scaling_experiment(Statistic::Median, &[n], &McParams::new(200_000, 5)).unwrap();
        assert!((r[0].var_hat - var).abs() < 4.0 * r[0].var_hat_se, "{} vs {var}", r[0].var_hat);
    }

    #[test]
    fn scaling_validation() {
        let p = McParams::new(100, 0);
        assert!(scaling_experiment(Statistic::Median, &[101, 400], &p).is_err());
        assert!(scaling_experiment(Statistic::Max, &[8, 4], &p).is_err());
        assert!(scaling_experiment(Statistic::Max, &[], &p).is_err());
    }

    #[test]
    fn max_variance_decreases() {
        let ns = [16, 256, 4096, 65536];
        let r = scaling_experiment(Statistic::Max, &ns, &McParams::new(100_000, 6)).unwrap();
        for w in r.windows(2) {
            let slack = 3.0 * (w[0].var_hat_se.powi(2) + w[1].var_hat_se.powi(2)).sqrt();
            assert!(w[1].var_hat < w[0].var_hat + slack);
        }
    }

    #[test]
    fn ks_trend_over_seeds() {
        let med = |n: usize| {
            let mut ks: Vec<f64> = (0..5).map(|s| gumbel_fit(n, &McParams::new(20_000, s)).unwrap().ks_statistic).collect();
            ks.sort_by(f64::total_cmp);
            ks[2]
        };
        assert!(med(10_000) < med(100));
    }

    #[test]
    fn qq_table_shape() {
        let g = gumbel_fit(1000, &McParams::new(10_000, 1)).unwrap();
        assert_eq!(g.qq_table.len(), 99);
        assert!(g.qq_table.windows(2).all(|w| w[0].empirical <= w[1].empirical));
        assert!(g.skewness > 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let rows = scaling_experiment(Statistic::Max, &[2, 128], &McParams::new(1000, 1)).unwrap();
        let mut buf = Vec::new();
        write_scaling_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("n,var_hat,var_hat_se,scaled,ks\n"));
        assert_eq!(read_scaling_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn median_gradient_orlicz_is_indicator_norm() {
        // each coordinate is the median with probability 1/n, so
        // ‖∇ median‖²_φ ≈ n / x² with φ(x) = n
        let n = 21;
        let e = median_gradient_orlicz_sq(n, &McParams::new(50_000, 2)).unwrap();
        let (mut lo, mut hi) = (1.0f64, 100.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid / (std::f64::consts::E + mid).ln() < n as f64 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = n as f64 / (lo * lo);
        assert!((e.value - oracle).abs() < 0.05 * oracle, "{} vs {oracle}", e.value);
    }
}
