//! Estimators for moments, entropy, Dirichlet forms, tail probabilities,
//! the Young function `φ`, Orlicz norms and the semigroup representations
//! of variance and entropy.
//!
//! Most estimators take a [`SampleBatch`]; a weighted batch (a quadrature
//! design) yields exact values with zero standard error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functions::TestFunction;
use crate::measures::{Family, ProductMeasure, SampleBatch};
use crate::quadrature::gauss_legendre;
use crate::rng::{derive_seed, stream_rng, CHUNK_ROWS};
use crate::semigroup::{Backend, SemigroupOperator};
use crate::stats::{clopper_pearson, pairwise_sum, variance_jackknife, EstimateWithCI, Summary, DEFAULT_CONFIDENCE};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Monte Carlo parameters shared by estimators and checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McParams {
    pub samples: usize,
    pub seed: u64,
    pub confidence: f64,
    pub bisect_tol: f64,
}

impl Default for McParams {
    fn default() -> Self {
        McParams {
            samples: 100_000,
            seed: 0,
            confidence: DEFAULT_CONFIDENCE,
            bisect_tol: 1e-4,
        }
    }
}

impl McParams {
    pub fn new(samples: usize, seed: u64) -> Self {
        McParams {
            samples,
            seed,
            ..Default::default()
        }
    }

    /// Same parameters with a seed derived from `label`.
    pub fn derived(&self, label: &str) -> Self {
        McParams {
            seed: derive_seed(self.seed, label),
            ..*self
        }
    }

    /// Draws `samples` points from `measure` with this seed.
    pub fn batch(&self, measure: &ProductMeasure) -> Result<SampleBatch> {
        measure.sample(self.samples, self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::param("samples", "need at least 2 samples"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::param("confidence", format!("{} not in (0, 1)", self.confidence)));
        }
        if !(self.bisect_tol > 0.0 && self.bisect_tol < 1.0) {
            return Err(Error::param("bisect_tol", format!("{} not in (0, 1)", self.bisect_tol)));
        }
        Ok(())
    }
}

fn estimate(values: &[f64], weights: Option<&[f64]>, p: &McParams, seed: u64, tag: &str) -> EstimateWithCI {
    let s = Summary::of(values, weights);
    if weights.is_some() {
        EstimateWithCI::exact(s.mean, tag).with_count(values.len())
    } else {
        EstimateWithCI::normal(s.mean, s.std_error, p.confidence, values.len(), seed, tag)
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(k) => Err(Error::NonFinite(format!("{what} at sample {k}"))),
    }
}

fn check_arity(f: &TestFunction, batch: &SampleBatch) -> Result<()> {
    if f.arity() != batch.dim() {
        return Err(Error::param("f", format!("arity {} does not match dimension {}", f.arity(), batch.dim())));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Young function and Orlicz norm
// ---------------------------------------------------------------------------

/// `1 / log(e + 1)`, the slope of `φ` on `[0, 1)`.
pub fn phi_slope_at_zero() -> f64 {
    1.0 / (std::f64::consts::E + 1.0).ln()
}

/// `φ(x) = x²/log(e + x)` for `x ≥ 1`, `x/log(e + 1)` on `[0, 1)`.
pub fn phi(x: f64) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::Domain(format!("phi is defined on [0, inf), got {x}")));
    }
    Ok(phi_unchecked(x))
}

fn phi_unchecked(x: f64) -> f64 {
    if x >= 1.0 {
        x * x / (std::f64::consts::E + x).ln()
    } else {
        x * phi_slope_at_zero()
    }
}

/// Right derivative of `φ`.
pub fn phi_derivative(x: f64) -> f64 {
    if x >= 1.0 {
        let l = (std::f64::consts::E + x).ln();
        (2.0 * x * l - x * x / (std::f64::consts::E + x)) / (l * l)
    } else {
        phi_slope_at_zero()
    }
}

/// Luxemburg norm `inf{c > 0 : E φ(|h|/c) ≤ 1}` of the sampled values of
/// `h`, by bisection on `c` (relative tolerance `tol`) with the same values
/// reused for every `c`. The standard error comes from the delta method
/// applied to `c ↦ Ê φ(|h|/c) = 1`.
pub fn orlicz_norm(values: &[f64], weights: Option<&[f64]>, p: &McParams, seed: u64) -> Result<EstimateWithCI> {
    check_finite(values, "Orlicz argument")?;
    let tag = "orlicz_bisection";
    let total = values.len();
    if total == 0 {
        return Err(Error::param("values", "empty sample"));
    }
    // zero entries contribute φ(0) = 0 and can be skipped
    let (abs, w): (Vec<f64>, Vec<f64>) = match weights {
        Some(ws) => values.iter().zip(ws).filter(|(v, _)| **v != 0.0).map(|(v, w)| (v.abs(), *w)).unzip(),
        None => values.iter().filter(|v| **v != 0.0).map(|v| (v.abs(), 1.0 / total as f64)).unzip(),
    };
    if abs.is_empty() {
        return Ok(EstimateWithCI::exact(0.0, tag).with_count(total).with_seed(seed));
    }
    let mean_phi = |c: f64| -> f64 {
        let t: Vec<f64> = abs.iter().zip(&w).map(|(a, w)| w * phi_unchecked(a / c)).collect();
        pairwise_sum(&t)
    };
    let max = abs.iter().copied().fold(0.0, f64::max);
    // φ(x) < 1 on [0, 1] so E φ(|h|/max) < 1
    let mut hi = max;
    let mut lo = hi / 2.0;
    let mut halvings = 0;
    while mean_phi(lo) <= 1.0 {
        hi = lo;
        lo /= 2.0;
        halvings += 1;
        if halvings > 1100 || lo == 0.0 {
            return Err(Error::Bracket(format!("no c with E phi(|h|/c) > 1 down to {lo:e}")));
        }
    }
    while hi - lo > p.bisect_tol * hi * 0.5 {
        let mid = 0.5 * (lo + hi);
        if mean_phi(mid) <= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let c = hi;
    if weights.is_some() {
        return Ok(EstimateWithCI::exact(c, tag).with_count(total));
    }
    // delta method: Var(Ĝ(c)) / G'(c)²
    let nf = total as f64;
    let mut vals: Vec<f64> = abs.iter().map(|a| phi_unchecked(a / c)).collect();
    vals.resize(total, 0.0);
    let s = Summary::of(&vals, None);
    let dg: Vec<f64> = abs.iter().map(|a| phi_derivative(a / c) * a / (c * c)).collect();
    let dg = pairwise_sum(&dg) / nf;
    let se = if dg > 0.0 { s.std_error / dg } else { f64::INFINITY };
    Ok(EstimateWithCI::normal(c, se, p.confidence, total, seed, tag))
}

fn directional_orlicz_sq(
    f: &TestFunction,
    batch: &SampleBatch,
    p: &McParams,
    scale: impl Fn(f64) -> f64 + Sync + Send,
    tag: &str,
) -> Result<EstimateWithCI> {
    check_arity(f, batch)?;
    let n = batch.dim();
    let grads: Vec<f64> = batch
        .points()
        .par_chunks_exact(n)
        .flat_map_iter(|x| {
            let mut g = f.gradient(x);
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi *= scale(*xi);
            }
            g
        })
        .collect();
    let norms: Vec<EstimateWithCI> = (0..n)
        .into_par_iter()
        .map(|i| {
            let col: Vec<f64> = grads.iter().skip(i).step_by(n).copied().collect();
            orlicz_norm(&col, batch.weights(), p, batch.seed())
        })
        .collect::<Result<_>>()?;
    let value: f64 = norms.iter().map(|e| e.value * e.value).sum();
    if batch.is_quadrature() {
        return Ok(EstimateWithCI::exact(value, tag).with_count(batch.len()));
    }
    // coordinates share the batch; add the per-coordinate errors linearly
    let se: f64 = norms.iter().map(|e| 2.0 * e.value * e.std_error).sum();
    Ok(EstimateWithCI::normal(value, se, p.confidence, batch.len(), batch.seed(), tag).clamp_ci(0.0, f64::INFINITY))
}

/// `‖∇f‖²_φ = Σ_i ‖∂_i f‖²_φ` on one shared batch.
pub fn grad_orlicz_sq(f: &TestFunction, batch: &SampleBatch, p: &McParams) -> Result<EstimateWithCI> {
    directional_orlicz_sq(f, batch, p, |_| 1.0, "grad_orlicz_sq")
}

/// `‖Γf‖²_φ = Σ_i ‖√x_i ∂_i f‖²_φ` for the exponential family.
pub fn gamma_orlicz_sq(f: &TestFunction, batch: &SampleBatch, p: &McParams) -> Result<EstimateWithCI> {
    directional_orlicz_sq(f, batch, p, |x| x.max(0.0).sqrt(), "gamma_orlicz_sq")
}

/// `Σ_i ‖∂_i f‖₂² / (1 + log(‖∂_i f‖₂ / ‖∂_i f‖₁))` with unit constant.
/// Coordinates with `‖∂_i f‖₁ = 0` contribute nothing.
pub fn l1l2_bound(f: &TestFunction, batch: &SampleBatch, p: &McParams) -> Result<EstimateWithCI> {
    check_arity(f, batch)?;
    let n = batch.dim();
    let grads: Vec<Vec<f64>> = batch.points().par_chunks_exact(n).map(|x| f.gradient(x)).collect();
    let w = batch.weights();
    let tag = "l1l2_bound";
    let mut value = 0.0;
    // per-sample influence of the total
    let mut infl = vec![0.0; grads.len()];
    for i in 0..n {
        let a1: Vec<f64> = grads.iter().map(|g| g[i].abs()).collect();
        let a2: Vec<f64> = grads.iter().map(|g| g[i] * g[i]).collect();
        let m1 = Summary::of(&a1, w).mean;
        let m2 = Summary::of(&a2, w).mean;
        if m1 == 0.0 {
            continue;
        }
        let d = 1.0 + (m2.sqrt() / m1).ln();
        value += m2 / d;
        let d_m2 = 1.0 / d - 1.0 / (2.0 * d * d);
        let d_m1 = m2 / (m1 * d * d);
        for (k, v) in infl.iter_mut().enumerate() {
            *v += d_m2 * (a2[k] - m2) + d_m1 * (a1[k] - m1);
        }
    }
    if batch.is_quadrature() {
        return Ok(EstimateWithCI::exact(value, tag).with_count(batch.len()));
    }
    let se = Summary::of(&infl, None).std_error;
    Ok(EstimateWithCI::normal(value, se, p.confidence, batch.len(), batch.seed(), tag))
}

// ---------------------------------------------------------------------------
// Moments, entropy, Dirichlet form
// ---------------------------------------------------------------------------

/// Mean and variance of `f` under the batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: EstimateWithCI,
    pub variance: EstimateWithCI,
}

/// Plug-in moments of already evaluated values; jackknife SE for the variance.
pub fn moments_of(values: &[f64], weights: Option<&[f64]>, p: &McParams, seed: u64) -> Result<Moments> {
    check_finite(values, "function value")?;
    let mean = estimate(values, weights, p, seed, "mean");
    let variance = match weights {
        Some(_) => EstimateWithCI::exact(Summary::of(values, weights).variance, "variance").with_count(values.len()),
        None => {
            let (v, se) = variance_jackknife(values);
            EstimateWithCI::normal(v, se, p.confidence, values.len(), seed, "variance_jackknife").clamp_ci(0.0, f64::INFINITY)
        }
    };
    Ok(Moments { mean, variance })
}

pub fn estimate_moments(f: &TestFunction, batch: &SampleBatch, p: &McParams) -> Result<Moments> {
    check_arity(f, batch)?;
    moments_of(&batch.map(|x| f.eval(x)), batch.weights(), p, batch.seed())
}

/// `Ent(g) = E[g log g] - E[g] log E[g]` of positive values, with a
/// leave-one-out jackknife standard error (unweighted batches).
pub fn entropy_of(values: &[f64], weights: Option<&[f64]>, p: &McParams, seed: u64) -> Result<EstimateWithCI> {
    check_finite(values, "entropy argument")?;
    if let Some(k) = values.iter().position(|&v| v <= 0.0) {
        return Err(Error::Domain(format!("entropy needs a positive argument; sample {k} is {}", values[k])));
    }
    let glogg: Vec<f64> = values.iter().map(|g| g * g.ln()).collect();
    let tag = "entropy";
    if let Some(w) = weights {
        let m = Summary::of(values, Some(w)).mean;
        let a = Summary::of(&glogg, Some(w)).mean;
        return Ok(EstimateWithCI::exact(a - m * m.ln(), tag).with_count(values.len()));
    }
    let n = values.len();
    let nf = n as f64;
    let sg = pairwise_sum(values);
    let sa = pairwise_sum(&glogg);
    let (m, a) = (sg / nf, sa / nf);
    let value = a - m * m.ln();
    if n < 3 {
        return Ok(EstimateWithCI::normal(value, f64::INFINITY, p.confidence, n, seed, tag));
    }
    let loo: Vec<f64> = values
        .iter()
        .zip(&glogg)
        .map(|(g, ga)| {
            let mk = (sg - g) / (nf - 1.0);
            let ak = (sa - ga) / (nf - 1.0);
            ak - mk * mk.ln()
        })
        .collect();
    let lm = pairwise_sum(&loo) / nf;
    let dev: Vec<f64> = loo.iter().map(|v| (v - lm) * (v - lm)).collect();
    let se = ((nf - 1.0) / nf * pairwise_sum(&dev)).sqrt();
    Ok(EstimateWithCI::normal(value, se, p.confidence, n, seed, "entropy_jackknife"))
}

pub fn estimate_entropy(g: &TestFunction, batch: &SampleBatch, p: &McParams) -> Result<EstimateWithCI> {
    check_arity(g, batch)?;
    entropy_of(&batch.map(|x| g.eval(x)), batch.weights(), p, batch.seed())
}

/// `E[∇f·∇g]`.
pub fn dirichlet_form(f: &TestFunction, g: &TestFunction, batch: &SampleBatch, p: &McParams) -> Result<EstimateWithCI> {
    check_arity(f, batch)?;
    check_arity(g, batch)?;
    let vals = batch.map(|x| {
        let a = f.gradient(x);
        let b = g.gradient(x);
        a.iter().zip(&b).map(|(u, v)| u * v).sum()
    });
    check_finite(&vals, "gradient product")?;
    Ok(estimate(&vals, batch.weights(), p, batch.seed(), "dirichlet_form"))
}

/// `E|∇f|²`.
pub fn energy(f: &TestFunction, batch: &SampleBatch, p: &McParams) -> Result<EstimateWithCI> {
    dirichlet_form(f, f, batch, p).map(|mut e| {
        e.estimator = "energy".into();
        e
    })
}

// ---------------------------------------------------------------------------
// Tail probabilities
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailSide {
    /// `μ(f - E f ≤ -t)`
    LowerCentered,
    /// `μ(f - E f ≥ t)`
    UpperCentered,
}

/// Tail probabilities of `f` around its mean for every `t` in `ts`. The mean
/// is estimated on an independent batch (seed derived from `p.seed`), the
/// counts on the main batch, with Clopper–Pearson intervals.
pub fn tail_probabilities(
    f: &TestFunction,
    measure: &ProductMeasure,
    ts: &[f64],
    side: TailSide,
    p: &McParams,
) -> Result<Vec<EstimateWithCI>> {
    if let Some(t) = ts.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::param("t", format!("thresholds must be nonnegative, got {t}")));
    }
    let center_batch = measure.sample(p.samples, derive_seed(p.seed, "center"))?;
    let center = pairwise_sum(&center_batch.map(|x| f.eval(x))) / p.samples as f64;
    let vals = p.batch(measure)?.map(|x| f.eval(x));
    check_finite(&vals, "function value")?;
    tail_counts(&vals, center, ts, side, p)
}

/// Tail estimates from values and a separately estimated center.
pub fn tail_counts(vals: &[f64], center: f64, ts: &[f64], side: TailSide, p: &McParams) -> Result<Vec<EstimateWithCI>> {
    let n = vals.len();
    ts.iter()
        .map(|&t| {
            let hits = vals
                .iter()
                .filter(|&&v| match side {
                    TailSide::LowerCentered => v - center <= -t,
                    TailSide::UpperCentered => v - center >= t,
                })
                .count();
            let (lo, hi) = clopper_pearson(hits, n, p.confidence)?;
            let q = hits as f64 / n as f64;
            let mut e = EstimateWithCI {
                value: q,
                std_error: (q * (1.0 - q) / n as f64).sqrt(),
                ci_low: lo,
                ci_high: hi,
                confidence: p.confidence,
                count: n,
                seed: p.seed,
                estimator: "clopper_pearson".into(),
                flags: Vec::new(),
            };
            if hits == 0 {
                e.flags.push("zero_hits".into());
            }
            Ok(e)
        })
        .collect()
}

pub fn tail_probability(f: &TestFunction, measure: &ProductMeasure, t: f64, side: TailSide, p: &McParams) -> Result<EstimateWithCI> {
    Ok(tail_probabilities(f, measure, &[t], side, p)?.remove(0))
}

// ---------------------------------------------------------------------------
// Semigroup representations
// ---------------------------------------------------------------------------

/// Horizon `T_∞` of the variance representation: `e^{-2T_∞} = 10^{-8}`.
pub fn variance_horizon() -> f64 {
    0.5 * 1e8f64.ln()
}

/// Number of time nodes used by the representations.
pub const TIME_NODES: usize = 32;

/// `Var(f) = 2∫_0^{T_∞} E|∇P_t f|² dt` for the Gaussian semigroup.
///
/// With `s = e^{-2t}` and Mehler's formula, `E|∇P_t f|² = s E[∇f(Z₁)·∇f(Z₂)]`
/// where `Z_k = √s X + √(1-s) Y_k` for independent standard Gaussians
/// `X, Y₁, Y₂`, so the representation becomes
/// `∫_{e^{-2T_∞}}^1 E[∇f(Z₁)·∇f(Z₂)] ds`. The `s` integral uses
/// Gauss–Legendre nodes and every node reuses the same `(X, Y₁, Y₂)`.
pub fn variance_representation(f: &TestFunction, op: &SemigroupOperator, p: &McParams) -> Result<EstimateWithCI> {
    if !op.is_mehler() {
        return Err(Error::Backend("the variance representation is implemented for the Gaussian semigroup".into()));
    }
    let n = op.measure().dim();
    if f.arity() != n {
        return Err(Error::param("f", format!("arity {} does not match dimension {n}", f.arity())));
    }
    let s_min = (-2.0 * variance_horizon()).exp();
    let rule = gauss_legendre(TIME_NODES, s_min, 1.0);
    let samples = p.samples;
    let mut per = vec![0.0; samples];
    let bad = per
        .par_chunks_mut(CHUNK_ROWS)
        .enumerate()
        .map(|(c, out)| {
            let mut rng = stream_rng(p.seed, c as u64);
            let mut x = vec![0.0; n];
            let mut y1 = vec![0.0; n];
            let mut y2 = vec![0.0; n];
            let (mut z1, mut z2) = (vec![0.0; n], vec![0.0; n]);
            let (mut g1, mut g2) = (vec![0.0; n], vec![0.0; n]);
            for o in out.iter_mut() {
                for k in 0..n {
                    x[k] = rng.sample(StandardNormal);
                    y1[k] = rng.sample(StandardNormal);
                    y2[k] = rng.sample(StandardNormal);
                }
                let mut acc = 0.0;
                for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
                    let (a, b) = (s.sqrt(), (1.0 - s).sqrt());
                    for k in 0..n {
                        z1[k] = a * x[k] + b * y1[k];
                        z2[k] = a * x[k] + b * y2[k];
                    }
                    f.grad(&z1, &mut g1);
                    f.grad(&z2, &mut g2);
                    acc += w * g1.iter().zip(&g2).map(|(u, v)| u * v).sum::<f64>();
                }
                *o = acc;
                if !acc.is_finite() {
                    return true;
                }
            }
            false
        })
        .reduce(|| false, |a, b| a || b);
    if bad {
        return Err(Error::NonFinite("variance representation integrand".into()));
    }
    Ok(estimate(&per, None, p, p.seed, "variance_representation"))
}

/// Truncated entropy representation
/// `(1 - e^{-2ρT})^{-1} ∫_0^T E_μ[|∇P_t g|² / P_t g] dt`, an upper estimate
/// of `Ent_μ(g)`. Needs the Gaussian quadrature backend: `P_t g` and
/// `∇P_t g = e^{-t} P_t(∇g)` are evaluated by tensor quadrature at every
/// outer sample, the outer expectation by Monte Carlo and the time integral
/// by Gauss–Legendre.
pub fn entropy_representation(g: &TestFunction, op: &SemigroupOperator, rho: f64, horizon: f64, p: &McParams) -> Result<EstimateWithCI> {
    let Backend::MehlerQuadrature { .. } = op.backend() else {
        return Err(Error::Backend("the entropy representation needs the Mehler quadrature backend".into()));
    };
    if !(rho > 0.0) || !(horizon > 0.0) {
        return Err(Error::param("horizon", format!("need rho > 0 and T > 0, got rho = {rho}, T = {horizon}")));
    }
    let measure = op.measure();
    if measure.family() != Family::Gaussian {
        return Err(Error::Backend("entropy representation needs a Gaussian measure".into()));
    }
    let n = measure.dim();
    if g.arity() != n {
        return Err(Error::param("g", format!("arity {} does not match dimension {n}", g.arity())));
    }
    let rule = gauss_legendre(16, 0.0, horizon);
    let batch = p.batch(measure)?;
    let mut per = Vec::with_capacity(batch.len());
    for x in batch.rows() {
        let mut acc = 0.0;
        for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
            let est = op.apply_with(t, x, n + 1, "entropy_rep", |z, _, o| {
                o[0] = g.eval(z);
                g.grad(z, &mut o[1..]);
            })?;
            let pg = est[0].value;
            if !(pg > 0.0) {
                return Err(Error::Domain(format!("P_t g = {pg} is not positive at t = {t}, x = {x:?}")));
            }
            let et = (-t).exp();
            let sq: f64 = est[1..].iter().map(|e| (et * e.value).powi(2)).sum();
            acc += w * sq / pg;
        }
        per.push(acc / (-(-2.0 * rho * horizon).exp_m1()));
    }
    Ok(estimate(&per, None, p, p.seed, "entropy_representation"))
}
