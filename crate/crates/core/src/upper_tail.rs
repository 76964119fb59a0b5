//! The covariance operator of the Ornstein–Uhlenbeck semigroup and the
//! upper-tail bound for monotone functions with nonpositive second
//! derivatives.
//!
//! For a fixed `f`, the operator acts pointwise:
//!
//! ```text
//! T_g(y) = ∫_0^∞ e^{-t} ∇f(y)·P_t(∇g)(y) dt = ∫_0^1 ∇f(y)·P_{-ln s}(∇g)(y) ds
//! ```
//!
//! The integral in `s` is a 64-point Gauss–Legendre rule and each
//! `P_t(∂_j g)(y)` comes from the Mehler formula. Only the standard Gaussian
//! is supported: the construction uses the exact commutation
//! `∂_i P_t = e^{-t} P_t ∂_i`.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::McParams;
use crate::functions::{ClassTag, TestFunction};
use crate::inequalities::{InequalityReport, Relation};
use crate::measures::{Family, ProductMeasure, SampleBatch};
use crate::quadrature::{gauss_legendre, Rule};
use crate::rng::derive_seed;
use crate::semigroup::{Backend, SemigroupOperator};
use crate::stats::{pairwise_sum, EstimateWithCI, Summary};

/// Gauss–Legendre nodes of the `s = e^{-t}` integral.
pub const TIME_NODES: usize = 64;

/// Tolerance added to the three-SE slack of the identity checks, covering
/// the deterministic quadrature error.
pub const QUADRATURE_TOL: f64 = 1e-6;

/// Finite-difference step of the sign check.
pub const SIGN_FD_STEP: f64 = 1e-4;

/// Hermite order per axis of the inner Mehler quadrature used by
/// [`TOperator::gaussian`]. Lower than the semigroup default because `T_g`
/// is evaluated at every sample point of an outer batch.
pub fn inner_hermite_order(n: usize) -> usize {
    match n {
        0 | 1 => 48,
        2 => 24,
        3 => 12,
        _ => 8,
    }
}

/// `T_g` for a fixed base function `f` on `γ_n`.
#[derive(Debug, Clone)]
pub struct TOperator {
    base: TestFunction,
    op: SemigroupOperator,
    rule: Rule,
}

impl TOperator {
    pub fn new(base: TestFunction, op: SemigroupOperator) -> Result<Self> {
        if op.measure().family() != Family::Gaussian || !op.is_mehler() {
            return Err(Error::Backend(format!(
                "T_g needs the Ornstein–Uhlenbeck semigroup with a Mehler backend, got {} / {:?}",
                op.measure().id(),
                op.backend()
            )));
        }
        if base.arity() != op.measure().dim() {
            return Err(Error::param("f", format!("arity {} does not match dimension {}", base.arity(), op.measure().dim())));
        }
        Ok(TOperator {
            base,
            op,
            rule: gauss_legendre(TIME_NODES, 0.0, 1.0),
        })
    }

    /// Mehler quadrature at [`inner_hermite_order`] on `γ_n`, `n ≤ 4`.
    pub fn gaussian(base: TestFunction, seed: u64) -> Result<Self> {
        let n = base.arity();
        let op = SemigroupOperator::new(
            ProductMeasure::gaussian(n)?,
            Backend::MehlerQuadrature {
                order: inner_hermite_order(n),
            },
            seed,
        )?;
        Self::new(base, op)
    }

    pub fn base(&self) -> &TestFunction {
        &self.base
    }

    pub fn operator(&self) -> &SemigroupOperator {
        &self.op
    }

    pub fn measure(&self) -> &ProductMeasure {
        self.op.measure()
    }

    fn check(&self, g: &TestFunction, y: &[f64]) -> Result<()> {
        let n = self.measure().dim();
        if g.arity() != n {
            return Err(Error::param("g", format!("arity {} does not match dimension {n}", g.arity())));
        }
        if y.len() != n {
            return Err(Error::param("y", format!("expected {n} coordinates, got {}", y.len())));
        }
        Ok(())
    }

    /// `T_g(y)`. On the Monte Carlo backend the time nodes share random
    /// numbers, so the standard error is the triangle-inequality bound
    /// `Σ_k w_k Σ_j |∂_j f(y)| SE_kj`, valid under any correlation.
    pub fn t_apply(&self, g: &TestFunction, y: &[f64]) -> Result<EstimateWithCI> {
        self.check(g, y)?;
        let df = self.base.gradient(y);
        let n = y.len();
        let mut terms = Vec::with_capacity(self.rule.len());
        let mut se = 0.0;
        for (&s, &w) in self.rule.nodes.iter().zip(&self.rule.weights) {
            let pg = self.op.apply_with(-s.ln(), y, n, "t_operator", |z, _, o| g.grad(z, o))?;
            let mut dot = 0.0;
            for (d, e) in df.iter().zip(&pg) {
                dot += d * e.value;
                se += w * d.abs() * e.std_error;
            }
            terms.push(w * dot);
        }
        let value = pairwise_sum(&terms);
        if self.op.backend_is_exact() {
            Ok(EstimateWithCI::exact(value, "t_operator_quadrature").with_seed(self.op.seed()))
        } else {
            let count = match self.op.backend() {
                Backend::MehlerMc { paths } => paths,
                _ => 0,
            };
            Ok(EstimateWithCI::normal(value, se, default_confidence(), count, self.op.seed(), "t_operator_mc"))
        }
    }

    /// `T_g` at every row of `batch`, in row order.
    pub fn t_values(&self, g: &TestFunction, batch: &SampleBatch) -> Result<Vec<f64>> {
        if batch.dim() != self.measure().dim() {
            return Err(Error::param("batch", format!("dimension {} does not match {}", batch.dim(), self.measure().dim())));
        }
        (0..batch.len())
            .into_par_iter()
            .map(|k| self.t_apply(g, batch.row(k)).map(|e| e.value))
            .collect()
    }

    fn require_exact(&self, what: &str) -> Result<()> {
        if self.op.backend_is_exact() {
            Ok(())
        } else {
            Err(Error::Backend(format!(
                "{what} evaluates T_g at every sample point and needs the Mehler quadrature backend"
            )))
        }
    }

    fn constants(&self) -> BTreeMap<String, f64> {
        let mut c = BTreeMap::new();
        c.insert("time_nodes".into(), TIME_NODES as f64);
        if let Backend::MehlerQuadrature { order } = self.op.backend() {
            c.insert("hermite_order".into(), order as f64);
        }
        c
    }
}

fn default_confidence() -> f64 {
    crate::stats::DEFAULT_CONFIDENCE
}

fn check_batch(t: &TOperator, batch: &SampleBatch) -> Result<()> {
    if batch.dim() != t.measure().dim() {
        return Err(Error::param("batch", format!("dimension {} does not match {}", batch.dim(), t.measure().dim())));
    }
    Ok(())
}

fn mean_estimate(values: &[f64], influence: Option<&[f64]>, weights: Option<&[f64]>, p: &McParams, seed: u64, tag: &str) -> EstimateWithCI {
    let mean = Summary::of(values, weights).mean;
    if weights.is_some() {
        return EstimateWithCI::exact(mean, tag).with_count(values.len()).with_seed(seed);
    }
    let se = Summary::of(influence.unwrap_or(values), None).std_error;
    EstimateWithCI::normal(mean, se, p.confidence, values.len(), seed, tag)
}

/// `E[T_g] = Cov(f, g)`; with `g = f` this is `E[T_f] = Var(f)`.
pub fn mean_identity_check(t: &TOperator, g: &TestFunction, batch: &SampleBatch, p: &McParams) -> Result<InequalityReport> {
    t.require_exact("the mean identity")?;
    check_batch(t, batch)?;
    let w = batch.weights();
    let tv = t.t_values(g, batch)?;
    let fv = batch.map(|x| t.base.eval(x));
    let gv = batch.map(|x| g.eval(x));
    let mf = Summary::of(&fv, w).mean;
    let mg = Summary::of(&gv, w).mean;
    let prod: Vec<f64> = fv.iter().zip(&gv).map(|(a, b)| (a - mf) * (b - mg)).collect();
    let lhs = mean_estimate(&tv, None, w, p, batch.seed(), "mean_of_t");
    let rhs = mean_estimate(&prod, None, w, p, batch.seed(), "covariance");
    Ok(InequalityReport::new(
        "t_mean_identity",
        format!("f={}, g={}", t.base.name(), g.name()),
        t.measure(),
        lhs,
        rhs,
        Relation::Equal {
            tolerance: QUADRATURE_TOL,
        },
        t.constants(),
    ))
}

/// `E[e^{θf} g] = θ E[e^{θf} T_g]` with `g` centered on the batch. The
/// centering enters the standard error of the left side.
pub fn covariance_identity_check(t: &TOperator, g: &TestFunction, theta: f64, batch: &SampleBatch, p: &McParams) -> Result<InequalityReport> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::param("theta", format!("must be nonnegative and finite, got {theta}")));
    }
    t.require_exact("the covariance identity")?;
    check_batch(t, batch)?;
    let w = batch.weights();
    let fv = batch.map(|x| t.base.eval(x));
    let peak = fv.iter().fold(0.0f64, |m, v| m.max(theta * v));
    if peak > 700.0 {
        return Err(Error::Overflow(format!("e^(theta f) overflows at theta = {theta} (theta f up to {peak:.1})")));
    }
    let gv = batch.map(|x| g.eval(x));
    let mg = Summary::of(&gv, w).mean;
    let e: Vec<f64> = fv.iter().map(|v| (theta * v).exp()).collect();
    let me = Summary::of(&e, w).mean;
    let eg: Vec<f64> = e.iter().zip(&gv).map(|(a, b)| a * (b - mg)).collect();
    let infl: Vec<f64> = e.iter().zip(&gv).map(|(a, b)| (a - me) * (b - mg)).collect();
    let lhs = mean_estimate(&eg, Some(&infl), w, p, batch.seed(), "tilted_centered_mean");
    let tv = t.t_values(g, batch)?;
    let et: Vec<f64> = e.iter().zip(&tv).map(|(a, b)| theta * a * b).collect();
    let rhs = mean_estimate(&et, None, w, p, batch.seed(), "tilted_t_mean");
    let mut c = t.constants();
    c.insert("theta".into(), theta);
    Ok(InequalityReport::new(
        "covariance_identity",
        format!("f={}, g={}", t.base.name(), g.name()),
        t.measure(),
        lhs,
        rhs,
        Relation::Equal {
            tolerance: QUADRATURE_TOL * rhs_scale(&e, w),
        },
        c,
    ))
}

fn rhs_scale(e: &[f64], w: Option<&[f64]>) -> f64 {
    Summary::of(e, w).mean.abs().max(1.0)
}

/// `∂_i T_f(y) ≤ 0` for `f` in `F_-`, by central differences at each probe
/// point. The standard error of each difference is its Richardson estimate
/// `|D_h - D_{2h}|/3` and the interval is `±3` of it.
pub fn sign_check(t: &TOperator, probes: &[Vec<f64>]) -> Result<Vec<InequalityReport>> {
    if t.base.class_tag() != ClassTag::FMinus {
        return Err(Error::Precondition(format!("f = {} is not tagged F_-", t.base.name())));
    }
    let f = &t.base;
    let h = SIGN_FD_STEP;
    let mut out = Vec::new();
    for y in probes {
        t.check(f, y)?;
        for i in 0..y.len() {
            let at = |d: f64| -> Result<f64> {
                let mut z = y.clone();
                z[i] += d;
                Ok(t.t_apply(f, &z)?.value)
            };
            let d1 = (at(h)? - at(-h)?) / (2.0 * h);
            let d2 = (at(2.0 * h)? - at(-2.0 * h)?) / (4.0 * h);
            let se = (d1 - d2).abs() / 3.0;
            let mut lhs = EstimateWithCI::exact(d1, "central_difference").with_seed(t.op.seed());
            lhs.std_error = se;
            lhs.ci_low = d1 - 3.0 * se;
            lhs.ci_high = d1 + 3.0 * se;
            lhs.count = 4;
            let mut c = t.constants();
            c.insert("i".into(), i as f64);
            c.insert("fd_step".into(), h);
            out.push(InequalityReport::new(
                "t_gradient_sign",
                format!("f={}, i={i}, y={y:?}", f.name()),
                t.measure(),
                lhs,
                EstimateWithCI::exact(0.0, "zero"),
                Relation::LessEq,
                c,
            ));
        }
    }
    Ok(out)
}

/// Upper-tail bound `γ_n(f - Ef ≥ t) ≤ exp(-t²/Var f)` on the `t` grid and
/// the moment-generating bound `E[e^{θ(f - Ef)}] ≤ exp(Var(f) θ²/2)` on the
/// `θ` grid. Tail counts use a batch with seed `p.seed` and a mean estimated
/// on an independent batch; variance and moment-generating values use the
/// main batch.
pub fn dung_tail_check(f: &TestFunction, measure: &ProductMeasure, ts: &[f64], thetas: &[f64], p: &McParams) -> Result<Vec<InequalityReport>> {
    if measure.family() != Family::Gaussian {
        return Err(Error::Precondition(format!("needs a Gaussian measure, got {}", measure.id())));
    }
    if !f.is_c2() || f.class_tag() != ClassTag::FMinus {
        return Err(Error::Precondition(format!("f = {} is not C2 / F_-", f.name())));
    }
    if f.arity() != measure.dim() {
        return Err(Error::param("f", format!("arity {} does not match dimension {}", f.arity(), measure.dim())));
    }
    if let Some(th) = thetas.iter().find(|th| !(**th >= 0.0 && th.is_finite())) {
        return Err(Error::param("theta", format!("must be nonnegative and finite, got {th}")));
    }
    p.validate()?;
    let batch = p.batch(measure)?;
    let vals = batch.map(|x| f.eval(x));
    let center_batch = measure.sample(p.samples, derive_seed(p.seed, "center"))?;
    let center = pairwise_sum(&center_batch.map(|x| f.eval(x))) / p.samples as f64;
    let moments = crate::estimators::moments_of(&vals, None, p, batch.seed())?;
    let var = moments.variance;
    let tails = crate::estimators::tail_counts(&vals, center, ts, crate::estimators::TailSide::UpperCentered, p)?;
    let subject = format!("f={}", f.name());
    let mut out = Vec::new();
    for (&t, tail) in ts.iter().zip(tails) {
        // exp(-t²/v) is nondecreasing in v
        let bound = |v: f64| if t == 0.0 { 1.0 } else if v > 0.0 { (-t * t / v).exp() } else { 0.0 };
        let mut rhs = EstimateWithCI::exact(bound(var.value), "dung_bound");
        if t > 0.0 {
            rhs.ci_low = bound(var.ci_low);
            rhs.ci_high = bound(var.ci_high);
            rhs.std_error = rhs.value * t * t / (var.value * var.value) * var.std_error;
            rhs.count = var.count;
            rhs.seed = var.seed;
        }
        let mut c = BTreeMap::new();
        c.insert("t".into(), t);
        c.insert("variance".into(), var.value);
        out.push(InequalityReport::new("dung_tail", subject.clone(), measure, tail, rhs, Relation::LessEq, c));
    }
    let m = Summary::of(&vals, None).mean;
    for &th in thetas {
        let spread = vals.iter().fold(0.0f64, |a, v| a.max(th * (v - m)));
        if spread > 700.0 {
            return Err(Error::Overflow(format!("e^(theta (f - Ef)) overflows at theta = {th}")));
        }
        let e: Vec<f64> = vals.iter().map(|v| (th * (v - m)).exp()).collect();
        let me = Summary::of(&e, None).mean;
        // influence of the mean of e^{θ(f - m̂)} including the centering
        let infl: Vec<f64> = e.iter().zip(&vals).map(|(ek, fk)| ek - me * th * (fk - m)).collect();
        let lhs = EstimateWithCI::normal(me, Summary::of(&infl, None).std_error, p.confidence, vals.len(), batch.seed(), "centered_mgf");
        let a = 0.5 * th * th;
        let mut rhs = EstimateWithCI::exact((a * var.value).exp(), "variance_mgf_bound");
        rhs.ci_low = (a * var.ci_low.max(0.0)).exp();
        rhs.ci_high = (a * var.ci_high).exp();
        rhs.std_error = rhs.value * a * var.std_error;
        rhs.count = var.count;
        rhs.seed = var.seed;
        let mut c = BTreeMap::new();
        c.insert("theta".into(), th);
        c.insert("variance".into(), var.value);
        out.push(InequalityReport::new("dung_mgf", subject.clone(), measure, lhs, rhs, Relation::LessEq, c));
    }
    Ok(out)
}
