//! The diffusion semigroup `P_t` with generator `L = Δ - ∇V·∇`.
//!
//! For the standard Gaussian, Mehler's formula
//! `P_t f(x) = E f(e^{-t}x + √(1-e^{-2t}) Y)` is evaluated by tensor
//! Gauss–Hermite quadrature (n ≤ 4) or Monte Carlo. Other measures are
//! handled by Euler–Maruyama simulation of `dX = -∇V(X)dt + √2 dW`, which
//! also accumulates the Feynman–Kac weights `exp(-∫ V_i''(X^i_s) ds)` by the
//! trapezoid rule on the time grid.
//!
//! Every evaluation from a given operator reuses the same noise (common
//! random numbers), so differences across starting points are coupled.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functions::TestFunction;
use crate::inequalities::{InequalityReport, Relation};
use crate::measures::{Family, ProductMeasure, MAX_TENSOR_DIM};
use crate::quadrature::{for_each_tensor_node, gauss_hermite_normal};
use crate::rng::{stream_rng, CHUNK_ROWS};
use crate::stats::{EstimateWithCI, Summary, DEFAULT_CONFIDENCE};

/// Default Gauss–Hermite order per axis.
pub const DEFAULT_HERMITE_ORDER: usize = 64;
/// Default number of Monte Carlo paths for the Mehler backend.
pub const DEFAULT_MEHLER_PATHS: usize = 100_000;
/// Default number of Euler–Maruyama paths.
pub const DEFAULT_SDE_PATHS: usize = 10_000;

/// Evaluation backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Backend {
    MehlerQuadrature { order: usize },
    MehlerMc { paths: usize },
    SdeEuler { step: f64, paths: usize },
}

/// How `∇P_t f` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMethod {
    /// `e^{-t} P_t(∂_i f)` (exact for the Gaussian semigroup).
    Commuted,
    /// Central differences of `P_t f` with coupled noise.
    FiniteDiff,
    /// `E[∂_i f(X_t) exp(-∫ V_i''(X^i_s) ds)]` along SDE paths.
    FeynmanKac,
}

/// Default tensor order for dimension `n`: 64 per axis up to n = 2, then
/// reduced so a single evaluation stays around 10^4 to 3·10^5 nodes.
pub fn default_hermite_order(n: usize) -> usize {
    match n {
        0..=2 => DEFAULT_HERMITE_ORDER,
        3 => 40,
        _ => 16,
    }
}

/// Default Euler–Maruyama step `10^{-3} min(1, 1/κ_+)`.
pub fn default_sde_step(kappa: f64) -> f64 {
    if kappa > 1.0 {
        1e-3 / kappa
    } else {
        1e-3
    }
}

/// An immutable semigroup evaluator bound to a measure, a backend and a seed.
#[derive(Debug, Clone)]
pub struct SemigroupOperator {
    measure: ProductMeasure,
    backend: Backend,
    seed: u64,
    confidence: f64,
    nodes: Option<Arc<(Vec<f64>, Vec<f64>)>>,
}

/// Per-path outputs: `rows × width` values, optional quadrature weights.
struct Raw {
    values: Vec<f64>,
    width: usize,
    weights: Option<Arc<Vec<f64>>>,
}

impl Raw {
    fn rows(&self) -> usize {
        self.values.len() / self.width
    }

    fn column(&self, j: usize) -> Vec<f64> {
        self.values.chunks_exact(self.width).map(|r| r[j]).collect()
    }
}

impl SemigroupOperator {
    /// Validates the backend against the measure family.
    pub fn new(measure: ProductMeasure, backend: Backend, seed: u64) -> Result<Self> {
        let gaussian = measure.family() == Family::Gaussian;
        let nodes = match backend {
            Backend::MehlerQuadrature { order } => {
                if !gaussian {
                    return Err(Error::Backend(format!("Mehler backends need a Gaussian measure, got {}", measure.id())));
                }
                if measure.dim() > MAX_TENSOR_DIM {
                    return Err(Error::Backend(format!("tensor quadrature limited to n <= {MAX_TENSOR_DIM}, got n = {}", measure.dim())));
                }
                if order == 0 {
                    return Err(Error::param("order", "must be at least 1"));
                }
                let rule = gauss_hermite_normal(order);
                let mut pts = Vec::new();
                let mut w = Vec::new();
                for_each_tensor_node(&rule, measure.dim(), |p, wt| {
                    pts.extend_from_slice(p);
                    w.push(wt);
                });
                Some(Arc::new((pts, w)))
            }
            Backend::MehlerMc { paths } => {
                if !gaussian {
                    return Err(Error::Backend(format!("Mehler backends need a Gaussian measure, got {}", measure.id())));
                }
                if paths < 2 {
                    return Err(Error::param("paths", "need at least 2 paths"));
                }
                None
            }
            Backend::SdeEuler { step, paths } => {
                if measure.family() == Family::Exponential {
                    return Err(Error::Backend("no diffusion semigroup is provided for the exponential family".into()));
                }
                if !(step > 0.0 && step.is_finite()) {
                    return Err(Error::param("sde_step", format!("must be positive, got {step}")));
                }
                if paths < 2 {
                    return Err(Error::param("paths", "need at least 2 paths"));
                }
                None
            }
        };
        Ok(SemigroupOperator {
            measure,
            backend,
            seed,
            confidence: DEFAULT_CONFIDENCE,
            nodes,
        })
    }

    /// Mehler quadrature for Gaussian n ≤ 4, Mehler Monte Carlo for larger
    /// Gaussian products, Euler–Maruyama otherwise.
    pub fn default_for(measure: ProductMeasure, seed: u64) -> Result<Self> {
        let backend = match measure.family() {
            Family::Gaussian if measure.dim() <= MAX_TENSOR_DIM => Backend::MehlerQuadrature {
                order: default_hermite_order(measure.dim()),
            },
            Family::Gaussian => Backend::MehlerMc {
                paths: DEFAULT_MEHLER_PATHS,
            },
            _ => Backend::SdeEuler {
                step: default_sde_step(measure.kappa()),
                paths: DEFAULT_SDE_PATHS,
            },
        };
        Self::new(measure, backend, seed)
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = confidence;
        self
    }

    pub fn measure(&self) -> &ProductMeasure {
        &self.measure
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_mehler(&self) -> bool {
        !matches!(self.backend, Backend::SdeEuler { .. })
    }

    /// Whether evaluations are deterministic quadrature.
    pub fn backend_is_exact(&self) -> bool {
        matches!(self.backend, Backend::MehlerQuadrature { .. })
    }

    fn backend_tag(&self) -> &'static str {
        match self.backend {
            Backend::MehlerQuadrature { .. } => "mehler_quadrature",
            Backend::MehlerMc { .. } => "mehler_mc",
            Backend::SdeEuler { .. } => "sde_euler",
        }
    }

    fn fd_step(&self) -> f64 {
        match self.backend {
            Backend::MehlerQuadrature { .. } => 1e-5,
            _ => 1e-3,
        }
    }

    fn check_point(&self, t: f64, x: &[f64]) -> Result<()> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::param("t", format!("must be nonnegative and finite, got {t}")));
        }
        if x.len() != self.measure.dim() {
            return Err(Error::param("x", format!("expected {} coordinates, got {}", self.measure.dim(), x.len())));
        }
        Ok(())
    }

    /// Evaluates `eval(X_t, log_weights, out)` on every path (or node)
    /// started at `x`. `log_weights[i] = -∫ V_i''(X^i_s) ds`.
    fn raw<E>(&self, t: f64, x: &[f64], width: usize, eval: &E) -> Result<Raw>
    where
        E: Fn(&[f64], &[f64], &mut [f64]) + Sync,
    {
        let n = x.len();
        if t == 0.0 {
            let mut out = vec![0.0; width];
            eval(x, &vec![0.0; n], &mut out);
            return finite(Raw {
                values: out,
                width,
                weights: Some(Arc::new(vec![1.0])),
            });
        }
        let a = (-t).exp();
        let b = (-(-2.0 * t).exp_m1()).sqrt();
        match self.backend {
            Backend::MehlerQuadrature { .. } => {
                let nodes = self.nodes.as_ref().expect("quadrature nodes");
                let (pts, w) = (&nodes.0, &nodes.1);
                let lw = vec![-t; n];
                let mut values = vec![0.0; w.len() * width];
                values
                    .par_chunks_mut(CHUNK_ROWS * width)
                    .zip(pts.par_chunks(CHUNK_ROWS * n))
                    .for_each(|(out, ys)| {
                        let mut z = vec![0.0; n];
                        for (o, y) in out.chunks_exact_mut(width).zip(ys.chunks_exact(n)) {
                            for k in 0..n {
                                z[k] = a * x[k] + b * y[k];
                            }
                            eval(&z, &lw, o);
                        }
                    });
                finite(Raw {
                    values,
                    width,
                    weights: Some(Arc::new(w.clone())),
                })
            }
            Backend::MehlerMc { paths } => {
                let lw = vec![-t; n];
                let mut values = vec![0.0; paths * width];
                values.par_chunks_mut(CHUNK_ROWS * width).enumerate().for_each(|(c, out)| {
                    let mut rng = stream_rng(self.seed, c as u64);
                    let mut z = vec![0.0; n];
                    for o in out.chunks_exact_mut(width) {
                        for k in 0..n {
                            let y: f64 = rng.sample(StandardNormal);
                            z[k] = a * x[k] + b * y;
                        }
                        eval(&z, &lw, o);
                    }
                });
                finite(Raw {
                    values,
                    width,
                    weights: None,
                })
            }
            Backend::SdeEuler { step, paths } => {
                if t < step {
                    return Err(Error::param("t", format!("t = {t} is below the SDE step {step}; cannot resolve")));
                }
                let steps = (t / step).ceil() as usize;
                let dt = t / steps as f64;
                let sq = (2.0 * dt).sqrt();
                let pots = self.measure.potentials();
                let mut values = vec![0.0; paths * width];
                let bad = values
                    .par_chunks_mut(CHUNK_ROWS * width)
                    .enumerate()
                    .map(|(c, out)| {
                        let mut rng = stream_rng(self.seed, c as u64);
                        let mut z = vec![0.0; n];
                        let mut lw = vec![0.0; n];
                        for o in out.chunks_exact_mut(width) {
                            z.copy_from_slice(x);
                            lw.fill(0.0);
                            for _ in 0..steps {
                                for k in 0..n {
                                    let p = &pots[k];
                                    let h0 = p.second_derivative(z[k]);
                                    let xi: f64 = rng.sample(StandardNormal);
                                    z[k] += -p.first_derivative(z[k]) * dt + sq * xi;
                                    lw[k] -= 0.5 * dt * (h0 + p.second_derivative(z[k]));
                                }
                            }
                            if z.iter().any(|v| !v.is_finite()) {
                                return true;
                            }
                            eval(&z, &lw, o);
                        }
                        false
                    })
                    .reduce(|| false, |p, q| p || q);
                if bad {
                    return Err(Error::NonFinite(format!("Euler–Maruyama path diverged from {x:?} (step {dt})")));
                }
                finite(Raw {
                    values,
                    width,
                    weights: None,
                })
            }
        }
    }

    fn summarize(&self, raw: &Raw, j: usize, label: &str) -> EstimateWithCI {
        let col = raw.column(j);
        let s = Summary::of(&col, raw.weights.as_ref().map(|w| w.as_slice()));
        let est = if raw.weights.is_some() {
            EstimateWithCI::exact(s.mean, label).with_count(raw.rows())
        } else {
            EstimateWithCI::normal(s.mean, s.std_error, self.confidence, raw.rows(), self.seed, label)
        };
        est.with_seed(self.seed)
    }

    /// Estimates `P_t h_j(x)` for the `width` outputs of `eval`.
    pub fn apply_with<E>(&self, t: f64, x: &[f64], width: usize, label: &str, eval: E) -> Result<Vec<EstimateWithCI>>
    where
        E: Fn(&[f64], &[f64], &mut [f64]) + Sync,
    {
        self.check_point(t, x)?;
        let raw = self.raw(t, x, width, &eval)?;
        Ok((0..width).map(|j| self.summarize(&raw, j, label)).collect())
    }

    /// `P_t f(x)`.
    pub fn apply(&self, f: &TestFunction, t: f64, x: &[f64]) -> Result<EstimateWithCI> {
        self.check_arity(f)?;
        let label = format!("{}:P_t", self.backend_tag());
        Ok(self.apply_with(t, x, 1, &label, |z, _, o| o[0] = f.eval(z))?.remove(0))
    }

    fn check_arity(&self, f: &TestFunction) -> Result<()> {
        if f.arity() != self.measure.dim() {
            return Err(Error::param("f", format!("arity {} does not match dimension {}", f.arity(), self.measure.dim())));
        }
        Ok(())
    }

    /// `∇P_t f(x)` by the chosen method.
    pub fn grad_apply(&self, f: &TestFunction, t: f64, x: &[f64], method: GradMethod) -> Result<Vec<EstimateWithCI>> {
        self.check_arity(f)?;
        self.check_point(t, x)?;
        let n = x.len();
        match method {
            GradMethod::Commuted => {
                if !self.is_mehler() {
                    return Err(Error::Backend("commuted gradients need a Mehler backend".into()));
                }
                let label = format!("{}:commuted", self.backend_tag());
                let et = (-t).exp();
                let raw = self.raw(t, x, n, &|z: &[f64], _: &[f64], o: &mut [f64]| f.grad(z, o))?;
                Ok((0..n).map(|j| self.summarize(&raw, j, &label).scaled(et)).collect())
            }
            GradMethod::FeynmanKac => {
                if self.is_mehler() {
                    return Err(Error::Backend("Feynman–Kac gradients need the SDE backend".into()));
                }
                if t == 0.0 {
                    let g = f.gradient(x);
                    return Ok(g.into_iter().map(|v| EstimateWithCI::exact(v, "sde_euler:feynman_kac")).collect());
                }
                let label = "sde_euler:feynman_kac";
                let raw = self.raw(t, x, n, &|z: &[f64], lw: &[f64], o: &mut [f64]| {
                    f.grad(z, o);
                    for (v, l) in o.iter_mut().zip(lw) {
                        *v *= l.exp();
                    }
                })?;
                Ok((0..n).map(|j| self.summarize(&raw, j, label)).collect())
            }
            GradMethod::FiniteDiff => {
                let h = self.fd_step();
                let label = format!("{}:finite_diff", self.backend_tag());
                let eval = |z: &[f64], _: &[f64], o: &mut [f64]| o[0] = f.eval(z);
                let mut out = Vec::with_capacity(n);
                let mut xp = x.to_vec();
                for i in 0..n {
                    xp[i] = x[i] + h;
                    let plus = self.raw(t, &xp, 1, &eval)?;
                    xp[i] = x[i] - h;
                    let minus = self.raw(t, &xp, 1, &eval)?;
                    xp[i] = x[i];
                    let diff: Vec<f64> = plus.values.iter().zip(&minus.values).map(|(p, m)| (p - m) / (2.0 * h)).collect();
                    let raw = Raw {
                        values: diff,
                        width: 1,
                        weights: plus.weights.clone(),
                    };
                    out.push(self.summarize(&raw, 0, &label));
                }
                Ok(out)
            }
        }
    }

    /// Kernel-level Harris inequality `P_t(fg)(x) ≤ P_t f(x) P_t g(x)` for
    /// opposite-monotone `f`, `g`.
    pub fn kernel_harris_check(&self, f: &TestFunction, g: &TestFunction, t: f64, x: &[f64]) -> Result<InequalityReport> {
        self.check_arity(f)?;
        self.check_arity(g)?;
        if !f.monotonicity().is_opposite(g.monotonicity()) {
            return Err(Error::Precondition(format!(
                "kernel Harris needs opposite monotonicity; got {:?} and {:?}",
                f.monotonicity(),
                g.monotonicity()
            )));
        }
        self.check_point(t, x)?;
        let raw = self.raw(t, x, 3, &|z: &[f64], _: &[f64], o: &mut [f64]| {
            let (a, b) = (f.eval(z), g.eval(z));
            o[0] = a * b;
            o[1] = a;
            o[2] = b;
        })?;
        let label = format!("{}:kernel", self.backend_tag());
        let lhs = self.summarize(&raw, 0, &label);
        let pf = self.summarize(&raw, 1, &label);
        let pg = self.summarize(&raw, 2, &label);
        let rhs = product_estimate(&pf, &pg, &raw, self.confidence, self.seed);
        let mut constants = BTreeMap::new();
        constants.insert("t".to_string(), t);
        Ok(InequalityReport::new(
            "kernel_harris",
            format!("f={}, g={}, x={x:?}", f.name(), g.name()),
            &self.measure,
            lhs,
            rhs,
            Relation::LessEq,
            constants,
        ))
    }

    /// Commutation bound `|∂_i P_t f(x)| ≤ e^{κt} P_t(|∂_i f|)(x)`, one
    /// report per coordinate. The left side is obtained by finite
    /// differences on Mehler backends and by Feynman–Kac on the SDE backend.
    pub fn commutation_check(&self, f: &TestFunction, t: f64, x: &[f64]) -> Result<Vec<InequalityReport>> {
        let method = if self.is_mehler() { GradMethod::FiniteDiff } else { GradMethod::FeynmanKac };
        let grads = self.grad_apply(f, t, x, method)?;
        let n = x.len();
        let kappa = self.measure.kappa();
        let label = format!("{}:abs_partial", self.backend_tag());
        let rhs = self.apply_with(t, x, n, &label, |z, _, o| {
            f.grad(z, o);
            o.iter_mut().for_each(|v| *v = v.abs());
        })?;
        let factor = (kappa * t).exp();
        let mut constants = BTreeMap::new();
        constants.insert("t".to_string(), t);
        constants.insert("kappa".to_string(), kappa);
        Ok(grads
            .into_iter()
            .zip(rhs)
            .enumerate()
            .map(|(i, (g, r))| {
                InequalityReport::new(
                    "commutation",
                    format!("f={}, i={i}, x={x:?}", f.name()),
                    &self.measure,
                    abs_estimate(&g),
                    r.scaled(factor),
                    Relation::LessEq,
                    constants.clone(),
                )
            })
            .collect())
    }
}

fn finite(raw: Raw) -> Result<Raw> {
    if raw.values.iter().all(|v| v.is_finite()) {
        Ok(raw)
    } else {
        Err(Error::NonFinite("function value along semigroup paths".into()))
    }
}

/// Estimate of `|θ|` from an estimate of `θ`.
pub(crate) fn abs_estimate(e: &EstimateWithCI) -> EstimateWithCI {
    let mut a = e.clone();
    a.value = e.value.abs();
    if e.ci_low >= 0.0 {
        // unchanged
    } else if e.ci_high <= 0.0 {
        a.ci_low = -e.ci_high;
        a.ci_high = -e.ci_low;
    } else {
        a.ci_low = 0.0;
        a.ci_high = e.ci_high.max(-e.ci_low);
    }
    a
}

/// Delta-method estimate of a product of two means from the same paths.
fn product_estimate(a: &EstimateWithCI, b: &EstimateWithCI, raw: &Raw, confidence: f64, seed: u64) -> EstimateWithCI {
    let v = a.value * b.value;
    if raw.weights.is_some() {
        return EstimateWithCI::exact(v, &a.estimator).with_count(raw.rows());
    }
    // influence function of the product: b·(A - a) + a·(B - b)
    let infl: Vec<f64> = raw.values.chunks_exact(raw.width).map(|r| b.value * r[1] + a.value * r[2]).collect();
    let s = Summary::of(&infl, None);
    EstimateWithCI::normal(v, s.std_error, confidence, raw.rows(), seed, &a.estimator)
}

/// `Lf(x) = Δf(x) - ∇V(x)·∇f(x)` from the derivative oracles.
pub fn generator(measure: &ProductMeasure, f: &TestFunction, x: &[f64]) -> Result<f64> {
    let n = x.len();
    let mut lap = 0.0;
    for i in 0..n {
        lap += f.hessian_entry(i, i, x)?;
    }
    let mut gv = vec![0.0; n];
    measure.potential_gradient(x, &mut gv);
    let gf = f.gradient(x);
    Ok(lap - gv.iter().zip(&gf).map(|(a, b)| a * b).sum::<f64>())
}
