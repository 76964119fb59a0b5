//! Test functions with analytic derivative oracles and class tags.
//!
//! `F_+` (resp. `F_-`) is the class of monotone C² functions whose second
//! partial derivatives are all nonnegative (resp. nonpositive). `max` and
//! `median` are only Lipschitz: their gradient is the almost-everywhere
//! indicator of the achieving coordinate and they never answer Hessian
//! queries.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::measures::ProductMeasure;

/// Declared (or observed) class of a test function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassTag {
    FPlus,
    FMinus,
    MonotoneOnly,
    Untagged,
}

/// Coordinate-wise monotonicity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    Nondecreasing,
    Nonincreasing,
    /// Constant functions are monotone in both directions.
    Constant,
    NotMonotone,
}

impl Monotonicity {
    fn flipped(self) -> Self {
        match self {
            Monotonicity::Nondecreasing => Monotonicity::Nonincreasing,
            Monotonicity::Nonincreasing => Monotonicity::Nondecreasing,
            m => m,
        }
    }

    pub fn is_nondecreasing(self) -> bool {
        matches!(self, Monotonicity::Nondecreasing | Monotonicity::Constant)
    }

    pub fn is_nonincreasing(self) -> bool {
        matches!(self, Monotonicity::Nonincreasing | Monotonicity::Constant)
    }

    /// Whether `self` and `other` have different monotonicity (Harris pairs).
    pub fn is_opposite(self, other: Monotonicity) -> bool {
        (self.is_nondecreasing() && other.is_nonincreasing()) || (self.is_nonincreasing() && other.is_nondecreasing())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothness {
    C2,
    LipschitzAe,
}

type EvalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Max,
    Median,
    Linear(Vec<f64>),
    SoftplusSum,
    NegLogisticSum,
    Constant(f64),
    ExpNeg(Box<TestFunction>),
    Custom {
        name: String,
        eval: EvalFn,
        tag: ClassTag,
        monotonicity: Monotonicity,
        smoothness: Smoothness,
    },
}

/// A function `R^n → R` with derivative oracles and a class tag.
#[derive(Clone)]
pub struct TestFunction {
    kind: Kind,
    arity: usize,
    negated: bool,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name())
            .field("arity", &self.arity)
            .field("class_tag", &self.class_tag())
            .finish()
    }
}

fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

fn check_arity(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidDimension(0))
    } else {
        Ok(())
    }
}

/// Index of the maximum, lowest index on ties.
fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// Index of the median order statistic, ties broken toward the lowest index.
fn argmedian(x: &[f64]) -> usize {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    let mid = x.len() / 2;
    idx.select_nth_unstable_by(mid, |&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    idx[mid]
}

impl TestFunction {
    pub fn max(n: usize) -> Result<Self> {
        check_arity(n)?;
        Ok(Self::from_kind(Kind::Max, n))
    }

    /// Median of an odd number of coordinates.
    pub fn median(n: usize) -> Result<Self> {
        check_arity(n)?;
        if n % 2 == 0 {
            return Err(Error::param("n", format!("median needs an odd number of coordinates, got {n}")));
        }
        Ok(Self::from_kind(Kind::Median, n))
    }

    /// `f(x) = c·x`.
    pub fn linear(c: Vec<f64>) -> Result<Self> {
        check_arity(c.len())?;
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("c", "coefficients must be finite"));
        }
        let n = c.len();
        Ok(Self::from_kind(Kind::Linear(c), n))
    }

    /// `f(x) = x_i` (zero-based `i`).
    pub fn coordinate(n: usize, i: usize) -> Result<Self> {
        if i >= n {
            return Err(Error::param("index", format!("{i} out of range for n = {n}")));
        }
        let mut c = vec![0.0; n];
        c[i] = 1.0;
        Self::linear(c)
    }

    /// `f(x) = log(1 + e^{Σx_i})`.
    pub fn softplus_sum(n: usize) -> Result<Self> {
        check_arity(n)?;
        Ok(Self::from_kind(Kind::SoftplusSum, n))
    }

    /// `f(x) = -log(1 + e^{-Σx_i})`.
    pub fn neg_logistic_sum(n: usize) -> Result<Self> {
        check_arity(n)?;
        Ok(Self::from_kind(Kind::NegLogisticSum, n))
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        check_arity(n)?;
        Ok(Self::from_kind(Kind::Constant(value), n))
    }

    /// `e^{-f}`, the positive argument of the entropy checks.
    pub fn exp_neg(f: &TestFunction) -> Self {
        Self::from_kind(Kind::ExpNeg(Box::new(f.clone())), f.arity)
    }

    /// Ad hoc function without derivative oracles; derivatives fall back to
    /// central finite differences.
    pub fn custom(
        name: impl Into<String>,
        n: usize,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        tag: ClassTag,
        monotonicity: Monotonicity,
        smoothness: Smoothness,
    ) -> Result<Self> {
        check_arity(n)?;
        Ok(Self::from_kind(
            Kind::Custom {
                name: name.into(),
                eval: Arc::new(eval),
                tag,
                monotonicity,
                smoothness,
            },
            n,
        ))
    }

    fn from_kind(kind: Kind, arity: usize) -> Self {
        TestFunction {
            kind,
            arity,
            negated: false,
        }
    }

    /// `-f`: monotonicity flips and `F_+` becomes `F_-`.
    pub fn negated(&self) -> Self {
        let mut g = self.clone();
        g.negated = !g.negated;
        g
    }

    /// Looks up a builtin by name. `params` must be a JSON object (or null).
    pub fn builtin(name: &str, params: &Value, n: usize) -> Result<Self> {
        let empty = serde_json::Map::new();
        let obj = match params {
            Value::Null => &empty,
            Value::Object(m) => m,
            _ => return Err(Error::param("params", "must be a JSON object")),
        };
        let allowed: &[&str] = match name {
            "max" | "median" | "softplus_sum" | "neg_logistic_sum" => &[],
            "linear" => &["c"],
            "constant" => &["value"],
            _ => return Err(Error::UnknownFunction(name.to_string())),
        };
        if let Some(k) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::param(k, format!("unknown parameter for `{name}`")));
        }
        match name {
            "max" => Self::max(n),
            "median" => Self::median(n),
            "softplus_sum" => Self::softplus_sum(n),
            "neg_logistic_sum" => Self::neg_logistic_sum(n),
            "linear" => {
                let c: Vec<f64> = match obj.get("c") {
                    None => {
                        let mut c = vec![0.0; n];
                        c[0] = 1.0;
                        c
                    }
                    Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::param("c", e.to_string()))?,
                };
                if c.len() != n {
                    return Err(Error::param("c", format!("expected {n} coefficients, got {}", c.len())));
                }
                Self::linear(c)
            }
            "constant" => {
                let v = obj.get("value").map_or(Some(0.0), Value::as_f64).ok_or_else(|| Error::param("value", "must be a number"))?;
                Self::constant(n, v)
            }
            _ => unreachable!(),
        }
    }

    pub fn name(&self) -> String {
        let base = match &self.kind {
            Kind::Max => "max".to_string(),
            Kind::Median => "median".to_string(),
            Kind::Linear(c) => {
                let parts: Vec<String> = c.iter().map(|v| format!("{v}")).collect();
                format!("linear([{}])", parts.join(","))
            }
            Kind::SoftplusSum => "softplus_sum".to_string(),
            Kind::NegLogisticSum => "neg_logistic_sum".to_string(),
            Kind::Constant(v) => format!("constant({v})"),
            Kind::ExpNeg(f) => format!("exp(-{})", f.name()),
            Kind::Custom { name, .. } => name.clone(),
        };
        if self.negated {
            format!("-{base}")
        } else {
            base
        }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    fn sign(&self) -> f64 {
        if self.negated {
            -1.0
        } else {
            1.0
        }
    }

    fn base_monotonicity(&self) -> Monotonicity {
        match &self.kind {
            Kind::Max | Kind::Median | Kind::SoftplusSum | Kind::NegLogisticSum => Monotonicity::Nondecreasing,
            Kind::Constant(_) => Monotonicity::Constant,
            Kind::Linear(c) => {
                if c.iter().all(|&v| v == 0.0) {
                    Monotonicity::Constant
                } else if c.iter().all(|&v| v >= 0.0) {
                    Monotonicity::Nondecreasing
                } else if c.iter().all(|&v| v <= 0.0) {
                    Monotonicity::Nonincreasing
                } else {
                    Monotonicity::NotMonotone
                }
            }
            Kind::ExpNeg(f) => f.monotonicity().flipped(),
            Kind::Custom { monotonicity, .. } => *monotonicity,
        }
    }

    pub fn monotonicity(&self) -> Monotonicity {
        let m = self.base_monotonicity();
        if self.negated {
            m.flipped()
        } else {
            m
        }
    }

    fn base_tag(&self) -> ClassTag {
        match &self.kind {
            Kind::Max | Kind::Median => ClassTag::MonotoneOnly,
            Kind::SoftplusSum | Kind::Constant(_) => ClassTag::FPlus,
            Kind::NegLogisticSum => ClassTag::FMinus,
            Kind::Linear(_) => match self.base_monotonicity() {
                Monotonicity::Nondecreasing | Monotonicity::Constant => ClassTag::FPlus,
                Monotonicity::Nonincreasing => ClassTag::MonotoneOnly,
                Monotonicity::NotMonotone => ClassTag::Untagged,
            },
            Kind::ExpNeg(_) => ClassTag::Untagged,
            Kind::Custom { tag, .. } => *tag,
        }
    }

    pub fn class_tag(&self) -> ClassTag {
        let t = self.base_tag();
        match (self.negated, &self.kind, t) {
            (false, _, t) => t,
            // -constant is still constant
            (true, Kind::Constant(_), t) => t,
            (true, _, ClassTag::FPlus) => ClassTag::FMinus,
            (true, _, ClassTag::FMinus) => ClassTag::FPlus,
            (true, _, t) => t,
        }
    }

    pub fn smoothness(&self) -> Smoothness {
        match &self.kind {
            Kind::Max | Kind::Median => Smoothness::LipschitzAe,
            Kind::Custom { smoothness, .. } => *smoothness,
            Kind::ExpNeg(f) => f.smoothness(),
            _ => Smoothness::C2,
        }
    }

    pub fn is_c2(&self) -> bool {
        self.smoothness() == Smoothness::C2
    }

    /// Whether gradients and Hessians come from closed forms.
    pub fn has_analytic_derivatives(&self) -> bool {
        match &self.kind {
            Kind::Custom { .. } => false,
            Kind::ExpNeg(f) => f.has_analytic_derivatives(),
            _ => true,
        }
    }

    /// Nondecreasing member of `F_+` (constants included): the class the
    /// lower-tail inequality is stated for.
    pub fn is_nondecreasing_f_plus(&self) -> bool {
        self.is_c2() && self.class_tag() == ClassTag::FPlus && self.monotonicity().is_nondecreasing()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.arity);
        let v = match &self.kind {
            Kind::Max => x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Kind::Median => x[argmedian(x)],
            Kind::Linear(c) => c.iter().zip(x).map(|(a, b)| a * b).sum(),
            Kind::SoftplusSum => softplus(x.iter().sum()),
            Kind::NegLogisticSum => -softplus(-x.iter().sum::<f64>()),
            Kind::Constant(v) => *v,
            Kind::ExpNeg(f) => (-f.eval(x)).exp(),
            Kind::Custom { eval, .. } => eval(x),
        };
        self.sign() * v
    }

    /// Gradient (a.e. gradient for max/median).
    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            Kind::Max | Kind::Median => {
                out.fill(0.0);
                let i = if matches!(self.kind, Kind::Max) { argmax(x) } else { argmedian(x) };
                out[i] = 1.0;
            }
            Kind::Linear(c) => out.copy_from_slice(c),
            Kind::SoftplusSum => out.fill(sigmoid(x.iter().sum())),
            Kind::NegLogisticSum => out.fill(sigmoid(-x.iter().sum::<f64>())),
            Kind::Constant(_) => out.fill(0.0),
            Kind::ExpNeg(f) => {
                f.grad(x, out);
                let e = -(-f.eval(x)).exp();
                out.iter_mut().for_each(|v| *v *= e);
            }
            Kind::Custom { .. } => {
                // central_partial already includes the sign
                for (i, o) in out.iter_mut().enumerate() {
                    *o = self.central_partial(i, x, FD_STEP);
                }
                return;
            }
        }
        if self.negated {
            out.iter_mut().for_each(|v| *v = -*v);
        }
    }

    pub fn partial(&self, i: usize, x: &[f64]) -> f64 {
        match &self.kind {
            Kind::Custom { .. } => self.central_partial(i, x, FD_STEP),
            Kind::Linear(c) => self.sign() * c[i],
            Kind::Max => self.sign() * f64::from(u8::from(argmax(x) == i)),
            Kind::Median => self.sign() * f64::from(u8::from(argmedian(x) == i)),
            _ => {
                let mut g = vec![0.0; self.arity];
                self.grad(x, &mut g);
                g[i]
            }
        }
    }

    /// Gradient as a fresh vector.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.arity];
        self.grad(x, &mut g);
        g
    }

    /// `∂²f/∂x_i∂x_j`; refused for functions that are only Lipschitz.
    pub fn hessian_entry(&self, i: usize, j: usize, x: &[f64]) -> Result<f64> {
        if !self.is_c2() {
            return Err(Error::Precondition(format!("{} is not C2; Hessian queries are not defined", self.name())));
        }
        let v = match &self.kind {
            Kind::Linear(_) | Kind::Constant(_) => 0.0,
            Kind::SoftplusSum => {
                let p = sigmoid(x.iter().sum());
                p * (1.0 - p)
            }
            Kind::NegLogisticSum => {
                let s: f64 = x.iter().sum();
                -sigmoid(s) * sigmoid(-s)
            }
            Kind::ExpNeg(f) => {
                let e = (-f.eval(x)).exp();
                e * (f.partial(i, x) * f.partial(j, x) - f.hessian_entry(i, j, x)?)
            }
            Kind::Custom { .. } => return Ok(central_hessian(self, i, j, x, FD_HESS_STEP)),
            Kind::Max | Kind::Median => unreachable!(),
        };
        Ok(self.sign() * v)
    }

    fn central_partial(&self, i: usize, x: &[f64], h: f64) -> f64 {
        let mut y = x.to_vec();
        y[i] = x[i] + h;
        let fp = self.eval(&y);
        y[i] = x[i] - h;
        let fm = self.eval(&y);
        (fp - fm) / (2.0 * h)
    }
}

const FD_STEP: f64 = 1e-6;
const FD_HESS_STEP: f64 = 1e-4;

fn central_hessian(f: &TestFunction, i: usize, j: usize, x: &[f64], h: f64) -> f64 {
    let mut y = x.to_vec();
    if i == j {
        let f0 = f.eval(x);
        y[i] = x[i] + h;
        let fp = f.eval(&y);
        y[i] = x[i] - h;
        let fm = f.eval(&y);
        (fp - 2.0 * f0 + fm) / (h * h)
    } else {
        let mut at = |di: f64, dj: f64| {
            y[i] = x[i] + di;
            y[j] = x[j] + dj;
            f.eval(&y)
        };
        (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h)
    }
}

/// Finite-difference request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffRequest {
    Grad,
    Hessian(usize, usize),
}

/// Central finite-difference result with a Richardson error estimate.
#[derive(Debug, Clone)]
pub struct Differential {
    pub values: Vec<f64>,
    /// `|D(h) - D(2h)| / 3`, the leading `O(h²)` error term.
    pub error_estimate: f64,
}

/// Central finite differences of `f` at `x`, independent of any oracle.
pub fn differential(f: &TestFunction, x: &[f64], request: DiffRequest, h: f64) -> Result<Differential> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::param("h", format!("step must be positive, got {h}")));
    }
    let probe = |y: &[f64]| -> Result<f64> {
        let v = f.eval(y);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("{} at {y:?}", f.name())))
        }
    };
    let grad_at = |step: f64| -> Result<Vec<f64>> {
        let mut y = x.to_vec();
        (0..x.len())
            .map(|i| {
                y[i] = x[i] + step;
                let fp = probe(&y)?;
                y[i] = x[i] - step;
                let fm = probe(&y)?;
                y[i] = x[i];
                Ok((fp - fm) / (2.0 * step))
            })
            .collect()
    };
    let hess_at = |i: usize, j: usize, step: f64| -> Result<f64> {
        for &(di, dj) in &[(step, step), (-step, -step), (step, -step), (-step, step)] {
            let mut y = x.to_vec();
            y[i] += di;
            y[j] += dj;
            probe(&y)?;
        }
        probe(x)?;
        Ok(central_hessian(f, i, j, x, step))
    };
    match request {
        DiffRequest::Grad => {
            let fine = grad_at(h)?;
            let coarse = grad_at(2.0 * h)?;
            let err = fine.iter().zip(&coarse).map(|(a, b)| (a - b).abs() / 3.0).fold(0.0, f64::max);
            Ok(Differential {
                values: fine,
                error_estimate: err,
            })
        }
        DiffRequest::Hessian(i, j) => {
            if !f.is_c2() {
                return Err(Error::Precondition(format!("{} is not C2; Hessian requests are refused", f.name())));
            }
            if i >= x.len() || j >= x.len() {
                return Err(Error::param("index", format!("({i}, {j}) out of range for n = {}", x.len())));
            }
            let fine = hess_at(i, j, h)?;
            let coarse = hess_at(i, j, 2.0 * h)?;
            Ok(Differential {
                values: vec![fine],
                error_estimate: (fine - coarse).abs() / 3.0,
            })
        }
    }
}

/// Outcome of an empirical class-membership check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassReport {
    pub function: String,
    pub declared: ClassTag,
    pub observed: ClassTag,
    /// Whether the observations are consistent with the declared tag.
    pub confirmed: bool,
    pub nondecreasing: bool,
    pub nonincreasing: bool,
    /// `None` when Hessians were not queried (Lipschitz-only functions).
    pub hessian_nonneg: Option<bool>,
    pub hessian_nonpos: Option<bool>,
    pub samples: usize,
    pub min_partial: f64,
    pub max_partial: f64,
    pub min_hessian: f64,
    pub max_hessian: f64,
}

/// Default sign tolerance for [`classify`].
pub const DEFAULT_CLASS_TOL: f64 = 1e-8;

/// Samples `count` points from `measure` and reports the tightest class
/// consistent with the observed derivative signs. The declared tag is only
/// confirmed or refuted, never upgraded.
pub fn classify(f: &TestFunction, measure: &ProductMeasure, count: usize, seed: u64, tol: f64) -> Result<ClassReport> {
    if measure.dim() != f.arity() {
        return Err(Error::param("measure", format!("dimension {} does not match arity {}", measure.dim(), f.arity())));
    }
    let batch = measure.sample(count, seed)?;
    let n = f.arity();
    let c2 = f.is_c2();
    let (mut nondec, mut noninc) = (true, true);
    let (mut hnn, mut hnp) = (true, true);
    let (mut min_p, mut max_p) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_h, mut max_h) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut g = vec![0.0; n];
    for x in batch.rows() {
        f.grad(x, &mut g);
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let eps = tol * gnorm.max(1.0);
        for &d in &g {
            min_p = min_p.min(d);
            max_p = max_p.max(d);
            nondec &= d >= -eps;
            noninc &= d <= eps;
        }
        if c2 {
            for i in 0..n {
                for j in i..n {
                    let (h, herr) = if f.has_analytic_derivatives() {
                        (f.hessian_entry(i, j, x)?, 0.0)
                    } else {
                        let d = differential(f, x, DiffRequest::Hessian(i, j), FD_HESS_STEP)?;
                        (d.values[0], d.error_estimate)
                    };
                    min_h = min_h.min(h);
                    max_h = max_h.max(h);
                    hnn &= h >= -(eps + herr);
                    hnp &= h <= eps + herr;
                }
            }
        }
    }
    let declared = f.class_tag();
    let monotone = nondec || noninc;
    let observed = if monotone && c2 && hnn && hnp {
        // zero Hessian: both classes fit; keep the declared one if it is either
        if declared == ClassTag::FMinus {
            ClassTag::FMinus
        } else {
            ClassTag::FPlus
        }
    } else if monotone && c2 && hnn {
        ClassTag::FPlus
    } else if monotone && c2 && hnp {
        ClassTag::FMinus
    } else if monotone {
        ClassTag::MonotoneOnly
    } else {
        ClassTag::Untagged
    };
    let confirmed = match declared {
        ClassTag::FPlus => monotone && c2 && hnn,
        ClassTag::FMinus => monotone && c2 && hnp,
        ClassTag::MonotoneOnly => monotone,
        ClassTag::Untagged => true,
    } && match f.monotonicity() {
        Monotonicity::Nondecreasing => nondec,
        Monotonicity::Nonincreasing => noninc,
        Monotonicity::Constant => nondec && noninc,
        Monotonicity::NotMonotone => true,
    };
    Ok(ClassReport {
        function: f.name(),
        declared,
        observed,
        confirmed,
        nondecreasing: nondec,
        nonincreasing: noninc,
        hessian_nonneg: c2.then_some(hnn),
        hessian_nonpos: c2.then_some(hnp),
        samples: batch.len(),
        min_partial: min_p,
        max_partial: max_p,
        min_hessian: if c2 { min_h } else { f64::NAN },
        max_hessian: if c2 { max_h } else { f64::NAN },
    })
}
