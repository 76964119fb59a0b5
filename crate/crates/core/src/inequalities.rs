//! Bound constants, the inequality report type and the checks that
//! evaluate both sides of each inequality.
//!
//! A `≤` check passes when the upper confidence limit of the left side does
//! not exceed the lower confidence limit of the right side plus a
//! scale-aware slack `1e-6·max(1, |rhs|)`, fails when the intervals are
//! separated the other way, and is inconclusive otherwise. Equality checks
//! pass when `|lhs - rhs|` is within three combined standard errors plus a
//! fixed numerical tolerance. Band checks pass when the confidence interval
//! of the left side lies inside the band and fail when it lies outside.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    energy, entropy_of, entropy_representation, gamma_orlicz_sq, grad_orlicz_sq, moments_of, tail_probabilities,
    variance_representation, McParams, TailSide,
};
use crate::functions::{ClassTag, TestFunction};
use crate::measures::{Family, ProductMeasure, SampleBatch};
use crate::semigroup::{Backend, SemigroupOperator};
use crate::stats::{EstimateWithCI, Summary};

/// Relative slack of `≤` verdicts.
pub const SLACK_REL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// What is asserted between the two sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Relation {
    LessEq,
    /// `|lhs - rhs| ≤ 3·combined SE + tolerance`.
    Equal { tolerance: f64 },
    /// `low ≤ lhs ≤ high`, judged on the confidence interval of `lhs`; the
    /// right side carries `high`.
    Within { low: f64, high: f64 },
}

/// One evaluated inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub name: String,
    pub subject: String,
    pub measure: String,
    pub n: usize,
    pub lhs: EstimateWithCI,
    pub rhs: EstimateWithCI,
    pub margin: f64,
    pub verdict: Verdict,
    pub relation: Relation,
    pub slack: f64,
    pub constants: BTreeMap<String, f64>,
    pub seed: u64,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl InequalityReport {
    /// Builds a report and its verdict. `rho`, `kappa` and `lambda` of the
    /// measure are always recorded among the constants.
    pub fn new(
        name: &str,
        subject: String,
        measure: &ProductMeasure,
        lhs: EstimateWithCI,
        rhs: EstimateWithCI,
        relation: Relation,
        mut constants: BTreeMap<String, f64>,
    ) -> Self {
        constants.entry("rho".into()).or_insert(measure.rho());
        constants.entry("kappa".into()).or_insert(measure.kappa());
        constants.entry("lambda".into()).or_insert(measure.lambda());
        let (verdict, slack) = decide(&lhs, &rhs, relation);
        let mut flags: Vec<String> = lhs.flags.iter().chain(&rhs.flags).cloned().collect();
        flags.sort();
        flags.dedup();
        InequalityReport {
            name: name.to_string(),
            subject,
            measure: measure.id(),
            n: measure.dim(),
            margin: rhs.value - lhs.value,
            seed: lhs.seed,
            samples: lhs.count.max(rhs.count),
            lhs,
            rhs,
            verdict,
            relation,
            slack,
            constants,
            flags,
            config: None,
        }
    }

    pub fn with_flag(mut self, flag: &str) -> Self {
        if !self.flags.iter().any(|f| f == flag) {
            self.flags.push(flag.to_string());
            self.flags.sort();
        }
        self
    }
}

/// Verdict and slack for two estimates.
pub fn decide(lhs: &EstimateWithCI, rhs: &EstimateWithCI, relation: Relation) -> (Verdict, f64) {
    match relation {
        Relation::LessEq => {
            let slack = SLACK_REL * rhs.value.abs().max(1.0);
            let v = if lhs.ci_high <= rhs.ci_low + slack {
                Verdict::Pass
            } else if lhs.ci_low > rhs.ci_high + slack {
                Verdict::Fail
            } else {
                Verdict::Inconclusive
            };
            (v, slack)
        }
        Relation::Equal { tolerance } => {
            let slack = 3.0 * (lhs.std_error.powi(2) + rhs.std_error.powi(2)).sqrt() + tolerance;
            let v = if (lhs.value - rhs.value).abs() <= slack {
                Verdict::Pass
            } else {
                Verdict::Fail
            };
            (v, slack)
        }
        Relation::Within { low, high } => {
            let v = if lhs.ci_low >= low && lhs.ci_high <= high {
                Verdict::Pass
            } else if lhs.ci_high < low || lhs.ci_low > high {
                Verdict::Fail
            } else {
                Verdict::Inconclusive
            };
            (v, 0.0)
        }
    }
}

// ---------------------------------------------------------------------------
// Constants and closed-form bounds
// ---------------------------------------------------------------------------

/// Constants entering the lower-tail bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub rho: f64,
    pub kappa: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub c_rho_kappa: f64,
    pub herbst_c: f64,
}

impl BoundConstants {
    /// `C_{ρ,κ} = 2e^{[1+κ/ρ]_+} / (ρ(1 - e^{-2ρT}))`, `T` defaulting to
    /// `1/(2ρ)`; `herbst_c = 1/(2C_{ρ,κ})`.
    pub fn new(rho: f64, kappa: f64, horizon: Option<f64>) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::param("rho", format!("must be positive, got {rho}")));
        }
        if !kappa.is_finite() {
            return Err(Error::param("kappa", "must be finite"));
        }
        let t = horizon.unwrap_or(1.0 / (2.0 * rho));
        if !(t > 0.0) {
            return Err(Error::param("T", format!("must be positive, got {t}")));
        }
        let c = 2.0 * (1.0 + kappa / rho).max(0.0).exp() / (rho * -(-2.0 * rho * t).exp_m1());
        Ok(BoundConstants {
            rho,
            kappa,
            horizon: t,
            c_rho_kappa: c,
            herbst_c: 1.0 / (2.0 * c),
        })
    }

    pub fn for_measure(measure: &ProductMeasure, horizon: Option<f64>) -> Result<Self> {
        Self::new(measure.rho(), measure.kappa(), horizon)
    }

    fn record(&self, map: &mut BTreeMap<String, f64>) {
        map.insert("rho".into(), self.rho);
        map.insert("kappa".into(), self.kappa);
        map.insert("T".into(), self.horizon);
        map.insert("C_rho_kappa".into(), self.c_rho_kappa);
        map.insert("herbst_c".into(), self.herbst_c);
    }

    fn map(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        self.record(&mut m);
        m
    }
}

/// `exp(-t²/(4 C_{ρ,κ} ‖∇f‖²_φ))`.
pub fn lower_tail_bound(constants: &BoundConstants, orlicz_sq: f64, t: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    (-t * t / (4.0 * constants.c_rho_kappa * orlicz_sq)).exp()
}

/// Chernoff bound `min_θ exp(-θt + Aθ²)` over a θ grid, from the MGF bound
/// `E e^{-θ(f - Ef)} ≤ e^{Aθ²}`.
pub fn chernoff_bound(a: f64, t: f64, thetas: &[f64]) -> f64 {
    thetas.iter().map(|&th| (-th * t + a * th * th).exp()).fold(1.0, f64::min)
}

/// Closed-form comparison bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BaselineKind {
    /// `2 exp(-t²/(2 Lip²))`
    GaussianLipschitz { lip: f64, t: f64 },
    /// `exp(-c t²/Var)`, stated for `t > 1`.
    PaourisValettas { c: f64, variance: f64, t: f64 },
    /// `exp(-t²/Var)`
    Dung { variance: f64, t: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

pub fn baseline_bound(kind: BaselineKind) -> Result<Baseline> {
    let pos = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::param(name, format!("must be positive, got {v}")))
        }
    };
    let mut flags = Vec::new();
    let value = match kind {
        BaselineKind::GaussianLipschitz { lip, t } => {
            pos("lip", lip)?;
            2.0 * (-t * t / (2.0 * lip * lip)).exp()
        }
        BaselineKind::PaourisValettas { c, variance, t } => {
            pos("variance", variance)?;
            pos("c", c)?;
            if t <= 1.0 {
                flags.push("t_outside_validity".into());
            }
            flags.push("c_unspecified".into());
            (-c * t * t / variance).exp()
        }
        BaselineKind::Dung { variance, t } => {
            pos("variance", variance)?;
            (-t * t / variance).exp()
        }
    };
    Ok(Baseline { value, flags })
}

// ---------------------------------------------------------------------------
// Checks
// ---------------------------------------------------------------------------

fn check_arity(f: &TestFunction, batch: &SampleBatch) -> Result<()> {
    if f.arity() != batch.dim() {
        return Err(Error::param("f", format!("arity {} does not match dimension {}", f.arity(), batch.dim())));
    }
    Ok(())
}

fn require_f_plus(f: &TestFunction) -> Result<()> {
    if !f.is_c2() || f.class_tag() != ClassTag::FPlus {
        return Err(Error::Precondition(format!("f = {} is not C2 / F_+", f.name())));
    }
    Ok(())
}

/// Estimate of a product `a·b` of two means from the same batch, via the
/// delta method on per-sample values `xa`, `xb`.
fn product_of_means(xa: &[f64], xb: &[f64], weights: Option<&[f64]>, p: &McParams, seed: u64, tag: &str) -> EstimateWithCI {
    let ma = Summary::of(xa, weights).mean;
    let mb = Summary::of(xb, weights).mean;
    if weights.is_some() {
        return EstimateWithCI::exact(ma * mb, tag).with_count(xa.len());
    }
    let infl: Vec<f64> = xa.iter().zip(xb).map(|(a, b)| mb * a + ma * b).collect();
    let s = Summary::of(&infl, None);
    EstimateWithCI::normal(ma * mb, s.std_error, p.confidence, xa.len(), seed, tag)
}

/// Product of two estimates with conservatively added relative errors.
fn product_estimate(a: &EstimateWithCI, b: &EstimateWithCI, factor: f64, p: &McParams, tag: &str) -> EstimateWithCI {
    let v = factor * a.value * b.value;
    if a.is_exact() && b.is_exact() {
        return EstimateWithCI::exact(v, tag).with_count(a.count.max(b.count));
    }
    let se = factor.abs() * (a.std_error * b.value.abs() + b.std_error * a.value.abs());
    EstimateWithCI::normal(v, se, p.confidence, a.count.max(b.count), a.seed, tag)
}

/// Harris: `E[fg] ≤ E[f]E[g]` for opposite-monotone `f`, `g`.
pub fn harris_check(f: &TestFunction, g: &TestFunction, measure: &ProductMeasure, batch: &SampleBatch, p: &McParams) -> Result<InequalityReport> {
    check_arity(f, batch)?;
    check_arity(g, batch)?;
    if !f.monotonicity().is_opposite(g.monotonicity()) {
        return Err(Error::Precondition(format!(
            "Harris needs opposite monotonicity; got {:?} for {} and {:?} for {}",
            f.monotonicity(),
            f.name(),
            g.monotonicity(),
            g.name()
        )));
    }
    let fv = batch.map(|x| f.eval(x));
    let gv = batch.map(|x| g.eval(x));
    let fg: Vec<f64> = fv.iter().zip(&gv).map(|(a, b)| a * b).collect();
    let w = batch.weights();
    let lhs = moments_of(&fg, w, p, batch.seed())?.mean;
    let rhs = product_of_means(&fv, &gv, w, p, batch.seed(), "product_of_means");
    Ok(InequalityReport::new(
        "harris",
        format!("f={}, g={}", f.name(), g.name()),
        measure,
        lhs,
        rhs,
        Relation::LessEq,
        BTreeMap::new(),
    ))
}

/// Functional inequality to check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FunctionalKind {
    /// `λ Var(f) ≤ E|∇f|²`
    Poincare,
    /// `ρ Ent(f²) ≤ 2 E|∇f|²`
    LogSobolev,
    /// `‖P_t f‖₂ ≤ ‖f‖_{p(t)}`, `p(t) = 1 + e^{-2ρt}`
    Hypercontractive { t: f64 },
    /// `Ent(P_t g) ≤ e^{-2ρt} Ent(g)`
    EntropyDecay { t: f64 },
}

/// Evaluates a functional inequality. Outer expectations use `batch`
/// (pass a quadrature design for equality cases); semigroup terms use `op`.
pub fn functional_check(
    kind: FunctionalKind,
    f: &TestFunction,
    batch: &SampleBatch,
    op: &SemigroupOperator,
    p: &McParams,
) -> Result<InequalityReport> {
    check_arity(f, batch)?;
    let measure = op.measure();
    let w = batch.weights();
    let seed = batch.seed();
    let mut constants = BTreeMap::new();
    let mut flags = Vec::new();
    let (name, lhs, rhs) = match kind {
        FunctionalKind::Poincare => {
            let var = moments_of(&batch.map(|x| f.eval(x)), w, p, seed)?.variance;
            let lhs = var.scaled(measure.lambda());
            let rhs = energy(f, batch, p)?;
            ("poincare", lhs, rhs)
        }
        FunctionalKind::LogSobolev => {
            let sq = batch.map(|x| f.eval(x).powi(2));
            let ent = entropy_of(&sq, w, p, seed)?;
            let lhs = ent.scaled(measure.rho());
            let rhs = energy(f, batch, p)?.scaled(2.0);
            ("log_sobolev", lhs, rhs)
        }
        FunctionalKind::Hypercontractive { t } => {
            if !op.is_mehler() {
                return Err(Error::Backend("hypercontractivity check needs a Mehler backend".into()));
            }
            let q = 1.0 + (-2.0 * measure.rho() * t).exp();
            constants.insert("t".into(), t);
            constants.insert("p".into(), q);
            flags.push("exponent_one_plus_exp_minus_2rho_t".to_string());
            let lhs = nested_l2_norm(f, batch, op, t, p)?;
            let absq: Vec<f64> = batch.map(|x| f.eval(x).abs().powf(q));
            let m = moments_of(&absq, w, p, seed)?.mean;
            // ‖f‖_q = m^{1/q}; delta method
            let v = m.value.max(0.0).powf(1.0 / q);
            let rhs = if m.is_exact() {
                EstimateWithCI::exact(v, "lp_norm").with_count(m.count)
            } else {
                let se = if m.value > 0.0 { v / (q * m.value) * m.std_error } else { 0.0 };
                EstimateWithCI::normal(v, se, p.confidence, m.count, seed, "lp_norm")
            };
            ("hypercontractive", lhs, rhs)
        }
        FunctionalKind::EntropyDecay { t } => {
            if !matches!(op.backend(), Backend::MehlerQuadrature { .. }) {
                return Err(Error::Backend("entropy decay needs the Mehler quadrature backend".into()));
            }
            constants.insert("t".into(), t);
            let mut ptg = Vec::with_capacity(batch.len());
            for x in batch.rows() {
                ptg.push(op.apply(f, t, x)?.value);
            }
            let lhs = entropy_of(&ptg, w, p, seed)?;
            let gv = batch.map(|x| f.eval(x));
            let rhs = entropy_of(&gv, w, p, seed)?.scaled((-2.0 * t * measure.rho()).exp());
            ("entropy_decay", lhs, rhs)
        }
    };
    let mut r = InequalityReport::new(name, format!("f={}", f.name()), measure, lhs, rhs, Relation::LessEq, constants);
    for fl in flags {
        r = r.with_flag(&fl);
    }
    Ok(r)
}

/// `‖P_t f‖₂` with outer expectation over `batch` and inner `P_t` from
/// `op`. For Monte Carlo inner estimates the square uses the unbiased
/// `(M m₁² - m₂)/(M - 1)` form.
fn nested_l2_norm(f: &TestFunction, batch: &SampleBatch, op: &SemigroupOperator, t: f64, p: &McParams) -> Result<EstimateWithCI> {
    let mut sq = Vec::with_capacity(batch.len());
    for x in batch.rows() {
        let e = op.apply_with(t, x, 2, "nested", |z, _, o| {
            let v = f.eval(z);
            o[0] = v;
            o[1] = v * v;
        })?;
        let m1 = e[0].value;
        if e[0].is_exact() {
            sq.push(m1 * m1);
        } else {
            let mm = e[0].count as f64;
            sq.push((mm * m1 * m1 - e[1].value) / (mm - 1.0));
        }
    }
    let m = moments_of(&sq, batch.weights(), p, batch.seed())?.mean;
    let v = m.value.max(0.0).sqrt();
    if m.is_exact() && op.backend_is_exact() {
        return Ok(EstimateWithCI::exact(v, "l2_norm_of_semigroup").with_count(m.count));
    }
    let se = if v > 0.0 { m.std_error / (2.0 * v) } else { m.std_error.sqrt() };
    Ok(EstimateWithCI::normal(v, se, p.confidence, m.count, batch.seed(), "l2_norm_of_semigroup"))
}

/// `Ent(e^{-f}) ≤ C_{ρ,κ} ‖∇f‖²_φ E[e^{-f}]` for `f` in `F_+`.
pub fn thm2_check(f: &TestFunction, measure: &ProductMeasure, batch: &SampleBatch, constants: &BoundConstants, p: &McParams) -> Result<InequalityReport> {
    require_f_plus(f)?;
    check_arity(f, batch)?;
    let g = batch.map(|x| (-f.eval(x)).exp());
    let lhs = entropy_of(&g, batch.weights(), p, batch.seed())?;
    let mean = moments_of(&g, batch.weights(), p, batch.seed())?.mean;
    let orl = grad_orlicz_sq(f, batch, p)?;
    let rhs = product_estimate(&orl, &mean, constants.c_rho_kappa, p, "c_times_orlicz_times_mean");
    let mut c = constants.map();
    c.insert("grad_orlicz_sq".into(), orl.value);
    Ok(InequalityReport::new("thm2", format!("f={}", f.name()), measure, lhs, rhs, Relation::LessEq, c))
}

/// Gaussian refinement `Ent(e^{-f}) ≤ E[e^{-f}] Var(f)`.
pub fn gaussian_entropy_variance_check(f: &TestFunction, measure: &ProductMeasure, batch: &SampleBatch, p: &McParams) -> Result<InequalityReport> {
    if measure.family() != Family::Gaussian {
        return Err(Error::Precondition(format!("needs a Gaussian measure, got {}", measure.id())));
    }
    require_f_plus(f)?;
    check_arity(f, batch)?;
    let fv = batch.map(|x| f.eval(x));
    let g: Vec<f64> = fv.iter().map(|v| (-v).exp()).collect();
    let w = batch.weights();
    let lhs = entropy_of(&g, w, p, batch.seed())?;
    let mean = moments_of(&g, w, p, batch.seed())?.mean;
    let var = moments_of(&fv, w, p, batch.seed())?.variance;
    let rhs = product_estimate(&mean, &var, 1.0, p, "mean_times_variance");
    Ok(InequalityReport::new(
        "gaussian_entropy_variance",
        format!("f={}", f.name()),
        measure,
        lhs,
        rhs,
        Relation::LessEq,
        BTreeMap::new(),
    ))
}

/// Herbst MGF bound `E[e^{-θ(f - Ef)}] ≤ exp(C_{ρ,κ} ‖∇f‖²_φ θ²)` at each θ.
pub fn herbst_mgf_check(
    f: &TestFunction,
    measure: &ProductMeasure,
    batch: &SampleBatch,
    constants: &BoundConstants,
    orlicz_sq: &EstimateWithCI,
    thetas: &[f64],
    p: &McParams,
) -> Result<Vec<InequalityReport>> {
    require_f_plus(f)?;
    check_arity(f, batch)?;
    let fv = batch.map(|x| f.eval(x));
    let w = batch.weights();
    let m = Summary::of(&fv, w).mean;
    let spread = fv.iter().map(|v| (v - m).abs()).fold(0.0, f64::max);
    thetas
        .iter()
        .map(|&th| {
            if th < 0.0 {
                return Err(Error::param("theta", format!("must be nonnegative, got {th}")));
            }
            if th * spread > 700.0 {
                return Err(Error::Overflow(format!("e^(-theta (f - Ef)) overflows at theta = {th}; reduce theta_max")));
            }
            let e: Vec<f64> = fv.iter().map(|v| (-th * (v - m)).exp()).collect();
            let s = Summary::of(&e, w);
            let lhs = if w.is_some() {
                EstimateWithCI::exact(s.mean, "centered_mgf").with_count(fv.len())
            } else {
                // influence of E[e^{-θ(f - m̂)}] including the centering
                let infl: Vec<f64> = e.iter().zip(&fv).map(|(ek, fk)| ek + s.mean * th * (fk - m)).collect();
                let se = Summary::of(&infl, None).std_error;
                EstimateWithCI::normal(s.mean, se, p.confidence, fv.len(), batch.seed(), "centered_mgf")
            };
            let a = constants.c_rho_kappa * th * th;
            let mut rhs = EstimateWithCI::exact((a * orlicz_sq.value).exp(), "herbst_mgf_bound");
            rhs.ci_low = (a * orlicz_sq.ci_low.max(0.0)).exp();
            rhs.ci_high = (a * orlicz_sq.ci_high).exp();
            rhs.std_error = rhs.value * a * orlicz_sq.std_error;
            rhs.count = orlicz_sq.count;
            let mut c = constants.map();
            c.insert("theta".into(), th);
            c.insert("grad_orlicz_sq".into(), orlicz_sq.value);
            Ok(InequalityReport::new("herbst_mgf", format!("f={}", f.name()), measure, lhs, rhs, Relation::LessEq, c))
        })
        .collect()
}

/// `Ent(e^{-f}) ≤ C_{ρ,κ} ‖Γf‖²_φ E[e^{-f}]` on the exponential product with
/// directions `Γ_i = √x_i ∂_i` and `κ = -1`.
pub fn gamma_direction_check(
    f: &TestFunction,
    measure: &ProductMeasure,
    batch: &SampleBatch,
    constants: &BoundConstants,
    p: &McParams,
) -> Result<InequalityReport> {
    if measure.family() != Family::Exponential {
        return Err(Error::Precondition(format!("needs the exponential family, got {}", measure.id())));
    }
    require_f_plus(f)?;
    check_arity(f, batch)?;
    let g = batch.map(|x| (-f.eval(x)).exp());
    let lhs = entropy_of(&g, batch.weights(), p, batch.seed())?;
    let mean = moments_of(&g, batch.weights(), p, batch.seed())?.mean;
    let orl = gamma_orlicz_sq(f, batch, p)?;
    let rhs = product_estimate(&orl, &mean, constants.c_rho_kappa, p, "c_times_gamma_orlicz_times_mean");
    let mut c = constants.map();
    c.insert("gamma_orlicz_sq".into(), orl.value);
    Ok(InequalityReport::new("gamma_direction", format!("f={}", f.name()), measure, lhs, rhs, Relation::LessEq, c))
}

/// Lower tail `μ(f - Ef ≤ -t)` against `exp(-t²/(4 C_{ρ,κ} ‖∇f‖²_φ))` for
/// each `t`. The Orlicz norm uses the batch drawn with `p.seed`; the tail
/// counts use the same batch with an independently estimated mean.
/// Comparison bounds are recorded among the constants: the Dung-type and
/// Paouris–Valettas forms with the variance of the batch (the latter only
/// when `paouris_c` is given) and, on Gaussian measures, the Lipschitz form
/// with `sup |∇f|` over the batch.
pub fn lower_tail_check(
    f: &TestFunction,
    measure: &ProductMeasure,
    constants: &BoundConstants,
    ts: &[f64],
    paouris_c: Option<f64>,
    p: &McParams,
) -> Result<Vec<InequalityReport>> {
    require_f_plus(f)?;
    let batch = p.batch(measure)?;
    check_arity(f, &batch)?;
    let orl = grad_orlicz_sq(f, &batch, p)?;
    let var = moments_of(&batch.map(|x| f.eval(x)), None, p, batch.seed())?.variance;
    let lip = if measure.family() == Family::Gaussian {
        Some(batch.map(|x| f.gradient(x).iter().map(|g| g * g).sum::<f64>().sqrt()).into_iter().fold(0.0, f64::max))
    } else {
        None
    };
    let tails = tail_probabilities(f, measure, ts, TailSide::LowerCentered, p)?;
    ts.iter()
        .zip(tails)
        .map(|(&t, tail)| {
            let bound = |o: f64| lower_tail_bound(constants, o.max(0.0), t);
            let mut rhs = EstimateWithCI::exact(bound(orl.value), "lower_tail_bound");
            if t > 0.0 {
                rhs.ci_low = bound(orl.ci_low);
                rhs.ci_high = bound(orl.ci_high);
                let o = orl.value.max(f64::MIN_POSITIVE);
                rhs.std_error = rhs.value * t * t / (4.0 * constants.c_rho_kappa * o * o) * orl.std_error;
                rhs.count = orl.count;
                rhs.seed = orl.seed;
            }
            let mut c = constants.map();
            c.insert("t".into(), t);
            c.insert("grad_orlicz_sq".into(), orl.value);
            c.insert("variance".into(), var.value);
            let mut flags = Vec::new();
            if var.value > 0.0 && t > 0.0 {
                c.insert("baseline_dung".into(), baseline_bound(BaselineKind::Dung { variance: var.value, t })?.value);
                if let Some(pc) = paouris_c {
                    let b = baseline_bound(BaselineKind::PaourisValettas { c: pc, variance: var.value, t })?;
                    c.insert("baseline_paouris_valettas".into(), b.value);
                    flags.extend(b.flags);
                }
            }
            if let Some(l) = lip.filter(|l| *l > 0.0) {
                c.insert("lip_from_batch".into(), l);
                c.insert("baseline_gaussian_lipschitz".into(), baseline_bound(BaselineKind::GaussianLipschitz { lip: l, t })?.value);
            }
            let mut r = InequalityReport::new("lower_tail", format!("f={}", f.name()), measure, tail, rhs, Relation::LessEq, c);
            for fl in flags {
                r = r.with_flag(&fl);
            }
            Ok(r)
        })
        .collect()
}

/// `2∫_0^{T_∞} E|∇P_t f|² dt = Var(f)` on the Gaussian semigroup, with the
/// direct variance taken on `batch`.
pub fn variance_representation_check(f: &TestFunction, op: &SemigroupOperator, batch: &SampleBatch, p: &McParams) -> Result<InequalityReport> {
    check_arity(f, batch)?;
    let lhs = variance_representation(f, op, p)?;
    let rhs = moments_of(&batch.map(|x| f.eval(x)), batch.weights(), p, batch.seed())?.variance;
    let mut c = BTreeMap::new();
    c.insert("T_inf".into(), crate::estimators::variance_horizon());
    let tolerance = 1e-6 * rhs.value.abs().max(1.0);
    Ok(InequalityReport::new(
        "variance_representation",
        format!("f={}", f.name()),
        op.measure(),
        lhs,
        rhs,
        Relation::Equal { tolerance },
        c,
    ))
}

/// `Ent(g) ≤` the entropy representation truncated at `T = constants.horizon`,
/// direct entropy on `batch`.
pub fn entropy_representation_check(
    g: &TestFunction,
    op: &SemigroupOperator,
    batch: &SampleBatch,
    constants: &BoundConstants,
    p: &McParams,
) -> Result<InequalityReport> {
    check_arity(g, batch)?;
    let lhs = entropy_of(&batch.map(|x| g.eval(x)), batch.weights(), p, batch.seed())?;
    let rhs = entropy_representation(g, op, constants.rho, constants.horizon, p)?;
    Ok(InequalityReport::new(
        "entropy_representation",
        format!("g={}", g.name()),
        op.measure(),
        lhs,
        rhs,
        Relation::LessEq,
        constants.map(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Root of x²/log(e + x) = 1 by bisection.
    fn phi_root_one() -> f64 {
        let (mut lo, mut hi) = (1.0f64, 2.0f64);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid * mid / (std::f64::consts::E + mid).ln() < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    #[test]
    fn constants_closed_forms() {
        let c = BoundConstants::new(1.0, -1.0, None).unwrap();
        assert_relative_eq!(c.c_rho_kappa, 2.0 / (1.0 - (-1.0f64).exp()), epsilon = 1e-12);
        assert!((c.c_rho_kappa - 3.1639).abs() < 1e-4);
        let c0 = BoundConstants::new(1.0, 0.0, None).unwrap();
        assert!((c0.c_rho_kappa - 8.600).abs() < 1e-3);
        let inf = BoundConstants::new(1.0, -1.0, Some(60.0)).unwrap();
        assert_relative_eq!(inf.c_rho_kappa, 2.0, epsilon = 1e-12);
        assert!(BoundConstants::new(0.0, 1.0, None).is_err());
        assert!(BoundConstants::new(-1.0, 1.0, None).is_err());
        assert_relative_eq!(c.herbst_c, 1.0 / (2.0 * c.c_rho_kappa));
        // nondecreasing in kappa
        let mut prev = 0.0;
        for k in -20..=20 {
            let v = BoundConstants::new(0.7, k as f64 * 0.25, None).unwrap().c_rho_kappa;
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn lower_tail_bound_values() {
        let c = BoundConstants::new(1.0, -1.0, None).unwrap();
        assert_eq!(lower_tail_bound(&c, 1.0, 0.0), 1.0);
        assert!((lower_tail_bound(&c, 1.0, 2.0) - 0.729).abs() < 1e-3);
        let mut prev = 1.0;
        for k in 0..100 {
            let b = lower_tail_bound(&c, 0.3, k as f64 * 0.1);
            assert!(b <= prev);
            prev = b;
        }
    }

    #[test]
    fn chernoff_recovers_gaussian_bound() {
        let (a, t) = (2.5f64, 1.3f64);
        let grid: Vec<f64> = (0..=2000).map(|k| k as f64 * 0.001).collect();
        let exact = (-t * t / (4.0 * a)).exp();
        assert_relative_eq!(chernoff_bound(a, t, &grid), exact, max_relative = 1e-5);
    }

    #[test]
    fn baselines() {
        let b = baseline_bound(BaselineKind::GaussianLipschitz { lip: 1.0, t: 2.0 }).unwrap();
        assert!((b.value - 0.2707).abs() < 1e-4);
        let var = 1.0 / 1024f64.ln();
        let d = baseline_bound(BaselineKind::Dung { variance: var, t: 1.0 }).unwrap();
        assert!((d.value - 9.8e-4).abs() < 1e-5, "{}", d.value);
        let pv = baseline_bound(BaselineKind::PaourisValettas { c: 1.0, variance: 1.0, t: 1.0 }).unwrap();
        assert_relative_eq!(pv.value, (-1.0f64).exp());
        assert!(pv.flags.contains(&"t_outside_validity".to_string()));
        assert!(baseline_bound(BaselineKind::Dung { variance: 0.0, t: 1.0 }).is_err());
        assert!(baseline_bound(BaselineKind::GaussianLipschitz { lip: -1.0, t: 1.0 }).is_err());
    }

    fn est(v: f64, lo: f64, hi: f64) -> EstimateWithCI {
        let mut e = EstimateWithCI::exact(v, "t");
        e.ci_low = lo;
        e.ci_high = hi;
        e.std_error = (hi - lo) / 5.0;
        e
    }

    #[test]
    fn verdict_rules() {
        assert_eq!(decide(&est(1.0, 0.9, 1.1), &est(2.0, 1.9, 2.1), Relation::LessEq).0, Verdict::Pass);
        assert_eq!(decide(&est(2.0, 1.9, 2.1), &est(1.0, 0.9, 1.1), Relation::LessEq).0, Verdict::Fail);
        assert_eq!(decide(&est(1.0, 0.9, 1.1), &est(1.05, 0.95, 1.15), Relation::LessEq).0, Verdict::Inconclusive);
        // slack lets exact equality pass
        assert_eq!(decide(&est(1.0 + 1e-9, 1.0 + 1e-9, 1.0 + 1e-9), &EstimateWithCI::exact(1.0, "x"), Relation::LessEq).0, Verdict::Pass);
        assert_eq!(decide(&est(1.0, 0.9, 1.1), &est(1.02, 0.92, 1.12), Relation::Equal { tolerance: 0.0 }).0, Verdict::Pass);
        assert_eq!(decide(&EstimateWithCI::exact(1.0, "x"), &EstimateWithCI::exact(1.1, "x"), Relation::Equal { tolerance: 1e-8 }).0, Verdict::Fail);
    }

    #[test]
    fn harris_closed_form_and_contract() {
        let g = ProductMeasure::gaussian(1).unwrap();
        let q = g.quadrature(32).unwrap();
        let p = McParams::default();
        let f = TestFunction::linear(vec![1.0]).unwrap();
        let r = harris_check(&f, &f.negated(), &g, &q, &p).unwrap();
        assert_relative_eq!(r.lhs.value, -1.0, epsilon = 1e-12);
        assert!(r.rhs.value.abs() < 1e-12);
        assert_eq!(r.verdict, Verdict::Pass);
        let e = harris_check(&f, &f, &g, &q, &p);
        assert!(matches!(e, Err(Error::Precondition(_))));
    }

    #[test]
    fn poincare_equality_and_entropy_decay_tightness() {
        let g = ProductMeasure::gaussian(1).unwrap();
        let q = g.quadrature(64).unwrap();
        let op = SemigroupOperator::default_for(g.clone(), 0).unwrap();
        let p = McParams::default();
        let lin = TestFunction::linear(vec![1.0]).unwrap();
        let r = functional_check(FunctionalKind::Poincare, &lin, &q, &op, &p).unwrap();
        assert!(r.margin.abs() < 1e-10);
        assert_eq!(r.verdict, Verdict::Pass);
        let e = TestFunction::exp_neg(&lin);
        let r = functional_check(FunctionalKind::EntropyDecay { t: 1.0 }, &e, &q, &op, &p).unwrap();
        let exact = (-2.0f64).exp() * 0.5f64.exp() / 2.0;
        assert_relative_eq!(r.rhs.value, exact, epsilon = 1e-10);
        assert!(r.lhs.value <= exact + 1e-9);
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn hypercontractivity_and_logsob_on_quadrature() {
        let g = ProductMeasure::gaussian(1).unwrap();
        let q = g.quadrature(64).unwrap();
        let op = SemigroupOperator::default_for(g.clone(), 0).unwrap();
        let p = McParams::default();
        let f = TestFunction::softplus_sum(1).unwrap();
        for t in [0.1, 0.5, 1.0] {
            let r = functional_check(FunctionalKind::Hypercontractive { t }, &f, &q, &op, &p).unwrap();
            assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
        }
        let r = functional_check(FunctionalKind::LogSobolev, &f, &q, &op, &p).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn thm2_linear_closed_form() {
        let g = ProductMeasure::gaussian(1).unwrap();
        let q = g.quadrature(64).unwrap();
        let c = BoundConstants::for_measure(&g, None).unwrap();
        let p = McParams::default();
        let lin = TestFunction::linear(vec![1.0]).unwrap();
        let r = thm2_check(&lin, &g, &q, &c, &p).unwrap();
        assert_relative_eq!(r.lhs.value, 0.5f64.exp() / 2.0, epsilon = 1e-9);
        // C·‖1‖²_φ·E e^{-X} with ‖1‖_φ = 1/x*, φ(x*) = 1
        let k = 1.0 / phi_root_one();
        assert_relative_eq!(r.rhs.value, c.c_rho_kappa * k * k * 0.5f64.exp(), max_relative = 3e-4);
        assert_eq!(r.verdict, Verdict::Pass);
        let k = TestFunction::constant(1, 2.0).unwrap();
        let r = thm2_check(&k, &g, &q, &c, &p).unwrap();
        assert_eq!(r.rhs.value, 0.0);
        assert_eq!(r.verdict, Verdict::Pass);
        let m = TestFunction::max(1).unwrap();
        assert!(matches!(thm2_check(&m, &g, &q, &c, &p), Err(Error::Precondition(_))));
    }

    #[test]
    fn gaussian_refinement_ratio_is_half_for_linear() {
        let g = ProductMeasure::gaussian(1).unwrap();
        let q = g.quadrature(64).unwrap();
        let p = McParams::default();
        for scale in [1.0, 2.0] {
            let f = TestFunction::linear(vec![scale]).unwrap();
            let r = gaussian_entropy_variance_check(&f, &g, &q, &p).unwrap();
            assert_relative_eq!(r.lhs.value / r.rhs.value, 0.5, epsilon = 1e-9);
            let e2 = (scale * scale / 2.0f64).exp();
            assert_relative_eq!(r.rhs.value, e2 * scale * scale, epsilon = 1e-8);
        }
        let ex = ProductMeasure::exponential(1).unwrap();
        let b = ex.sample(10, 1).unwrap();
        assert!(gaussian_entropy_variance_check(&TestFunction::linear(vec![1.0]).unwrap(), &ex, &b, &p).is_err());
    }

    #[test]
    fn herbst_linear() {
        let g = ProductMeasure::gaussian(1).unwrap();
        let q = g.quadrature(64).unwrap();
        let c = BoundConstants::for_measure(&g, None).unwrap();
        let p = McParams::default();
        let lin = TestFunction::linear(vec![1.0]).unwrap();
        let s = grad_orlicz_sq(&lin, &q, &p).unwrap();
        let r = herbst_mgf_check(&lin, &g, &q, &c, &s, &[0.0, 1.0], &p).unwrap();
        assert_relative_eq!(r[0].lhs.value, 1.0, epsilon = 1e-12);
        assert_eq!(r[0].verdict, Verdict::Pass);
        assert_relative_eq!(r[1].lhs.value, 0.5f64.exp(), epsilon = 1e-10);
        let k = 1.0 / phi_root_one();
        assert_relative_eq!(r[1].rhs.value, (c.c_rho_kappa * k * k).exp(), max_relative = 1e-3);
        assert!(matches!(herbst_mgf_check(&lin, &g, &q, &c, &s, &[1000.0], &p), Err(Error::Overflow(_))));
    }

    #[test]
    fn gamma_direction_on_exponential() {
        let ex = ProductMeasure::exponential(1).unwrap();
        let p = McParams::new(200_000, 3);
        let b = p.batch(&ex).unwrap();
        let c = BoundConstants::for_measure(&ex, None).unwrap();
        let f = TestFunction::linear(vec![1.0]).unwrap();
        let r = gamma_direction_check(&f, &ex, &b, &c, &p).unwrap();
        // Ent(e^{-X}) for X ~ Exp(1): E[e^{-X}] = 1/2, E[-X e^{-X}] = -1/4
        let exact = -0.25 - 0.5 * 0.5f64.ln();
        assert!((r.lhs.value - exact).abs() < 4.0 * r.lhs.std_error, "{:?}", r.lhs);
        assert_eq!(r.verdict, Verdict::Pass);
        let g = ProductMeasure::gaussian(1).unwrap();
        assert!(gamma_direction_check(&f, &g, &b, &c, &p).is_err());
    }

    #[test]
    fn within_band_verdicts() {
        let band = Relation::Within { low: 0.4, high: 1.6 };
        let e = |v: f64, se: f64| EstimateWithCI::normal(v, se, 0.99, 100, 0, "x");
        let hi = EstimateWithCI::exact(1.6, "band");
        assert_eq!(decide(&e(1.0, 0.01), &hi, band).0, Verdict::Pass);
        assert_eq!(decide(&e(1.59, 0.1), &hi, band).0, Verdict::Inconclusive);
        assert_eq!(decide(&e(0.2, 0.01), &hi, band).0, Verdict::Fail);
    }

    #[test]
    fn lower_tail_softplus_on_gaussian() {
        let f = TestFunction::softplus_sum(8).unwrap();
        let g8 = ProductMeasure::gaussian(8).unwrap();
        let c = BoundConstants::for_measure(&g8, None).unwrap();
        let r = lower_tail_check(&f, &g8, &c, &[0.0, 0.25, 1.0], Some(1.0), &McParams::new(50_000, 2)).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r[0].rhs.value, 1.0);
        for rep in &r {
            assert_ne!(rep.verdict, Verdict::Fail, "{rep:?}");
            assert!(rep.lhs.ci_low <= rep.rhs.value);
        }
        assert!(r[2].constants.contains_key("baseline_dung"));
        assert!(r[2].constants.contains_key("baseline_gaussian_lipschitz"));
        assert!(lower_tail_check(&TestFunction::max(8).unwrap(), &g8, &c, &[0.5], None, &McParams::new(100, 1)).is_err());
    }

    #[test]
    fn representation_reports() {
        let g2 = ProductMeasure::gaussian(2).unwrap();
        let op = SemigroupOperator::default_for(g2.clone(), 1).unwrap();
        let p = McParams::new(50_000, 4);
        let f = TestFunction::softplus_sum(2).unwrap();
        let r = variance_representation_check(&f, &op, &g2.quadrature(64).unwrap(), &p).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
        let g1 = ProductMeasure::gaussian(1).unwrap();
        let op1 = SemigroupOperator::default_for(g1.clone(), 1).unwrap();
        let c = BoundConstants::for_measure(&g1, None).unwrap();
        let e = TestFunction::exp_neg(&TestFunction::coordinate(1, 0).unwrap());
        let r = entropy_representation_check(&e, &op1, &g1.quadrature(64).unwrap(), &c, &McParams::new(2_000, 4)).unwrap();
        // Ent(e^{-X}) = e^{1/2}/2 exactly; the representation is tight here
        assert_relative_eq!(r.lhs.value, 0.5 * 0.5f64.exp(), max_relative = 1e-9);
        assert!(r.rhs.value >= r.lhs.value - 3.0 * r.rhs.std_error);
        assert!(r.rhs.value <= 2.5 * r.lhs.value);
    }
}
