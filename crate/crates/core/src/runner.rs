//! JSON experiment configurations, suite execution and report files.
//!
//! A configuration holds a mandatory `seed`, optional `workers`, `output`
//! and default `mc` parameters, and one or more experiments. A single
//! experiment may be written inline at the top level (`suite`, `measure`,
//! `f`, `g`, ...); further ones go in `experiments`. Unknown keys are
//! rejected with the path of the offending entry.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "suite": ["harris"],
//!   "measure": {"family": "gaussian", "n": 2},
//!   "f": {"name": "linear", "params": {"c": [1, 1]}},
//!   "g": {"name": "linear", "params": {"c": [-1, -1]}}
//! }
//! ```
//!
//! Every check of an experiment gets seeds derived from the global seed and
//! the `label/check` pair, so results do not depend on scheduling. All
//! preconditions (function classes, measure families, backends) are
//! validated before any sampling. Experiments run concurrently on a pool of
//! `workers` threads (`CONCLAB_WORKERS` overrides); within an experiment the
//! checks run in order and the first `fail` verdict halts it, with the
//! experiment configuration echoed in the failing report.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::estimators::{grad_orlicz_sq, moments_of, McParams};
use crate::extremes::{
    gumbel_fit, gumbel_median, gumbel_skewness, median_gradient_orlicz_sq, scaling_experiment, write_scaling_csv, ScalingRow,
    Statistic,
};
use crate::functions::{ClassTag, TestFunction};
use crate::inequalities::{
    entropy_representation_check, functional_check, gamma_direction_check, gaussian_entropy_variance_check, harris_check,
    herbst_mgf_check, lower_tail_check, thm2_check, variance_representation_check, BoundConstants, FunctionalKind,
    InequalityReport, Relation, Verdict,
};
use crate::measures::{Family, Potential1D, ProductMeasure, SampleBatch};
use crate::quadrature::gauss_legendre;
use crate::report::{self, Tally};
use crate::rng::derive_seed;
use crate::semigroup::{default_hermite_order, default_sde_step, Backend, SemigroupOperator, DEFAULT_MEHLER_PATHS, DEFAULT_SDE_PATHS};
use crate::stats::{normal_cdf, EstimateWithCI};
use crate::upper_tail::{covariance_identity_check, dung_tail_check, mean_identity_check, sign_check, TOperator};

/// Environment variable overriding the worker budget.
pub const WORKERS_ENV: &str = "CONCLAB_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Gaussian,
    Exponential,
    DoubleWell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    pub family: FamilyName,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DoubleWellParams {
    a: f64,
    b: f64,
}

impl MeasureSpec {
    /// Builds the measure; `rho_override` (from `constants.rho`) wins over
    /// `rho`. Double-well products need `rho`.
    pub fn build(&self, rho_override: Option<f64>) -> Result<ProductMeasure> {
        let rho = rho_override.or(self.rho);
        let no_params = |fam: &str| match &self.params {
            None => Ok(()),
            Some(Value::Object(m)) if m.is_empty() => Ok(()),
            Some(_) => Err(Error::param("params", format!("{fam} takes no parameters"))),
        };
        let mut m = match self.family {
            FamilyName::Gaussian => {
                no_params("gaussian")?;
                ProductMeasure::gaussian(self.n)?
            }
            FamilyName::Exponential => {
                no_params("exponential")?;
                ProductMeasure::exponential(self.n)?
            }
            FamilyName::DoubleWell => {
                let p: DoubleWellParams = match &self.params {
                    Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::param("params", e.to_string()))?,
                    None => return Err(Error::param("params", "double_well needs {\"a\": .., \"b\": ..}")),
                };
                let r = rho.ok_or_else(|| Error::param("rho", "double_well needs rho (no default is derived for non-convex potentials)"))?;
                if self.n == 0 {
                    return Err(Error::InvalidDimension(0));
                }
                return match self.lambda {
                    Some(l) => ProductMeasure::general(vec![Potential1D::double_well(p.a, p.b)?; self.n], r)?.with_lambda(l),
                    None => ProductMeasure::general(vec![Potential1D::double_well(p.a, p.b)?; self.n], r),
                };
            }
        };
        if let Some(l) = self.lambda {
            m = m.with_lambda(l)?;
        }
        if let Some(r) = rho {
            m = m.with_rho(r)?;
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Value>,
}

impl FunctionSpec {
    pub fn build(&self, n: usize) -> Result<TestFunction> {
        let params = self.params.clone().unwrap_or(Value::Object(Default::default()));
        TestFunction::builtin(&self.name, &params, n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendName {
    MehlerQuadrature,
    MehlerMc,
    SdeEuler,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemigroupSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sde_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
}

impl SemigroupSpec {
    fn build(&self, measure: &ProductMeasure, seed: u64) -> Result<SemigroupOperator> {
        let name = match self.backend {
            Some(b) => b,
            None => match SemigroupOperator::default_for(measure.clone(), seed)?.backend() {
                Backend::MehlerQuadrature { .. } => BackendName::MehlerQuadrature,
                Backend::MehlerMc { .. } => BackendName::MehlerMc,
                Backend::SdeEuler { .. } => BackendName::SdeEuler,
            },
        };
        let backend = match name {
            BackendName::MehlerQuadrature => Backend::MehlerQuadrature {
                order: self.order.unwrap_or_else(|| default_hermite_order(measure.dim())),
            },
            BackendName::MehlerMc => Backend::MehlerMc {
                paths: self.paths.unwrap_or(DEFAULT_MEHLER_PATHS),
            },
            BackendName::SdeEuler => Backend::SdeEuler {
                step: self.sde_step.unwrap_or_else(|| default_sde_step(measure.kappa())),
                paths: self.paths.unwrap_or(DEFAULT_SDE_PATHS),
            },
        };
        SemigroupOperator::new(measure.clone(), backend, seed)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paouris_c: Option<f64>,
}

/// Monte Carlo parameters of a configuration or of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSpec {
    /// Replaces the top-level seed for the experiments using this block.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub samples: usize,
    pub confidence: f64,
    pub bisect_tol: f64,
}

impl Default for McSpec {
    fn default() -> Self {
        let d = McParams::default();
        McSpec {
            seed: None,
            samples: d.samples,
            confidence: d.confidence,
            bisect_tol: d.bisect_tol,
        }
    }
}

impl McSpec {
    fn params(&self, seed: u64) -> McParams {
        McParams {
            samples: self.samples,
            seed,
            confidence: self.confidence,
            bisect_tol: self.bisect_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub json: String,
    pub csv: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: PathBuf::from("."),
            json: "report.json".into(),
            csv: "summary.csv".into(),
        }
    }
}

/// Check names accepted in `suite`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Harris,
    KernelHarris,
    Commutation,
    Poincare,
    LogSobolev,
    Hypercontractive,
    EntropyDecay,
    Thm2,
    GaussianEntropyVariance,
    Herbst,
    LowerTail,
    GammaDirection,
    VarianceRepresentation,
    EntropyRepresentation,
    CovarianceIdentity,
    TMeanIdentity,
    TSign,
    Dung,
    MaxMoments,
    MaxScaling,
    MedianScaling,
    Gumbel,
}

impl Check {
    pub fn name(self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
    }

    fn needs_measure(self) -> bool {
        !matches!(self, Check::MaxScaling | Check::MedianScaling | Check::Gumbel)
    }

    fn needs_g(self) -> bool {
        matches!(self, Check::Harris | Check::KernelHarris | Check::CovarianceIdentity)
    }

    fn gaussian_only(self) -> bool {
        matches!(
            self,
            Check::GaussianEntropyVariance
                | Check::VarianceRepresentation
                | Check::EntropyRepresentation
                | Check::CovarianceIdentity
                | Check::TMeanIdentity
                | Check::TSign
                | Check::Dung
                | Check::MaxMoments
        )
    }
}

/// One experiment: a measure, test functions and the checks to run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub suite: Vec<Check>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<FunctionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<FunctionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semigroup: Option<SemigroupSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsSpec>,
    /// Deviation levels for tail checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_grid: Option<Vec<f64>>,
    /// Points for pointwise semigroup and `T_f` checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<Vec<Vec<f64>>>,
    /// Dimensions for scaling and Gumbel experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    /// Outer expectations by Gaussian tensor quadrature of this order
    /// instead of Monte Carlo.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature_order: Option<usize>,
    /// Replications for the Orlicz norm of the median gradient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orlicz_samples: Option<usize>,
}

/// Top-level configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub mc: McSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<Vec<Check>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<FunctionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<FunctionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semigroup: Option<SemigroupSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature_order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orlicz_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub experiments: Vec<Experiment>,
}

impl Config {
    /// Parses and validates; errors carry the JSON path.
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: format!("{origin}: {}", e.path()),
            message: e.inner().to_string(),
        })?;
        cfg.validate(origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text, &path.display().to_string())
    }

    fn validate(&self, origin: &str) -> Result<()> {
        let err = |path: String, message: &str| Error::Config {
            path: format!("{origin}: {path}"),
            message: message.to_string(),
        };
        let inline_used = self.measure.is_some()
            || self.f.is_some()
            || self.g.is_some()
            || self.label.is_some()
            || self.semigroup.is_some()
            || self.constants.is_some()
            || self.t_grid.is_some()
            || self.theta_grid.is_some()
            || self.probes.is_some()
            || self.n_list.is_some()
            || self.quadrature_order.is_some()
            || self.orlicz_samples.is_some();
        if self.suite.is_none() && inline_used {
            return Err(err(".suite".into(), "top-level experiment fields given without a suite"));
        }
        let exps = self.experiments();
        if exps.is_empty() {
            return Err(err(".suite".into(), "no experiment: give a suite or a non-empty experiments list"));
        }
        let mut labels = BTreeSet::new();
        for (k, (label, e)) in exps.iter().enumerate() {
            let at = if self.suite.is_some() && k == 0 {
                String::new()
            } else {
                format!(".experiments[{}]", if self.suite.is_some() { k - 1 } else { k })
            };
            if e.suite.is_empty() {
                return Err(err(format!("{at}.suite"), "suite must not be empty"));
            }
            if !labels.insert(label.clone()) {
                return Err(err(format!("{at}.label"), &format!("duplicate label {label:?}")));
            }
        }
        if let Some(0) = self.workers {
            return Err(err(".workers".into(), "must be at least 1"));
        }
        Ok(())
    }

    /// Experiments with their labels, the inline one first.
    pub fn experiments(&self) -> Vec<(String, Experiment)> {
        let mut out = Vec::new();
        if let Some(suite) = &self.suite {
            let e = Experiment {
                label: self.label.clone(),
                suite: suite.clone(),
                measure: self.measure.clone(),
                f: self.f.clone(),
                g: self.g.clone(),
                mc: None,
                semigroup: self.semigroup.clone(),
                constants: self.constants,
                t_grid: self.t_grid.clone(),
                theta_grid: self.theta_grid.clone(),
                probes: self.probes.clone(),
                n_list: self.n_list.clone(),
                quadrature_order: self.quadrature_order,
                orlicz_samples: self.orlicz_samples,
            };
            out.push(e);
        }
        out.extend(self.experiments.iter().cloned());
        out.into_iter()
            .enumerate()
            .map(|(k, e)| (e.label.clone().unwrap_or_else(|| format!("exp{k}")), e))
            .collect()
    }

    /// Worker budget: `CONCLAB_WORKERS`, then `workers`, then all cores.
    pub fn worker_budget(&self) -> Result<usize> {
        if let Ok(v) = std::env::var(WORKERS_ENV) {
            return match v.trim().parse::<usize>() {
                Ok(w) if w > 0 => Ok(w),
                _ => Err(Error::param(WORKERS_ENV, format!("expected a positive integer, got {v:?}"))),
            };
        }
        Ok(self.workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)))
    }
}

/// An extra CSV table produced by a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file_name: String,
    pub contents: String,
}

/// Result of a run before anything is written.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub reports: Vec<InequalityReport>,
    pub tables: Vec<Table>,
    /// Labels of experiments halted by a failing check.
    pub halted: Vec<String>,
}

impl RunOutcome {
    pub fn tally(&self) -> Tally {
        Tally::of(&self.reports)
    }

    /// 0 when every verdict is pass, 2 when some are inconclusive and none
    /// fail, 1 on any failure.
    pub fn exit_code(&self) -> i32 {
        let t = self.tally();
        if t.fail > 0 {
            1
        } else if t.inconclusive > 0 {
            2
        } else {
            0
        }
    }

    /// Writes the JSON report, the CSV summary and the extra tables into
    /// `dir`; returns the written paths.
    pub fn write(&self, output: &OutputSpec, dir: Option<&Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.unwrap_or(&output.dir);
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let json = dir.join(&output.json);
        fs::write(&json, report::to_json(&self.reports)?)?;
        written.push(json);
        let csv = dir.join(&output.csv);
        fs::write(&csv, report::to_csv(&self.reports)?)?;
        written.push(csv);
        for t in &self.tables {
            let p = dir.join(&t.file_name);
            fs::write(&p, &t.contents)?;
            written.push(p);
        }
        Ok(written)
    }
}

/// An experiment with every object built and every precondition checked.
struct Plan {
    label: String,
    exp: Experiment,
    measure: Option<ProductMeasure>,
    f: Option<TestFunction>,
    g: Option<TestFunction>,
    seed: u64,
    mc: McSpec,
}

fn precondition(label: &str, check: Check, msg: String) -> Error {
    Error::Precondition(format!("experiment {label}, check {}: {msg}", check.name()))
}

fn plan(label: String, exp: Experiment, cfg: &Config) -> Result<Plan> {
    let consts = exp.constants.unwrap_or_default();
    let measure = exp.measure.as_ref().map(|m| m.build(consts.rho)).transpose()?;
    let n = measure.as_ref().map(|m| m.dim());
    let build = |fs: &Option<FunctionSpec>| -> Result<Option<TestFunction>> {
        match (fs, n) {
            (Some(s), Some(n)) => Ok(Some(s.build(n)?)),
            (Some(_), None) => Err(Error::Precondition(format!("experiment {label}: functions need a measure to fix the dimension"))),
            (None, _) => Ok(None),
        }
    };
    let f = build(&exp.f)?;
    let g = build(&exp.g)?;
    let mc = exp.mc.unwrap_or(cfg.mc);
    let seed = derive_seed(mc.seed.unwrap_or(cfg.seed), &label);
    mc.params(seed).validate()?;
    let p = Plan {
        label,
        exp,
        measure,
        f,
        g,
        seed,
        mc,
    };
    for &check in &p.exp.suite {
        p.validate(check)?;
    }
    Ok(p)
}

impl Plan {
    fn validate(&self, check: Check) -> Result<()> {
        let fail = |msg: String| Err(precondition(&self.label, check, msg));
        if !check.needs_measure() {
            if check == Check::MedianScaling {
                if let Some(ns) = &self.exp.n_list {
                    if let Some(n) = ns.iter().find(|n| *n % 2 == 0) {
                        return fail(format!("median needs odd n, got {n}"));
                    }
                }
            }
            return Ok(());
        }
        let Some(m) = &self.measure else {
            return fail("needs a measure".into());
        };
        let Some(f) = &self.f else {
            return fail("needs f".into());
        };
        if check.gaussian_only() && m.family() != Family::Gaussian {
            return fail(format!("needs a Gaussian measure, got {}", m.id()));
        }
        if check.needs_g() && self.g.is_none() {
            return fail("needs g".into());
        }
        match check {
            Check::Harris | Check::KernelHarris => {
                let g = self.g.as_ref().expect("checked");
                if !f.monotonicity().is_opposite(g.monotonicity()) {
                    return fail(format!("f = {} and g = {} are not of opposite monotonicity", f.name(), g.name()));
                }
            }
            Check::Thm2 | Check::GaussianEntropyVariance | Check::Herbst | Check::LowerTail | Check::GammaDirection => {
                if !f.is_c2() || f.class_tag() != ClassTag::FPlus {
                    return fail(format!("f = {} is not C2 / F_+", f.name()));
                }
            }
            Check::Dung | Check::TSign => {
                if !f.is_c2() || f.class_tag() != ClassTag::FMinus {
                    return fail(format!("f = {} is not C2 / F_-", f.name()));
                }
            }
            _ => {}
        }
        if matches!(check, Check::Poincare | Check::LogSobolev) && m.family() == Family::Exponential {
            return fail("the exponential family carries the gradient sqrt(x_i) d_i; these checks use the Euclidean one".into());
        }
        if check == Check::GammaDirection && m.family() != Family::Exponential {
            return fail(format!("needs the exponential family, got {}", m.id()));
        }
        if check == Check::MaxMoments && f.name() != "max" {
            return fail(format!("compares the moments of max, got f = {}", f.name()));
        }
        if matches!(check, Check::TMeanIdentity | Check::TSign | Check::CovarianceIdentity) && m.dim() > crate::measures::MAX_TENSOR_DIM {
            return fail(format!("T_g uses tensor quadrature, limited to n <= {}", crate::measures::MAX_TENSOR_DIM));
        }
        if let Some(q) = self.exp.quadrature_order {
            if m.family() != Family::Gaussian || m.dim() > crate::measures::MAX_TENSOR_DIM || q == 0 {
                return fail(format!("quadrature_order needs a Gaussian measure with n <= {}", crate::measures::MAX_TENSOR_DIM));
            }
        }
        if matches!(
            check,
            Check::KernelHarris
                | Check::Commutation
                | Check::Hypercontractive
                | Check::EntropyDecay
                | Check::VarianceRepresentation
                | Check::EntropyRepresentation
        ) {
            let op = self.operator(check)?;
            let needs_quad = matches!(check, Check::EntropyDecay | Check::EntropyRepresentation);
            if needs_quad && !op.backend_is_exact() {
                return fail("needs the Mehler quadrature backend".into());
            }
            if matches!(check, Check::Hypercontractive | Check::VarianceRepresentation) && !op.is_mehler() {
                return fail("needs a Mehler backend".into());
            }
        }
        Ok(())
    }

    fn seed(&self, check: Check, part: &str) -> u64 {
        derive_seed(self.seed, &format!("{}/{part}", check.name()))
    }

    fn params(&self, check: Check) -> McParams {
        self.mc.params(self.seed(check, "mc"))
    }

    fn measure(&self) -> &ProductMeasure {
        self.measure.as_ref().expect("validated")
    }

    fn f(&self) -> &TestFunction {
        self.f.as_ref().expect("validated")
    }

    fn g(&self) -> &TestFunction {
        self.g.as_ref().expect("validated")
    }

    /// `e^{-f}`, the positive function used by entropy checks.
    fn positive_g(&self) -> TestFunction {
        TestFunction::exp_neg(self.f())
    }

    fn operator(&self, check: Check) -> Result<SemigroupOperator> {
        self.exp
            .semigroup
            .clone()
            .unwrap_or_default()
            .build(self.measure(), self.seed(check, "semigroup"))
    }

    fn constants(&self) -> Result<BoundConstants> {
        let c = self.exp.constants.unwrap_or_default();
        BoundConstants::for_measure(self.measure(), c.horizon)
    }

    fn batch(&self, check: Check, p: &McParams) -> Result<SampleBatch> {
        match self.exp.quadrature_order {
            Some(q) => self.measure().quadrature(q),
            None => self.measure().sample(p.samples, self.seed(check, "batch")),
        }
    }

    fn t_grid(&self, default: &[f64]) -> Vec<f64> {
        self.exp
            .t_grid
            .clone()
            .or_else(|| self.exp.semigroup.as_ref().and_then(|s| s.t_grid.clone()))
            .unwrap_or_else(|| default.to_vec())
    }

    fn semigroup_times(&self) -> Vec<f64> {
        self.exp
            .semigroup
            .as_ref()
            .and_then(|s| s.t_grid.clone())
            .or_else(|| self.exp.t_grid.clone())
            .unwrap_or_else(|| vec![0.5, 1.0])
    }

    fn theta_grid(&self, default: &[f64]) -> Vec<f64> {
        self.exp.theta_grid.clone().unwrap_or_else(|| default.to_vec())
    }

    fn probes(&self, check: Check, random: usize) -> Result<Vec<Vec<f64>>> {
        if let Some(p) = &self.exp.probes {
            return Ok(p.clone());
        }
        let n = self.measure().dim();
        if random > 0 {
            let b = ProductMeasure::gaussian(n)?.sample(random, self.seed(check, "probes"))?;
            return Ok(b.rows().map(|r| r.to_vec()).collect());
        }
        Ok(vec![vec![0.0; n], vec![0.5; n], vec![-1.0; n]])
    }

    fn echo(&self) -> Value {
        let mut v = serde_json::to_value(&self.exp).unwrap_or(Value::Null);
        if let Value::Object(m) = &mut v {
            m.insert("label".into(), Value::String(self.label.clone()));
            m.insert(
                "mc".into(),
                serde_json::to_value(self.mc).unwrap_or(Value::Null),
            );
        }
        v
    }
}

fn band_report(name: &str, subject: String, n: usize, lhs: EstimateWithCI, low: f64, high: f64, extra: BTreeMap<String, f64>) -> Result<InequalityReport> {
    let mut c = extra;
    c.insert("band_low".into(), low);
    c.insert("band_high".into(), high);
    Ok(InequalityReport::new(
        name,
        subject,
        &ProductMeasure::gaussian(n)?,
        lhs,
        EstimateWithCI::exact(high, "band_high"),
        Relation::Within { low, high },
        c,
    ))
}

fn scaling_reports(stat: Statistic, rows: &[ScalingRow], seed: u64, p: &McParams, low: f64, high: f64) -> Result<Vec<InequalityReport>> {
    let name = format!("{}_scaling", stat.name());
    rows.iter()
        .map(|r| {
            let s = stat.scale(r.n);
            let lhs = EstimateWithCI::normal(r.scaled, r.var_hat_se * s, p.confidence, p.samples, seed, "scaled_variance");
            let mut c = BTreeMap::new();
            c.insert("var_hat".into(), r.var_hat);
            if let Some(ks) = r.ks {
                c.insert("ks".into(), ks);
            }
            band_report(&name, format!("{}, n={}", stat.name(), r.n), r.n, lhs, low, high, c)
        })
        .collect()
}

/// Mean and variance of the maximum of `n` standard normals from the
/// density `n φ Φ^{n-1}` by Gauss–Legendre quadrature on `[-12, 12]`.
fn max_moments_oracle(n: usize) -> (f64, f64) {
    let rule = gauss_legendre(400, -12.0, 12.0);
    let nf = n as f64;
    let dens = |x: f64| {
        let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        nf * phi * normal_cdf(x).powf(nf - 1.0)
    };
    let m1 = rule.integrate(|x| x * dens(x));
    let m2 = rule.integrate(|x| x * x * dens(x));
    (m1, m2 - m1 * m1)
}

type Produced = (Vec<InequalityReport>, Vec<Table>);

fn run_check(plan: &Plan, check: Check) -> Result<Produced> {
    let p = plan.params(check);
    let mut tables = Vec::new();
    let reports = match check {
        Check::Harris => vec![harris_check(plan.f(), plan.g(), plan.measure(), &plan.batch(check, &p)?, &p)?],
        Check::KernelHarris => {
            let op = plan.operator(check)?;
            let mut out = Vec::new();
            for t in plan.semigroup_times() {
                for x in plan.probes(check, 0)? {
                    out.push(op.kernel_harris_check(plan.f(), plan.g(), t, &x)?);
                }
            }
            out
        }
        Check::Commutation => {
            let op = plan.operator(check)?;
            let mut out = Vec::new();
            for t in plan.semigroup_times() {
                for x in plan.probes(check, 0)? {
                    out.extend(op.commutation_check(plan.f(), t, &x)?);
                }
            }
            out
        }
        Check::Poincare | Check::LogSobolev => {
            let kind = if check == Check::Poincare { FunctionalKind::Poincare } else { FunctionalKind::LogSobolev };
            // neither kind evaluates the semigroup; the operator only carries the measure
            let op = SemigroupOperator::default_for(plan.measure().clone(), 0)?;
            vec![functional_check(kind, plan.f(), &plan.batch(check, &p)?, &op, &p)?]
        }
        Check::Hypercontractive | Check::EntropyDecay => {
            let op = plan.operator(check)?;
            let batch = plan.batch(check, &p)?;
            let mut out = Vec::new();
            for t in plan.semigroup_times() {
                out.push(if check == Check::Hypercontractive {
                    functional_check(FunctionalKind::Hypercontractive { t }, plan.f(), &batch, &op, &p)?
                } else {
                    functional_check(FunctionalKind::EntropyDecay { t }, &plan.positive_g(), &batch, &op, &p)?
                });
            }
            out
        }
        Check::Thm2 => vec![thm2_check(plan.f(), plan.measure(), &plan.batch(check, &p)?, &plan.constants()?, &p)?],
        Check::GaussianEntropyVariance => vec![gaussian_entropy_variance_check(plan.f(), plan.measure(), &plan.batch(check, &p)?, &p)?],
        Check::Herbst => {
            let batch = plan.batch(check, &p)?;
            let orl = grad_orlicz_sq(plan.f(), &batch, &p)?;
            herbst_mgf_check(plan.f(), plan.measure(), &batch, &plan.constants()?, &orl, &plan.theta_grid(&[0.25, 0.5, 1.0]), &p)?
        }
        Check::LowerTail => {
            let pc = plan.exp.constants.and_then(|c| c.paouris_c);
            lower_tail_check(plan.f(), plan.measure(), &plan.constants()?, &plan.t_grid(&[0.25, 0.5, 1.0]), pc, &p)?
        }
        Check::GammaDirection => vec![gamma_direction_check(plan.f(), plan.measure(), &plan.batch(check, &p)?, &plan.constants()?, &p)?],
        Check::VarianceRepresentation => vec![variance_representation_check(plan.f(), &plan.operator(check)?, &plan.batch(check, &p)?, &p)?],
        Check::EntropyRepresentation => vec![entropy_representation_check(
            &plan.positive_g(),
            &plan.operator(check)?,
            &plan.batch(check, &p)?,
            &plan.constants()?,
            &p,
        )?],
        Check::CovarianceIdentity => {
            let t = TOperator::gaussian(plan.f().clone(), plan.seed(check, "t_operator"))?;
            let batch = plan.batch(check, &p)?;
            plan.theta_grid(&[0.0, 0.5, 1.0])
                .into_iter()
                .map(|th| covariance_identity_check(&t, plan.g(), th, &batch, &p))
                .collect::<Result<_>>()?
        }
        Check::TMeanIdentity => {
            let t = TOperator::gaussian(plan.f().clone(), plan.seed(check, "t_operator"))?;
            let g = plan.g.clone().unwrap_or_else(|| plan.f().clone());
            vec![mean_identity_check(&t, &g, &plan.batch(check, &p)?, &p)?]
        }
        Check::TSign => {
            let t = TOperator::gaussian(plan.f().clone(), plan.seed(check, "t_operator"))?;
            sign_check(&t, &plan.probes(check, 20)?)?
        }
        Check::Dung => dung_tail_check(plan.f(), plan.measure(), &plan.t_grid(&[0.0, 0.1, 0.3, 0.5]), &plan.theta_grid(&[0.5, 1.0, 2.0]), &p)?,
        Check::MaxMoments => {
            let n = plan.measure().dim();
            let (mean, var) = max_moments_oracle(n);
            let batch = plan.batch(check, &p)?;
            let m = moments_of(&batch.map(|x| plan.f().eval(x)), batch.weights(), &p, batch.seed())?;
            let mut c = BTreeMap::new();
            c.insert("oracle_order".into(), 400.0);
            let rel = Relation::Equal { tolerance: 1e-9 };
            vec![
                InequalityReport::new("max_mean", format!("f=max, n={n}"), plan.measure(), m.mean, EstimateWithCI::exact(mean, "order_statistic_quadrature"), rel, c.clone()),
                InequalityReport::new("max_variance", format!("f=max, n={n}"), plan.measure(), m.variance, EstimateWithCI::exact(var, "order_statistic_quadrature"), rel, c),
            ]
        }
        Check::MaxScaling | Check::MedianScaling => {
            let stat = if check == Check::MaxScaling { Statistic::Max } else { Statistic::Median };
            let default: Vec<usize> = match stat {
                Statistic::Max => (7..=16).map(|k| 1usize << k).collect(),
                Statistic::Median => vec![101, 401, 1601],
            };
            let ns = plan.exp.n_list.clone().unwrap_or(default);
            let rows = scaling_experiment(stat, &ns, &p)?;
            let mut buf = Vec::new();
            write_scaling_csv(&rows, &mut buf)?;
            tables.push(Table {
                file_name: format!("{}_{}.csv", plan.label, check.name()),
                contents: String::from_utf8(buf).map_err(|e| Error::Report(e.to_string()))?,
            });
            let (low, high) = match stat {
                Statistic::Max => (0.4, 1.6),
                Statistic::Median => (1.0, 2.2),
            };
            let mut out = scaling_reports(stat, &rows, p.seed, &p, low, high)?;
            if stat == Statistic::Median {
                let op = McParams {
                    samples: plan.exp.orlicz_samples.unwrap_or(20_000),
                    ..p
                };
                for &n in &ns {
                    let e = median_gradient_orlicz_sq(n, &op)?;
                    let l = (n as f64).ln();
                    let mut c = BTreeMap::new();
                    c.insert("grad_orlicz_sq".into(), e.value);
                    out.push(band_report("median_gradient_orlicz", format!("median, n={n}"), n, e.scaled(l), 0.3, 3.0, c)?);
                }
            }
            out
        }
        Check::Gumbel => {
            let ns = plan.exp.n_list.clone().unwrap_or_else(|| vec![10_000]);
            let mut out = Vec::new();
            let mut qq = String::from("n,p,empirical,gumbel\n");
            for n in ns {
                let fit = gumbel_fit(n, &p)?;
                for q in &fit.qq_table {
                    qq.push_str(&format!("{n},{},{},{}\n", q.p, q.empirical, q.gumbel));
                }
                let subject = format!("max, n={n}");
                let mut ks = EstimateWithCI::exact(fit.ks_statistic, "ks_distance").with_count(fit.samples).with_seed(fit.seed);
                ks.flags.push("point_estimate".into());
                out.push(InequalityReport::new(
                    "gumbel_ks",
                    subject.clone(),
                    &ProductMeasure::gaussian(n)?,
                    ks,
                    EstimateWithCI::exact(0.1, "ks_threshold"),
                    Relation::LessEq,
                    BTreeMap::new(),
                ));
                // asymptotic SE of a sample median: 1/(2 g(m) √N), g the Gumbel density
                let m0 = gumbel_median();
                let dens = (-m0).exp() * (-(-m0).exp()).exp();
                let se = 1.0 / (2.0 * dens * (fit.samples as f64).sqrt());
                let med = EstimateWithCI::normal(fit.median, se, p.confidence, fit.samples, fit.seed, "sample_median");
                let mut c = BTreeMap::new();
                c.insert("gumbel_median".into(), m0);
                out.push(band_report("gumbel_median", subject.clone(), n, med, m0 - 0.05, m0 + 0.05, c)?);
                let mut sk = EstimateWithCI::exact(fit.skewness, "sample_skewness").with_count(fit.samples).with_seed(fit.seed);
                sk.flags.push("point_estimate".into());
                let s0 = gumbel_skewness();
                let mut c = BTreeMap::new();
                c.insert("gumbel_skewness".into(), s0);
                out.push(band_report("gumbel_skewness", subject, n, sk, s0 - 0.3, s0 + 0.3, c)?);
            }
            tables.push(Table {
                file_name: format!("{}_gumbel_qq.csv", plan.label),
                contents: qq,
            });
            out
        }
    };
    Ok((reports, tables))
}

fn run_plan(plan: &Plan) -> Result<(Produced, bool)> {
    let mut reports = Vec::new();
    let mut tables = Vec::new();
    for &check in &plan.exp.suite {
        let (rs, ts) = run_check(plan, check).map_err(|e| Error::Check {
            label: plan.label.clone(),
            check: check.name(),
            source: Box::new(e),
            config: plan.echo().to_string(),
        })?;
        tables.extend(ts);
        let mut halted = false;
        for mut r in rs {
            if r.verdict == Verdict::Fail && !halted {
                r.config = Some(plan.echo());
                halted = true;
            }
            r.subject = format!("{}: {}", plan.label, r.subject);
            reports.push(r);
        }
        if halted {
            return Ok(((reports, tables), true));
        }
    }
    Ok(((reports, tables), false))
}

/// Validates every experiment, then runs them on `workers` threads.
pub fn run(cfg: &Config, workers: usize) -> Result<RunOutcome> {
    let plans: Vec<Plan> = cfg.experiments().into_iter().map(|(l, e)| plan(l, e, cfg)).collect::<Result<_>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Backend(format!("thread pool: {e}")))?;
    let results: Vec<Result<(Produced, bool)>> = pool.install(|| plans.par_iter().map(run_plan).collect());
    let mut out = RunOutcome {
        reports: Vec::new(),
        tables: Vec::new(),
        halted: Vec::new(),
    };
    for (plan, res) in plans.iter().zip(results) {
        let ((rs, ts), halted) = res?;
        out.reports.extend(rs);
        out.tables.extend(ts);
        if halted {
            out.halted.push(plan.label.clone());
        }
    }
    out.reports = report::sorted(&out.reports);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HARRIS: &str = r#"{
        "seed": 7,
        "suite": ["harris"],
        "measure": {"family": "gaussian", "n": 2},
        "f": {"name": "linear", "params": {"c": [1, 1]}},
        "g": {"name": "linear", "params": {"c": [-1, -1]}},
        "mc": {"samples": 20000}
    }"#;

    #[test]
    fn harris_config_passes() {
        let cfg = Config::from_json(HARRIS, "inline").unwrap();
        let out = run(&cfg, 2).unwrap();
        assert_eq!(out.reports.len(), 1);
        assert_eq!(out.reports[0].verdict, Verdict::Pass);
        assert_eq!(out.exit_code(), 0);
    }

    #[test]
    fn schema_errors_have_paths() {
        let e = Config::from_json(r#"{"seed": 1, "suite": []}"#, "c.json").unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path.ends_with(".suite")), "{e}");
        let e = Config::from_json(r#"{"suite": ["harris"]}"#, "c.json").unwrap_err();
        assert!(e.to_string().contains("seed"), "{e}");
        let e = Config::from_json(r#"{"seed": 1, "suite": ["harris"], "measure": {"family": "gaussian", "n": 2, "bogus": 1}}"#, "c.json").unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path.contains("measure")), "{e}");
        let e = Config::from_json(r#"{"seed": 1, "suite": ["nonsense"]}"#, "c.json").unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path.contains("suite[0]")), "{e}");
        let e = Config::from_json(r#"{"seed": 1}"#, "c.json").unwrap_err();
        assert!(matches!(e, Error::Config { .. }));
        let e = Config::from_json(r#"{"seed": 1, "experiments": [{"suite": ["gumbel"], "label": "a"}, {"suite": ["gumbel"], "label": "a"}]}"#, "c").unwrap_err();
        assert!(e.to_string().contains("duplicate"), "{e}");
    }

    #[test]
    fn thm2_with_max_is_rejected_before_sampling() {
        let cfg = Config::from_json(
            r#"{"seed": 1, "suite": ["thm2"], "measure": {"family": "gaussian", "n": 2}, "f": {"name": "max"}}"#,
            "c",
        )
        .unwrap();
        let e = run(&cfg, 1).unwrap_err();
        assert!(matches!(&e, Error::Precondition(m) if m.contains("not C2 / F_+")), "{e}");
    }

    #[test]
    fn double_well_needs_rho() {
        let ms: MeasureSpec = serde_json::from_str(r#"{"family": "double_well", "n": 2, "params": {"a": 1, "b": 1}}"#).unwrap();
        assert!(ms.build(None).is_err());
        let m = ms.build(Some(0.5)).unwrap();
        assert_eq!(m.kappa(), 2.0);
        assert_eq!(m.rho(), 0.5);
    }

    #[test]
    fn max_moments_oracle_closed_form() {
        let (m, v) = max_moments_oracle(2);
        assert!((m - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-10);
        assert!((v - (1.0 - 1.0 / std::f64::consts::PI)).abs() < 1e-10);
        let (m1, v1) = max_moments_oracle(1);
        assert!(m1.abs() < 1e-12 && (v1 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn failing_check_halts_with_config_echo() {
        // at n = 3 the renormalized median is far from the Gumbel limit
        let cfg = Config::from_json(
            r#"{"seed": 3, "suite": ["gumbel", "max_scaling"], "n_list": [3], "mc": {"samples": 20000}}"#,
            "c",
        )
        .unwrap();
        let out = run(&cfg, 1).unwrap();
        assert_eq!(out.halted, vec!["exp0".to_string()]);
        assert_eq!(out.exit_code(), 1);
        let failed: Vec<_> = out.reports.iter().filter(|r| r.verdict == Verdict::Fail).collect();
        assert!(failed[0].config.is_some());
        assert!(out.reports.iter().all(|r| r.name != "max_scaling"));
    }

    #[test]
    fn identical_runs_are_byte_identical() {
        let cfg = Config::from_json(HARRIS, "inline").unwrap();
        let a = report::to_json(&run(&cfg, 1).unwrap().reports).unwrap();
        let b = report::to_json(&run(&cfg, 3).unwrap().reports).unwrap();
        assert_eq!(a, b);
    }
}
