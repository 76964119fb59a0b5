//! Numerical laboratory for one-sided deviation inequalities of product
//! measures on R^n.
//!
//! The crate evaluates both sides of classical functional inequalities
//! (Harris, Poincaré, log-Sobolev, hypercontractivity, entropy decay) and of
//! the improved lower-tail bound for monotone functions with nonnegative
//! second derivatives, using Monte Carlo and quadrature estimators that carry
//! confidence intervals. Every comparison is rendered as an
//! [`InequalityReport`] with a deterministic verdict.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`measures`] | product measures, potentials, exact and MALA samplers |
//! | [`functions`] | test functions with derivative oracles and class tags |
//! | [`semigroup`] | Mehler quadrature / Monte Carlo and Euler–Maruyama semigroups |
//! | [`estimators`] | moments, entropy, Orlicz norms, tails, semigroup representations |
//! | [`inequalities`] | bound constants and the inequality checks |
//! | [`upper_tail`] | the covariance operator `T_g` and the upper-tail bound |
//! | [`extremes`] | Gumbel norming and superconcentration scaling |
//! | [`runner`] | JSON experiment configs, suites and report files |

pub mod error;
pub mod estimators;
pub mod extremes;
pub mod functions;
pub mod inequalities;
pub mod measures;
pub mod quadrature;
pub mod report;
pub mod rng;
pub mod runner;
pub mod semigroup;
pub mod stats;
pub mod upper_tail;

pub use error::{Error, Result};
pub use estimators::McParams;
pub use inequalities::{BoundConstants, InequalityReport, Verdict};
pub use functions::{ClassTag, Monotonicity, TestFunction};
pub use measures::{Family, Potential1D, ProductMeasure, SampleBatch};
pub use semigroup::{Backend, GradMethod, SemigroupOperator};
pub use stats::EstimateWithCI;
