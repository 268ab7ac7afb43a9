//! Estimating the Information Bottleneck learnability threshold β₀.
//!
//! The IB objective `I(X;Z) − β·I(Y;Z)` only admits a non-trivial encoder once
//! β exceeds a dataset-dependent threshold β₀. This crate estimates β₀ for
//! finite datasets in several independent ways and checks the estimates
//! against an exact tabular IB solver swept over β:
//!
//! | Route | Module | Kind |
//! |-------|--------|------|
//! | conspicuous-subset search over sorted `p(y|x)` | [`estimators::subset`] | upper bound |
//! | class-conditional noise closed form | [`estimators::class_conditional`] | exact under its assumptions |
//! | minimization of the `β₀[h]` functional | [`estimators::functional`] | `1/ρ²ₘ` |
//! | maximum correlation via SVD | [`estimators::maxcorr`] | `1/ρ²ₘ` |
//! | information-density ratio | [`estimators::subset`] | diagnostic only |
//! | β sweep of the tabular solver | [`ib_solver`] | empirical onset |
//!
//! Synthetic 2D Gaussian-mixture datasets with label noise and class overlap
//! live in [`synth`], and a small MLP for estimating `p(y|x)` from samples in
//! [`classifier`].

// Negated comparisons such as `!(x > 0.0)` deliberately reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod dist;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod ib_solver;
pub mod rng;
pub mod synth;

pub use dist::{ConditionalMatrix, DiscreteJoint, LogBase, Marginal};
pub use error::{Error, Result};
pub use estimators::{BetaEstimate, Method, SubsetResult};
pub use ib_solver::{Encoder, SweepResult};
