//! Theoretical estimators of the learnability threshold β₀.
//!
//! All of them, except the information-density diagnostic, produce values
//! bracketing β₀ from above: for any dataset
//! `subset_search ≥ inf_h β₀[h] = 1/ρ²ₘ ≥ β₀ ≥ 1`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dist::Marginal;

pub mod class_conditional;
pub mod functional;
pub mod maxcorr;
pub mod onset;
pub mod subset;

pub use class_conditional::corollary_class_conditional;
pub use functional::{beta0_functional, minimize_functional, FunctionalConfig};
pub use maxcorr::{functional_minimizer_svd, max_correlation, MaxCorrelation};
pub use onset::onset_prediction;
pub use subset::{
    get_beta, info_density_estimate, subset_estimate, subset_search, CandidateFamily, SearchStrategy, SubsetSearch,
};

/// Which route produced a [`BetaEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SubsetSearch,
    ClassConditional,
    Functional,
    MaxCorrelationInverse,
    EmpiricalSweep,
    InfoDensity,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::SubsetSearch => "subset_search",
            Method::ClassConditional => "class_conditional",
            Method::Functional => "functional",
            Method::MaxCorrelationInverse => "max_correlation_inverse",
            Method::EmpiricalSweep => "empirical_sweep",
            Method::InfoDensity => "info_density",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The conspicuous subset Ω found by [`subset_search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    pub beta0: f64,
    pub pivot_class: usize,
    /// Sorted original example indices forming Ω.
    pub member_indices: Vec<usize>,
    /// `p(Ω)`.
    pub p_omega: f64,
    pub p_y_given_omega: Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub value: f64,
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset: Option<SubsetResult>,
    /// Minimizing perturbation direction `h*(x)`, normalized to zero mean and
    /// unit variance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_vector: Option<Vec<f64>>,
    pub diagnostics: BTreeMap<String, serde_json::Value>,
}

impl BetaEstimate {
    pub fn new(method: Method, value: f64) -> Self {
        Self {
            value,
            method,
            subset: None,
            h_vector: None,
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn with_diagnostic(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.diagnostics.insert(key.to_string(), value.into());
        self
    }

    /// True when the value is a heuristic rather than an upper bound on β₀.
    pub fn is_diagnostic_only(&self) -> bool {
        self.diagnostics
            .get("diagnostic_only")
            .and_then(serde_json::Value::as_bool)
            .unwrap_or(false)
    }
}

/// Weighted mean and variance helpers shared by the functional routes.
pub(crate) fn weighted_mean(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).map(|(w, v)| w * v).sum()
}

/// Chi-square divergence `Σ (q − p)²/p = Σ q²/p − 1`, skipping zero-mass
/// classes (where `q` is zero too).
pub(crate) fn chi_square(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .filter(|(_, &pj)| pj > 0.0)
        .map(|(&qj, &pj)| (qj - pj) * (qj - pj) / pj)
        .sum()
}
