//! Named presets and the composite experiments built from them.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::classifier::{fit_samples, MlpConfig};
use crate::dist::{conditional_from_joint, Axis, ConditionalMatrix, DiscreteJoint, Marginal};
use crate::error::{Error, Result};
use crate::estimators::class_conditional::symmetric_noise;
use crate::estimators::{
    corollary_class_conditional, functional_minimizer_svd, info_density_estimate, minimize_functional, subset_estimate,
    BetaEstimate, FunctionalConfig, Method, SubsetSearch,
};
use crate::ib_solver::{geometric_grid, sweep, SweepConfig};
use crate::rng::derive_seed;
use crate::synth::{discretize_exact, sample, DiscretizedJoint, Grid, MixtureSpec};

/// Bins per axis used for preset joints.
pub const DEFAULT_BINS: usize = 32;

/// Noise rates of the reference table: 0.02, 0.04, …, 0.48.
pub fn table_noise_rates() -> Vec<f64> {
    (1..=24).map(|k| k as f64 / 50.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preset {
    /// Well-separated equal-weight classes with symmetric flip rate ρ.
    Noise(f64),
    /// Well-separated classes without label noise.
    Deterministic,
    /// Weights 0.6/0.4 at the given distance, no noise.
    Overlap(f64),
}

impl Preset {
    pub fn spec(&self) -> MixtureSpec {
        match *self {
            Preset::Noise(rho) => MixtureSpec::noise_preset(rho),
            Preset::Deterministic => MixtureSpec::noise_preset(0.0),
            Preset::Overlap(d) => MixtureSpec::overlap_preset(d),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preset::Noise(rho) => write!(f, "noise-{rho}"),
            Preset::Deterministic => f.write_str("deterministic"),
            Preset::Overlap(d) => write!(f, "overlap-{d}"),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidArgument(format!(
                "unknown preset {s:?}; expected noise-<rate>, deterministic or overlap-<distance>"
            ))
        };
        if s == "deterministic" {
            return Ok(Preset::Deterministic);
        }
        let (kind, value) = s.split_once('-').ok_or_else(bad)?;
        let v: f64 = value.parse().map_err(|_| bad())?;
        match kind {
            "noise" if (0.0..=1.0).contains(&v) => Ok(Preset::Noise(v)),
            "overlap" if v > 0.0 && v.is_finite() => Ok(Preset::Overlap(v)),
            _ => Err(bad()),
        }
    }
}

/// Sweep bounds around a theoretical β₀ `reference`, overridable per side.
///
/// Defaults to `[max(r/2, 1/2), max(1.6r, 2·lo)]`, or `[1/2, 50]` when no
/// reference exists.
pub fn sweep_range(reference: Option<f64>, beta_min: Option<f64>, beta_max: Option<f64>) -> (f64, f64) {
    let lo = beta_min.unwrap_or_else(|| reference.map_or(0.5, |r| (0.5 * r).max(0.5)));
    let hi = beta_max.unwrap_or_else(|| reference.map_or(50.0, |r| (1.6 * r).max(2.0 * lo)));
    (lo, hi)
}

/// Exact-mode joint on the default covering grid.
pub fn exact_joint(spec: &MixtureSpec, bins: usize) -> Result<DiscretizedJoint> {
    discretize_exact(spec, &Grid::covering(spec, bins))
}

/// What an estimator run sees: a joint, its example-level conditional, and
/// the class-conditional noise model when one is known.
#[derive(Debug, Clone)]
pub struct EstimatorInput {
    pub joint: DiscreteJoint,
    pub cond: ConditionalMatrix,
    pub noise_model: Option<(DMatrix<f64>, Marginal)>,
}

impl EstimatorInput {
    pub fn from_joint(joint: DiscreteJoint) -> Result<Self> {
        let cond = conditional_from_joint(&joint, Axis::X)?;
        Ok(Self {
            joint,
            cond,
            noise_model: None,
        })
    }

    pub fn from_spec(spec: &MixtureSpec, bins: usize) -> Result<Self> {
        let mut input = Self::from_joint(exact_joint(spec, bins)?.joint)?;
        input.noise_model = Some((spec.confusion(), spec.class_prior()?));
        Ok(input)
    }
}

pub const THEORETICAL_METHODS: [Method; 5] = [
    Method::SubsetSearch,
    Method::ClassConditional,
    Method::Functional,
    Method::MaxCorrelationInverse,
    Method::InfoDensity,
];

/// Run one estimator; `None` when it does not apply to this input.
pub fn run_estimator(input: &EstimatorInput, method: Method, seed: u64) -> Option<Result<BetaEstimate>> {
    Some(match method {
        Method::SubsetSearch => subset_estimate(&input.cond, &SubsetSearch::default()),
        Method::ClassConditional => {
            let (noise, prior) = input.noise_model.as_ref()?;
            corollary_class_conditional(noise, prior)
        }
        Method::Functional => minimize_functional(
            &input.joint,
            &FunctionalConfig {
                seed,
                ..FunctionalConfig::default()
            },
        ),
        Method::MaxCorrelationInverse => functional_minimizer_svd(&input.joint),
        Method::InfoDensity => info_density_estimate(&input.cond, &SubsetSearch::default()),
        Method::EmpiricalSweep => return None,
    })
}

/// Subset search on posteriors predicted by an MLP trained on `n` samples.
pub fn learned_subset_estimate(spec: &MixtureSpec, n: usize, config: &MlpConfig) -> Result<BetaEstimate> {
    let samples = sample(spec, n)?;
    let model = fit_samples(&samples, Some(spec.n_classes()), config)?;
    let cond = model.predict_points(&samples.points)?;
    Ok(subset_estimate(&cond, &SubsetSearch::default())?
        .with_diagnostic("samples", n)
        .with_diagnostic("final_training_loss", *model.loss_history.last().expect("initial loss")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableOptions {
    /// Samples for the learned-posterior column; disabled when `None`.
    pub learned_samples: Option<usize>,
    pub mlp: MlpConfig,
    /// Empirical onset column from a tabular sweep.
    pub sweep: Option<SweepConfig>,
    pub sweep_points: usize,
    pub bins: usize,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self {
            learned_samples: None,
            mlp: MlpConfig::default(),
            sweep: None,
            sweep_points: 25,
            bins: DEFAULT_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub noise_rate: f64,
    pub class_conditional: f64,
    pub subset_true_posterior: Option<f64>,
    pub subset_learned_posterior: Option<f64>,
    pub functional: Option<f64>,
    pub observed_onset: Option<f64>,
}

fn ok_value(r: Result<BetaEstimate>) -> Result<Option<f64>> {
    match r {
        Ok(e) => Ok(Some(e.value)),
        Err(e) if e.is_independence() => Ok(None),
        Err(e) => Err(e),
    }
}

/// One row per noise rate of the two-class symmetric-flip family.
pub fn noise_table(rates: &[f64], options: &TableOptions, seed: u64) -> Result<Vec<TableRow>> {
    let prior = Marginal::uniform(2);
    rates
        .iter()
        .enumerate()
        .map(|(k, &rho)| {
            let row_seed = derive_seed(seed, k as u64);
            let class_conditional = corollary_class_conditional(&symmetric_noise(2, rho), &prior)?.value;
            let spec = MixtureSpec::noise_preset(rho).with_seed(row_seed);
            let input = EstimatorInput::from_spec(&spec, options.bins)?;
            let subset_true_posterior = ok_value(subset_estimate(&input.cond, &SubsetSearch::default()))?;
            let functional = ok_value(run_estimator(&input, Method::Functional, row_seed).expect("applies"))?;
            let subset_learned_posterior = match options.learned_samples {
                Some(n) => {
                    let mlp = MlpConfig {
                        seed: row_seed,
                        ..options.mlp.clone()
                    };
                    ok_value(learned_subset_estimate(&spec, n, &mlp))?
                }
                None => None,
            };
            let observed_onset = match &options.sweep {
                Some(config) => {
                    let (lo, hi) = sweep_range(Some(class_conditional), None, None);
                    let grid = geometric_grid(lo, hi, options.sweep_points);
                    sweep(&input.joint, &grid, config, row_seed)?.detected_beta0
                }
                None => None,
            };
            Ok(TableRow {
                noise_rate: rho,
                class_conditional,
                subset_true_posterior,
                subset_learned_posterior,
                functional,
                observed_onset,
            })
        })
        .collect()
}

/// Columns in row order; empty cells for disabled or inapplicable columns.
pub fn write_table_csv<W: Write>(rows: &[TableRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "noise_rate",
        "class_conditional",
        "subset_true_posterior",
        "subset_learned_posterior",
        "functional",
        "observed_onset",
    ])?;
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.noise_rate.to_string(),
            r.class_conditional.to_string(),
            cell(r.subset_true_posterior),
            cell(r.subset_learned_posterior),
            cell(r.functional),
            cell(r.observed_onset),
        ])?;
    }
    w.flush()?;
    Ok(())
}
