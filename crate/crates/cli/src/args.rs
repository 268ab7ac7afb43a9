//! Command-line arguments, mirrored as a JSON experiment config.
//!
//! Every subcommand's arguments deserialize from the same field names as the
//! long flags (with underscores), and unknown keys are rejected. Data-source
//! flags (`preset`, `spec`, `joint`, `cond`, `bins`) sit in a nested `input`
//! object, since unknown-key rejection does not combine with flattening.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "iblearn",
    version,
    about = "Estimate the Information Bottleneck learnability threshold β₀ and locate it empirically"
)]
pub struct Cli {
    /// Root seed; every task derives its own stream from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Run the experiment described by a JSON config instead of a subcommand.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Output directory (default `out`).
    #[arg(long, global = true, env = "IBLEARN_OUT_DIR", value_name = "DIR")]
    pub out_dir: Option<PathBuf>,

    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Option<Command>,
}

/// `{"seed": 1, "out_dir": "runs/a", "command": {"sweep": {"input": {"preset": "noise-0.2"}, "points": 25}}}`
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Deserialize, Serialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    /// Write a mixture spec, samples and its exact discretized joint.
    Gen(GenArgs),
    /// Run the theoretical β₀ estimators on one dataset.
    Estimate(EstimateArgs),
    /// Solve the tabular IB over a β grid and detect the onset of learning.
    Sweep(SweepArgs),
    /// Reproduce the noise-rate table of β₀ values.
    Table(TableArgs),
    /// Maximum correlation ρₘ and its maximizing functions.
    Maxcorr(MaxcorrArgs),
}

/// Exactly one data source.
#[derive(Debug, Clone, Args, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputArgs {
    /// Built-in dataset: `noise-<rate>`, `deterministic` or `overlap-<distance>`.
    #[arg(long)]
    pub preset: Option<String>,
    /// Mixture spec JSON.
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    /// Joint table CSV.
    #[arg(long, value_name = "FILE")]
    pub joint: Option<PathBuf>,
    /// Conditional `p(y|x)` CSV with an optional `weight` column.
    #[arg(long, value_name = "FILE")]
    pub cond: Option<PathBuf>,
    /// Grid bins per axis when discretizing a mixture.
    #[arg(long, default_value_t = 32)]
    pub bins: usize,
}

impl Default for InputArgs {
    fn default() -> Self {
        Self {
            preset: None,
            spec: None,
            joint: None,
            cond: None,
            bins: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    All,
    Subset,
    ClassConditional,
    Functional,
    Maxcorr,
    InfoDensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyArg {
    #[default]
    Prefix,
    Range,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyArg {
    #[default]
    Exhaustive,
    Narrowing,
}

#[derive(Debug, Clone, Args, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Number of samples to draw (0 skips sampling).
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
}

impl Default for GenArgs {
    fn default() -> Self {
        Self {
            input: InputArgs::default(),
            samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, Args, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Estimators to run.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "all")]
    pub method: Vec<MethodArg>,
    /// Candidate subsets for the subset search.
    #[arg(long, value_enum, default_value_t = FamilyArg::Prefix)]
    pub family: FamilyArg,
    #[arg(long, value_enum, default_value_t = StrategyArg::Exhaustive)]
    pub strategy: StrategyArg,
    /// Also run the subset search on MLP posteriors fit to this many samples
    /// (mixture inputs only).
    #[arg(long, value_name = "N")]
    pub learned_samples: Option<usize>,
}

impl Default for EstimateArgs {
    fn default() -> Self {
        Self {
            input: InputArgs::default(),
            method: vec![MethodArg::All],
            family: FamilyArg::Prefix,
            strategy: StrategyArg::Exhaustive,
            learned_samples: None,
        }
    }
}

#[derive(Debug, Clone, Args, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Smallest β; defaults to half the theoretical estimate.
    #[arg(long)]
    pub beta_min: Option<f64>,
    /// Largest β; defaults to 1.6 times the theoretical estimate.
    #[arg(long)]
    pub beta_max: Option<f64>,
    /// Geometric grid size.
    #[arg(long, default_value_t = 25)]
    pub points: usize,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    /// Cluster count; defaults to min(|X|, 2|Y|).
    #[arg(long)]
    pub z_card: Option<usize>,
    #[arg(long, default_value_t = 5000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Anneal from the largest β down, reusing each encoder.
    #[arg(long)]
    pub warm_start: bool,
}

impl Default for SweepArgs {
    fn default() -> Self {
        Self {
            input: InputArgs::default(),
            beta_min: None,
            beta_max: None,
            points: 25,
            restarts: 5,
            z_card: None,
            max_iters: 5000,
            tol: 1e-10,
            warm_start: false,
        }
    }
}

#[derive(Debug, Clone, Args, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableArgs {
    /// Noise rates; defaults to 0.02, 0.04, …, 0.48.
    #[arg(long, value_delimiter = ',')]
    pub rates: Vec<f64>,
    /// Add the learned-posterior column from MLPs fit to N samples per row.
    #[arg(long, value_name = "N")]
    pub learned_samples: Option<usize>,
    /// Add the empirical onset column from tabular sweeps.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long, default_value_t = 25)]
    pub sweep_points: usize,
    #[arg(long, default_value_t = 32)]
    pub bins: usize,
}

impl Default for TableArgs {
    fn default() -> Self {
        Self {
            rates: Vec::new(),
            learned_samples: None,
            sweep: false,
            sweep_points: 25,
            bins: 32,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaxcorrArgs {
    #[command(flatten)]
    pub input: InputArgs,
}
