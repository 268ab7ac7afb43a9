use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use iblearn::classifier::MlpConfig;
use iblearn::dist::{joint_from_conditional, mutual_information, LogBase};
use iblearn::estimators::maxcorr::max_correlation_decomposition;
use iblearn::estimators::{
    info_density_estimate, subset_estimate, BetaEstimate, CandidateFamily, Method, SearchStrategy, SubsetSearch,
};
use iblearn::experiments::{
    exact_joint, learned_subset_estimate, noise_table, run_estimator, sweep_range, table_noise_rates, write_table_csv,
    EstimatorInput, Preset, TableOptions, TableRow,
};
use iblearn::ib_solver::{geometric_grid, sweep, SolverConfig, SweepConfig, SweepResult};
use iblearn::rng::derive_seed;
use iblearn::synth::{sample, MixtureSpec};
use iblearn::{ConditionalMatrix, DiscreteJoint};
use log::{info, warn};
use serde::Serialize;

use crate::args::{
    Command, EstimateArgs, FamilyArg, GenArgs, InputArgs, MaxcorrArgs, MethodArg, StrategyArg, SweepArgs, TableArgs,
};

// Seed streams, one per kind of task.
const SPEC_STREAM: u64 = 1;
const FUNCTIONAL_STREAM: u64 = 2;
const SWEEP_STREAM: u64 = 3;
const MLP_STREAM: u64 = 4;
const TABLE_STREAM: u64 = 5;

#[derive(Debug)]
pub enum Failure {
    Input(String),
    Independent(String),
    NonConvergence(String),
}

impl Failure {
    pub fn input(msg: impl Into<String>) -> Self {
        Failure::Input(msg.into())
    }

    pub fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Independent(_) => 2,
            Failure::NonConvergence(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) | Failure::Independent(m) | Failure::NonConvergence(m) => f.write_str(m),
        }
    }
}

impl From<iblearn::Error> for Failure {
    fn from(e: iblearn::Error) -> Self {
        if e.is_independence() {
            Failure::Independent(format!("{e}; no β makes this data learnable"))
        } else {
            Failure::Input(e.to_string())
        }
    }
}

pub struct Context {
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Context {
    fn stream(&self, stream: u64) -> u64 {
        derive_seed(self.seed, stream)
    }

    fn output(&self, name: &str) -> Result<PathBuf, Failure> {
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| Failure::input(format!("creating {}: {e}", self.out_dir.display())))?;
        Ok(self.out_dir.join(name))
    }
}

pub fn dispatch(ctx: &Context, command: Command) -> Result<(), Failure> {
    match command {
        Command::Gen(a) => cmd_gen(ctx, &a),
        Command::Estimate(a) => cmd_estimate(ctx, &a),
        Command::Sweep(a) => cmd_sweep(ctx, &a),
        Command::Table(a) => cmd_table(ctx, &a),
        Command::Maxcorr(a) => cmd_maxcorr(ctx, &a),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::input(format!("writing {}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure::input(e.to_string()))?;
    w.write_all(b"\n").map_err(io)?;
    w.flush().map_err(io)
}

struct Loaded {
    label: String,
    input: EstimatorInput,
    spec: Option<MixtureSpec>,
}

fn load_spec(ctx: &Context, args: &InputArgs) -> Result<Option<(String, MixtureSpec)>, Failure> {
    let spec = match (&args.preset, &args.spec) {
        (Some(name), None) => {
            let preset: Preset = name.parse()?;
            Some((format!("preset {preset}"), preset.spec()))
        }
        (None, Some(path)) => Some((format!("spec {}", path.display()), MixtureSpec::load(path)?)),
        _ => None,
    };
    Ok(spec.map(|(label, s)| (label, s.with_seed(ctx.stream(SPEC_STREAM)))))
}

fn load(ctx: &Context, args: &InputArgs) -> Result<Loaded, Failure> {
    let given = [
        args.preset.is_some(),
        args.spec.is_some(),
        args.joint.is_some(),
        args.cond.is_some(),
    ]
    .iter()
    .filter(|&&g| g)
    .count();
    if given != 1 {
        return Err(Failure::input("give exactly one of --preset, --spec, --joint, --cond"));
    }
    if let Some((label, spec)) = load_spec(ctx, args)? {
        let input = EstimatorInput::from_spec(&spec, args.bins)?;
        return Ok(Loaded {
            label,
            input,
            spec: Some(spec),
        });
    }
    if let Some(path) = &args.joint {
        let joint = DiscreteJoint::load(path)?;
        return Ok(Loaded {
            label: format!("joint {}", path.display()),
            input: EstimatorInput::from_joint(joint)?,
            spec: None,
        });
    }
    let path = args.cond.as_ref().expect("one source given");
    let cond = ConditionalMatrix::load(path)?;
    let joint = joint_from_conditional(&cond)?;
    Ok(Loaded {
        label: format!("cond {}", path.display()),
        input: EstimatorInput {
            joint,
            cond,
            noise_model: None,
        },
        spec: None,
    })
}

fn cmd_gen(ctx: &Context, args: &GenArgs) -> Result<(), Failure> {
    if args.input.joint.is_some() || args.input.cond.is_some() {
        return Err(Failure::input("gen needs --preset or --spec"));
    }
    let (label, spec) = load_spec(ctx, &args.input)?.ok_or_else(|| Failure::input("gen needs --preset or --spec"))?;
    spec.save(ctx.output("spec.json")?)?;
    if args.samples > 0 {
        sample(&spec, args.samples)?.save(ctx.output("samples.csv")?)?;
    }
    let discretized = exact_joint(&spec, args.input.bins)?;
    discretized.joint.save(ctx.output("joint.csv")?)?;
    let cond = iblearn::dist::conditional_from_joint(&discretized.joint, iblearn::dist::Axis::X)?;
    cond.save(ctx.output("cond.csv")?)?;
    println!(
        "{label}: {} samples, {} occupied cells, I(X;Y) = {:.6} bits -> {}",
        args.samples,
        discretized.joint.nx(),
        mutual_information(&discretized.joint, LogBase::Bits),
        ctx.out_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Skipped {
    method: Method,
    reason: String,
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    input: &'a str,
    seed: u64,
    estimates: &'a [BetaEstimate],
    skipped: &'a [Skipped],
}

fn search_config(args: &EstimateArgs) -> SubsetSearch {
    SubsetSearch {
        family: match args.family {
            FamilyArg::Prefix => CandidateFamily::Prefix,
            FamilyArg::Range => CandidateFamily::Range,
        },
        strategy: match args.strategy {
            StrategyArg::Exhaustive => SearchStrategy::Exhaustive,
            StrategyArg::Narrowing => SearchStrategy::Narrowing,
        },
        ..SubsetSearch::default()
    }
}

fn selected_methods(args: &[MethodArg]) -> Vec<Method> {
    let all = [
        Method::SubsetSearch,
        Method::ClassConditional,
        Method::Functional,
        Method::MaxCorrelationInverse,
        Method::InfoDensity,
    ];
    let mut out: Vec<Method> = Vec::new();
    for a in args {
        let picked: &[Method] = match a {
            MethodArg::All => &all,
            MethodArg::Subset => &all[0..1],
            MethodArg::ClassConditional => &all[1..2],
            MethodArg::Functional => &all[2..3],
            MethodArg::Maxcorr => &all[3..4],
            MethodArg::InfoDensity => &all[4..5],
        };
        for m in picked {
            if !out.contains(m) {
                out.push(*m);
            }
        }
    }
    out
}

fn note(e: &BetaEstimate) -> String {
    let mut notes = Vec::new();
    if e.is_diagnostic_only() {
        notes.push("diagnostic only, not a bound".to_string());
    }
    if e.diagnostics.get("converged") == Some(&serde_json::Value::Bool(false)) {
        notes.push("did not converge".to_string());
    }
    if let Some(p) = e.diagnostics.get("posterior").and_then(|v| v.as_str()) {
        notes.push(format!("{p} posterior"));
    }
    notes.join("; ")
}

fn cmd_estimate(ctx: &Context, args: &EstimateArgs) -> Result<(), Failure> {
    let loaded = load(ctx, &args.input)?;
    let search = search_config(args);
    let mut estimates = Vec::new();
    let mut skipped = Vec::new();
    for method in selected_methods(&args.method) {
        let result = match method {
            Method::SubsetSearch => Some(subset_estimate(&loaded.input.cond, &search)),
            Method::InfoDensity => Some(info_density_estimate(&loaded.input.cond, &search)),
            m => run_estimator(&loaded.input, m, ctx.stream(FUNCTIONAL_STREAM)),
        };
        match result {
            None => skipped.push(Skipped {
                method,
                reason: "needs a class-conditional noise model (mixture input)".into(),
            }),
            Some(Ok(e)) => estimates.push(e),
            Some(Err(e)) if e.is_independence() => skipped.push(Skipped {
                method,
                reason: e.to_string(),
            }),
            Some(Err(e)) => return Err(e.into()),
        }
    }
    if let Some(n) = args.learned_samples {
        let spec = loaded
            .spec
            .as_ref()
            .ok_or_else(|| Failure::input("--learned-samples needs --preset or --spec"))?;
        let mlp = MlpConfig {
            seed: ctx.stream(MLP_STREAM),
            ..MlpConfig::default()
        };
        match learned_subset_estimate(spec, n, &mlp) {
            Ok(e) => estimates.push(e.with_diagnostic("posterior", "learned")),
            Err(e) if e.is_independence() => skipped.push(Skipped {
                method: Method::SubsetSearch,
                reason: format!("learned posterior: {e}"),
            }),
            Err(e) => return Err(e.into()),
        }
    }

    println!("{}", loaded.label);
    println!("{:<26} {:>14}  note", "method", "beta0");
    for e in &estimates {
        println!("{:<26} {:>14.6}  {}", e.method.name(), e.value, note(e));
    }
    for s in &skipped {
        println!("{:<26} {:>14}  {}", s.method.name(), "-", s.reason);
    }
    let path = ctx.output("estimate.json")?;
    write_json(
        &path,
        &EstimateReport {
            input: &loaded.label,
            seed: ctx.seed,
            estimates: &estimates,
            skipped: &skipped,
        },
    )?;
    info!("wrote {}", path.display());

    if estimates.is_empty() && !skipped.is_empty() {
        return Err(Failure::Independent(
            "X is independent of Y; no β makes this data learnable".into(),
        ));
    }
    if estimates
        .iter()
        .any(|e| e.diagnostics.get("converged") == Some(&serde_json::Value::Bool(false)))
    {
        return Err(Failure::NonConvergence("an estimator hit its iteration limit".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepReport<'a> {
    input: &'a str,
    seed: u64,
    grid: &'a [f64],
    solver: SolverConfig,
    warm_start: bool,
    /// Theoretical β₀ drawn as a reference line next to the sweep.
    vertical_line: Option<f64>,
    theoretical: BTreeMap<String, f64>,
    #[serde(flatten)]
    result: &'a SweepResult,
}

fn cmd_sweep(ctx: &Context, args: &SweepArgs) -> Result<(), Failure> {
    let loaded = load(ctx, &args.input)?;
    let mut theoretical = BTreeMap::new();
    for method in [
        Method::ClassConditional,
        Method::SubsetSearch,
        Method::MaxCorrelationInverse,
    ] {
        match run_estimator(&loaded.input, method, ctx.stream(FUNCTIONAL_STREAM)) {
            Some(Ok(e)) => {
                theoretical.insert(method.name().to_string(), e.value);
            }
            Some(Err(e)) if !e.is_independence() => return Err(e.into()),
            _ => {}
        }
    }
    let vertical_line = theoretical
        .get(Method::ClassConditional.name())
        .or_else(|| theoretical.get(Method::SubsetSearch.name()))
        .copied();

    let (lo, hi) = sweep_range(vertical_line, args.beta_min, args.beta_max);
    if !(lo > 0.0 && hi > lo && hi.is_finite()) || args.points < 2 {
        return Err(Failure::input(format!(
            "invalid grid: beta_min {lo}, beta_max {hi}, {} points",
            args.points
        )));
    }
    let grid = geometric_grid(lo, hi, args.points);
    let solver = SolverConfig {
        z_card: args.z_card,
        restarts: args.restarts,
        max_iters: args.max_iters,
        tol: args.tol,
        ..SolverConfig::default()
    };
    let config = SweepConfig {
        solver,
        warm_start: args.warm_start,
        ..SweepConfig::default()
    };
    let result = sweep(&loaded.input.joint, &grid, &config, ctx.stream(SWEEP_STREAM))?;

    let csv_path = ctx.output("sweep.csv")?;
    result.write_csv(BufWriter::new(
        File::create(&csv_path).map_err(|e| Failure::input(format!("writing {}: {e}", csv_path.display())))?,
    ))?;
    write_json(
        &ctx.output("sweep.json")?,
        &SweepReport {
            input: &loaded.label,
            seed: ctx.seed,
            grid: &grid,
            solver,
            warm_start: args.warm_start,
            vertical_line,
            theoretical: theoretical.clone(),
            result: &result,
        },
    )?;

    println!("{}", loaded.label);
    println!("beta grid: {} points, {lo:.4} .. {hi:.4}", grid.len());
    match result.detected_beta0 {
        Some(b) => println!("detected onset: {b:.4}"),
        None => {
            warn!("I(X;Z) never left the baseline; no onset on this grid");
            println!("detected onset: none");
        }
    }
    for (name, value) in &theoretical {
        println!("{name:<26} {value:>14.6}");
    }
    if !result.all_converged() {
        return Err(Failure::NonConvergence(
            "some β points hit the iteration limit; outputs were written".into(),
        ));
    }
    Ok(())
}

fn cmd_table(ctx: &Context, args: &TableArgs) -> Result<(), Failure> {
    let rates = if args.rates.is_empty() {
        table_noise_rates()
    } else {
        args.rates.clone()
    };
    let options = TableOptions {
        learned_samples: args.learned_samples,
        sweep: args.sweep.then(SweepConfig::default),
        sweep_points: args.sweep_points,
        bins: args.bins,
        ..TableOptions::default()
    };
    let rows = noise_table(&rates, &options, ctx.stream(TABLE_STREAM))?;
    let path = ctx.output("table.csv")?;
    write_table_csv(
        &rows,
        BufWriter::new(File::create(&path).map_err(|e| Failure::input(format!("writing {}: {e}", path.display())))?),
    )?;
    write_json(&ctx.output("table.json")?, &rows)?;
    print_table(&rows);
    Ok(())
}

fn print_table(rows: &[TableRow]) {
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
    println!(
        "{:>6} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "rho", "class_cond", "subset_true", "subset_learn", "functional", "onset"
    );
    for r in rows {
        println!(
            "{:>6.2} {:>12.2} {:>12} {:>12} {:>12} {:>12}",
            r.noise_rate,
            r.class_conditional,
            cell(r.subset_true_posterior),
            cell(r.subset_learned_posterior),
            cell(r.functional),
            cell(r.observed_onset)
        );
    }
}

#[derive(Serialize)]
struct MaxcorrReport<'a> {
    input: &'a str,
    rho_m: f64,
    inverse_square: Option<f64>,
    top_singular_value: f64,
    f: &'a [f64],
    g: &'a [f64],
}

fn cmd_maxcorr(ctx: &Context, args: &MaxcorrArgs) -> Result<(), Failure> {
    let loaded = load(ctx, &args.input)?;
    let mc = max_correlation_decomposition(&loaded.input.joint);
    let dependent = mc.rho * mc.rho > 1e-24;
    let inverse_square = dependent.then(|| 1.0 / (mc.rho * mc.rho));
    write_json(
        &ctx.output("maxcorr.json")?,
        &MaxcorrReport {
            input: &loaded.label,
            rho_m: mc.rho,
            inverse_square,
            top_singular_value: mc.top_singular,
            f: &mc.f,
            g: &mc.g,
        },
    )?;
    println!("{}", loaded.label);
    println!("rho_m          {:.9}", mc.rho);
    match inverse_square {
        Some(v) => println!("1/rho_m^2      {v:.6}"),
        None => println!("1/rho_m^2      inf"),
    }
    println!("sigma_1(Q)     {:.12}", mc.top_singular);
    if !dependent {
        return Err(Failure::Independent("X is independent of Y (ρₘ = 0)".into()));
    }
    Ok(())
}
