//! Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Each criterion is also held to its wall-clock budget.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use iblearn::classifier::MlpConfig;
use iblearn::estimators::class_conditional::symmetric_noise;
use iblearn::estimators::{
    corollary_class_conditional, functional_minimizer_svd, minimize_functional, subset_search, FunctionalConfig,
    SubsetSearch,
};
use iblearn::experiments::{
    exact_joint, learned_subset_estimate, noise_table, sweep_range, table_noise_rates, EstimatorInput, Preset,
    TableOptions, DEFAULT_BINS,
};
use iblearn::ib_solver::{geometric_grid, sweep, SweepConfig};
use iblearn::synth::{analytic_posterior, Component, MixtureSpec};
use iblearn::{ConditionalMatrix, Marginal};
use rand::Rng;

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

/// Same absolute-or-relative rule as the reference table's rounding.
fn table_close(value: f64, reference: f64) -> bool {
    (value - reference).abs() <= 0.01 || (value - reference).abs() <= 0.005 * reference.abs()
}

fn closed_form_table() -> Outcome {
    let rows = noise_table(&table_noise_rates(), &TableOptions::default(), 0).map_err(|e| e.to_string())?;
    if rows.len() != REFERENCE_TABLE.len() {
        return Err(format!("{} rows, expected {}", rows.len(), REFERENCE_TABLE.len()));
    }
    let mut worst = 0.0f64;
    for (row, &(rate, reference)) in rows.iter().zip(&REFERENCE_TABLE) {
        if (row.noise_rate - rate).abs() > 1e-12 {
            return Err(format!("row for ρ = {} where {rate} was expected", row.noise_rate));
        }
        if !table_close(row.class_conditional, reference) {
            return Err(format!("ρ = {rate}: {:.4} vs {reference:.2}", row.class_conditional));
        }
        if rel_diff(row.class_conditional, binary_flip_threshold(rate)) > 1e-12 {
            return Err(format!(
                "ρ = {rate}: {} vs closed form {}",
                row.class_conditional,
                binary_flip_threshold(rate)
            ));
        }
        worst = worst.max((row.class_conditional - reference).abs());
    }
    Ok(format!("24 rows, max |Δ| vs rounded column {worst:.4}"))
}

/// Posteriors evaluated in closed form at each cell centre, weighted by the
/// exact cell mass.
fn analytic_cell_posteriors(spec: &MixtureSpec) -> Result<ConditionalMatrix, String> {
    let disc = exact_joint(spec, DEFAULT_BINS).map_err(|e| e.to_string())?;
    let centres: Vec<[f64; 2]> = disc.cells.iter().map(|&c| disc.grid.cell_center(c)).collect();
    let post = analytic_posterior(spec, &centres).map_err(|e| e.to_string())?;
    ConditionalMatrix::new(post.rows().clone(), disc.joint.px().to_vec()).map_err(|e| e.to_string())
}

fn estimator_agreement() -> Outcome {
    let mut specs: Vec<(String, MixtureSpec)> = table_noise_rates()
        .into_iter()
        .map(|r| (format!("noise-{r}"), Preset::Noise(r).spec()))
        .collect();
    specs.push(("deterministic".into(), Preset::Deterministic.spec()));
    let asymmetric = MixtureSpec {
        components: vec![
            Component {
                mean: [-8.0, 0.0],
                diag_cov: [0.25, 0.25],
                weight: 0.6,
                class_id: 0,
            },
            Component {
                mean: [8.0, 0.0],
                diag_cov: [0.25, 0.25],
                weight: 0.4,
                class_id: 1,
            },
        ],
        noise: Some(vec![vec![0.9, 0.1], vec![0.3, 0.7]]),
        seed: 0,
    };
    specs.push(("asymmetric".into(), asymmetric));

    let mut worst = 0.0f64;
    for (name, spec) in &specs {
        let start = Instant::now();
        let closed_form =
            corollary_class_conditional(&spec.confusion(), &spec.class_prior().map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?
                .value;
        let exact = EstimatorInput::from_spec(spec, DEFAULT_BINS)
            .map_err(|e| e.to_string())?
            .cond;
        let analytic = analytic_cell_posteriors(spec)?;
        for (route, cond) in [("exact cells", &exact), ("analytic posteriors", &analytic)] {
            let found = subset_search(cond, &SubsetSearch::default())
                .map_err(|e| format!("{name}, {route}: {e}"))?
                .beta0;
            let d = rel_diff(found, closed_form);
            if d > 1e-3 {
                return Err(format!(
                    "{name}, {route}: subset {found:.6} vs closed form {closed_form:.6}"
                ));
            }
            worst = worst.max(d);
        }
        if start.elapsed() > Duration::from_secs(1) {
            return Err(format!("{name} took {:?}", start.elapsed()));
        }
    }
    // Sanity check on the symmetric helper used by the table.
    let prior = Marginal::uniform(2);
    let check = corollary_class_conditional(&symmetric_noise(2, 0.2), &prior)
        .map_err(|e| e.to_string())?
        .value;
    if rel_diff(check, binary_flip_threshold(0.2)) > 1e-12 {
        return Err(format!("symmetric ρ = 0.2 gives {check}"));
    }
    Ok(format!(
        "{} presets, two posterior routes, max rel diff {worst:.2e}",
        specs.len()
    ))
}

fn functional_svd_closure() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let nx = r.random_range(2..=20);
        let ny = r.random_range(2..=10);
        let joint = random_joint(&mut r, nx, ny, 0.0);
        let svd = functional_minimizer_svd(&joint).map_err(|e| e.to_string())?.value;
        let config = FunctionalConfig {
            seed: k,
            ..FunctionalConfig::default()
        };
        let iterative = minimize_functional(&joint, &config).map_err(|e| e.to_string())?.value;
        let d = rel_diff(iterative, svd);
        if d > 1e-6 {
            return Err(format!("joint {k} ({nx}×{ny}): functional {iterative} vs 1/ρ²ₘ {svd}"));
        }
        worst = worst.max(d);
    }
    Ok(format!("50 joints, max rel diff {worst:.2e}"))
}

/// Default 25-point grid around the closed-form threshold, on one thread.
fn preset_onset(preset: Preset, seed: u64) -> Result<(f64, f64), String> {
    let spec = preset.spec();
    let input = EstimatorInput::from_spec(&spec, DEFAULT_BINS).map_err(|e| e.to_string())?;
    let (noise, prior) = input.noise_model.as_ref().expect("preset carries its noise model");
    let reference = corollary_class_conditional(noise, prior)
        .map_err(|e| e.to_string())?
        .value;
    let (lo, hi) = sweep_range(Some(reference), None, None);
    let grid = geometric_grid(lo, hi, 25);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let result = pool
        .install(|| sweep(&input.joint, &grid, &SweepConfig::default(), seed))
        .map_err(|e| e.to_string())?;
    if !result.all_converged() {
        return Err("a sweep point hit the iteration limit".into());
    }
    let onset = result.detected_beta0.ok_or("no onset detected")?;
    Ok((onset, reference))
}

fn phase_transition() -> Outcome {
    let (onset, reference) = preset_onset(Preset::Noise(0.2), 11)?;
    if !(2.5..=3.1).contains(&onset) {
        return Err(format!(
            "onset {onset:.4} outside [2.5, 3.1] (closed form {reference:.4})"
        ));
    }
    Ok(format!("onset {onset:.4}, closed form {reference:.4}"))
}

fn deterministic_threshold() -> Outcome {
    let (onset, _) = preset_onset(Preset::Deterministic, 12)?;
    if !(1.0..=1.1).contains(&onset) {
        return Err(format!("onset {onset:.4} outside [1.0, 1.1]"));
    }
    Ok(format!("onset {onset:.4}"))
}

fn overlap_monotonicity() -> Outcome {
    let mut values = Vec::new();
    for d in [8.0, 3.2, 1.6, 0.8] {
        let input = EstimatorInput::from_spec(&Preset::Overlap(d).spec(), DEFAULT_BINS).map_err(|e| e.to_string())?;
        values.push(
            subset_search(&input.cond, &SubsetSearch::default())
                .map_err(|e| e.to_string())?
                .beta0,
        );
    }
    let shown = values.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(" < ");
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(format!("not strictly increasing: {shown}"));
    }
    Ok(shown)
}

fn property_battery() -> Outcome {
    let mut r = rng(7);
    let mut cases = 0usize;
    let mut run = |name: &str, result: Check| -> Result<(), String> {
        cases += 1;
        result.map_err(|e| format!("{name}: {e}"))
    };
    for _ in 0..30 {
        let (nx, ny) = (r.random_range(2..=12), r.random_range(2..=6));
        let joint = random_joint(&mut r, nx, ny, 0.0);
        let h: Vec<f64> = (0..nx).map(|_| r.random_range(-3.0..3.0)).collect();
        let a = r.random_range(0.1..5.0) * if r.random::<bool>() { 1.0 } else { -1.0 };
        run(
            "affine invariance",
            check_affine_invariance(&joint, &h, a, r.random_range(-10.0..10.0)),
        )?;
        run("onset row sums", check_onset_rows(&joint, &h))?;
        run("estimates above 1", check_bound_ordering(&joint, true))?;
        run(
            "trivial stationarity",
            check_trivial_stationarity(&joint, r.random_range(2..=5), r.random_range(0.1..50.0)),
        )?;
    }
    for _ in 0..30 {
        let (n, c) = (r.random_range(2..=12), r.random_range(2..=4));
        let cond = random_cond(&mut r, n, c);
        let member: Vec<bool> = (0..n).map(|_| r.random::<bool>()).collect();
        run("indicator consistency", check_indicator_consistency(&cond, &member))?;
        run("prefix oracle", check_prefix_oracle(&cond))?;
    }
    for _ in 0..10 {
        let (nx, ny) = (r.random_range(2..=10), r.random_range(2..=5));
        let joint = random_joint(&mut r, nx, ny, 0.2);
        let (xp, yp) = (random_permutation(&mut r, nx), random_permutation(&mut r, ny));
        run("permutation invariance", check_permutation_invariance(&joint, &xp, &yp))?;
        run("bound ordering with zeros", check_bound_ordering(&joint, false))?;
    }
    for seed in 0..5 {
        let (nx, ny) = (r.random_range(2..=8), r.random_range(2..=4));
        let joint = random_joint(&mut r, nx, ny, 0.0);
        run("data processing on sweep points", check_sweep_points(&joint, seed))?;
        run("gradient check", check_gradient(seed))?;
    }
    Ok(format!("{cases} checks"))
}

fn learned_pipeline() -> Outcome {
    let spec = Preset::Noise(0.2).spec().with_seed(21);
    let config = MlpConfig {
        seed: 22,
        ..MlpConfig::default()
    };
    let estimate = learned_subset_estimate(&spec, 10_000, &config)
        .map_err(|e| e.to_string())?
        .value;
    let reference = binary_flip_threshold(0.2);
    let d = rel_diff(estimate, reference);
    if (estimate - reference).abs() > 0.15 * reference {
        return Err(format!(
            "learned {estimate:.4} vs {reference:.4} ({:.1}% off)",
            100.0 * d
        ));
    }
    Ok(format!(
        "learned {estimate:.4} vs {reference:.4} ({:.1}% off)",
        100.0 * d
    ))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            name: "closed-form table reproduction",
            budget: Duration::from_secs(1),
            run: closed_form_table,
        },
        Criterion {
            name: "estimator agreement",
            budget: Duration::from_secs(30),
            run: estimator_agreement,
        },
        Criterion {
            name: "functional equals SVD",
            budget: Duration::from_secs(30),
            run: functional_svd_closure,
        },
        Criterion {
            name: "empirical phase transition",
            budget: Duration::from_secs(300),
            run: phase_transition,
        },
        Criterion {
            name: "deterministic threshold",
            budget: Duration::from_secs(120),
            run: deterministic_threshold,
        },
        Criterion {
            name: "overlap monotonicity",
            budget: Duration::from_secs(10),
            run: overlap_monotonicity,
        },
        Criterion {
            name: "property suites",
            budget: Duration::from_secs(300),
            run: property_battery,
        },
        Criterion {
            name: "learned-posterior pipeline",
            budget: Duration::from_secs(120),
            run: learned_pipeline,
        },
    ];
    let mut failed = 0;
    for (k, c) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > c.budget => Err(format!("{msg}; over budget {:?}", c.budget)),
            other => other,
        };
        let (tag, msg) = match outcome {
            Ok(msg) => ("PASS", msg),
            Err(msg) => {
                failed += 1;
                ("FAIL", msg)
            }
        };
        println!("{tag} {} {}: {msg} [{:.2} s]", k + 1, c.name, elapsed.as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} of {} criteria failed", criteria.len());
        ExitCode::FAILURE
    }
}
