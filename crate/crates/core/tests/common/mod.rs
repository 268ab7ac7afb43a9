//! Independent oracles, random instances and invariant checks shared by the
//! acceptance runner and the property suites.
//!
//! Oracles recompute everything from raw probabilities with naive loops and
//! never call the estimator internals they are checking.

#![allow(dead_code)]

use iblearn::classifier::{MlpConfig, MlpModel};
use iblearn::dist::{conditional_from_joint, joint_from_conditional, Axis};
use iblearn::estimators::{
    beta0_functional, functional_minimizer_svd, get_beta, info_density_estimate, minimize_functional, onset_prediction,
    subset_search, CandidateFamily, FunctionalConfig, SubsetSearch,
};
use iblearn::ib_solver::{geometric_grid, ib_update, solve, solve_from, sweep, SolverConfig, SweepConfig};
use iblearn::{ConditionalMatrix, DiscreteJoint};
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Closed-form column of the reference noise table, rounded to two decimals.
pub const REFERENCE_TABLE: [(f64, f64); 24] = [
    (0.02, 1.09),
    (0.04, 1.18),
    (0.06, 1.29),
    (0.08, 1.42),
    (0.10, 1.56),
    (0.12, 1.73),
    (0.14, 1.93),
    (0.16, 2.16),
    (0.18, 2.44),
    (0.20, 2.78),
    (0.22, 3.19),
    (0.24, 3.70),
    (0.26, 4.34),
    (0.28, 5.17),
    (0.30, 6.25),
    (0.32, 7.72),
    (0.34, 9.77),
    (0.36, 12.76),
    (0.38, 17.36),
    (0.40, 25.00),
    (0.42, 39.06),
    (0.44, 69.44),
    (0.46, 156.25),
    (0.48, 625.00),
];

/// β₀ of a balanced binary symmetric flip channel.
pub fn binary_flip_threshold(rho: f64) -> f64 {
    1.0 / ((1.0 - 2.0 * rho) * (1.0 - 2.0 * rho))
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Exponential-weight random table; a `zero_fraction` of cells is emptied.
pub fn random_table(rng: &mut ChaCha8Rng, nx: usize, ny: usize, zero_fraction: f64) -> DMatrix<f64> {
    loop {
        let mut m = DMatrix::from_fn(nx, ny, |_, _| {
            if rng.random::<f64>() < zero_fraction {
                0.0
            } else {
                -rng.random::<f64>().max(1e-300).ln()
            }
        });
        let total = m.sum();
        let rows_ok = (0..nx).all(|i| m.row(i).sum() > 0.0);
        let cols_ok = (0..ny).all(|j| m.column(j).sum() > 0.0);
        if total > 0.0 && rows_ok && cols_ok {
            m /= total;
            return m;
        }
    }
}

pub fn random_joint(rng: &mut ChaCha8Rng, nx: usize, ny: usize, zero_fraction: f64) -> DiscreteJoint {
    DiscreteJoint::new(random_table(rng, nx, ny, zero_fraction)).expect("valid random joint")
}

pub fn random_cond(rng: &mut ChaCha8Rng, n: usize, c: usize) -> ConditionalMatrix {
    let rows = random_table(rng, n, c, 0.0);
    let weights: Vec<f64> = (0..n).map(|_| 0.1 + rng.random::<f64>()).collect();
    let total: f64 = weights.iter().sum();
    let normalized = DMatrix::from_fn(n, c, |i, j| rows[(i, j)] / rows.row(i).sum());
    ConditionalMatrix::new(normalized, weights.iter().map(|w| w / total).collect()).expect("valid random conditional")
}

pub fn random_permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        p.swap(i, j);
    }
    p
}

/// `(1/p(Ω) − 1) / (Σ_y p(y|Ω)²/p(y) − 1)` from raw rows, or `None` when the
/// subset is empty, full or carries no label information.
pub fn naive_subset_beta(cond: &ConditionalMatrix, member: &[bool]) -> Option<f64> {
    let (n, c) = (cond.n_examples(), cond.n_classes());
    let rows = cond.rows();
    let w = cond.weights();
    let mut p_y = vec![0.0; c];
    let mut p_omega = 0.0;
    let mut joint_omega = vec![0.0; c];
    for i in 0..n {
        for j in 0..c {
            p_y[j] += w[i] * rows[(i, j)];
            if member[i] {
                joint_omega[j] += w[i] * rows[(i, j)];
            }
        }
        if member[i] {
            p_omega += w[i];
        }
    }
    let size = member.iter().filter(|&&m| m).count();
    if size == 0 || size == n {
        return None;
    }
    let den: f64 = (0..c)
        .filter(|&j| p_y[j] > 0.0)
        .map(|j| (joint_omega[j] / p_omega).powi(2) / p_y[j])
        .sum::<f64>()
        - 1.0;
    (den > 1e-12).then(|| (1.0 / p_omega - 1.0) / den)
}

/// Minimum over every prefix of every pivot-sorted order, by brute force.
pub fn prefix_oracle(cond: &ConditionalMatrix) -> Option<f64> {
    let (n, c) = (cond.n_examples(), cond.n_classes());
    let mut best: Option<f64> = None;
    for pivot in 0..c {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| cond.rows()[(b, pivot)].partial_cmp(&cond.rows()[(a, pivot)]).unwrap());
        for r in 1..n {
            let mut member = vec![false; n];
            order[..r].iter().for_each(|&i| member[i] = true);
            if let Some(v) = naive_subset_beta(cond, &member) {
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        }
    }
    best
}

/// Minimum over all `2^N` subsets.
pub fn all_subsets_oracle(cond: &ConditionalMatrix) -> Option<f64> {
    let n = cond.n_examples();
    assert!(n <= 16);
    let mut best: Option<f64> = None;
    for mask in 1u32..(1 << n) - 1 {
        let member: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        if let Some(v) = naive_subset_beta(cond, &member) {
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    }
    best
}

/// `Var(h) / Var(E[h|Y])` from raw sums.
pub fn naive_functional(joint: &DiscreteJoint, h: &[f64]) -> f64 {
    let mean: f64 = (0..joint.nx()).map(|x| joint.px()[x] * h[x]).sum();
    let var: f64 = (0..joint.nx()).map(|x| joint.px()[x] * (h[x] - mean).powi(2)).sum();
    let between: f64 = (0..joint.ny())
        .map(|y| {
            let m: f64 = (0..joint.nx()).map(|x| joint.get(x, y) * h[x]).sum::<f64>() / joint.py()[y];
            joint.py()[y] * (m - mean).powi(2)
        })
        .sum();
    var / between
}

pub fn check_affine_invariance(joint: &DiscreteJoint, h: &[f64], a: f64, b: f64) -> Check {
    let base = beta0_functional(joint, h).map_err(|e| e.to_string())?;
    let moved: Vec<f64> = h.iter().map(|v| a * v + b).collect();
    let shifted = beta0_functional(joint, &moved).map_err(|e| e.to_string())?;
    let oracle = naive_functional(joint, h);
    if rel_diff(base, shifted) > 1e-10 || rel_diff(base, oracle) > 1e-10 {
        return Err(format!("β₀[h] = {base}, β₀[{a}h+{b}] = {shifted}, oracle {oracle}"));
    }
    Ok(())
}

/// β₀[1_Ω] on the example-level joint equals the subset bound of Ω.
pub fn check_indicator_consistency(cond: &ConditionalMatrix, member: &[bool]) -> Check {
    let Some(expected) = naive_subset_beta(cond, member) else {
        return Ok(());
    };
    let joint = joint_from_conditional(cond).map_err(|e| e.to_string())?;
    let h: Vec<f64> = member.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let omega: Vec<usize> = (0..member.len()).filter(|&i| member[i]).collect();
    let functional = beta0_functional(&joint, &h).map_err(|e| e.to_string())?;
    let direct = get_beta(cond, &omega).map_err(|e| e.to_string())?;
    if rel_diff(functional, expected) > 1e-10 || rel_diff(direct, expected) > 1e-10 {
        return Err(format!("β₀[1_Ω] = {functional}, Getβ = {direct}, oracle {expected}"));
    }
    Ok(())
}

fn estimator_values(joint: &DiscreteJoint, seed: u64) -> Result<[f64; 4], String> {
    let cond = conditional_from_joint(joint, Axis::X).map_err(|e| e.to_string())?;
    let err = |e: iblearn::Error| e.to_string();
    Ok([
        subset_search(&cond, &SubsetSearch::default()).map_err(err)?.beta0,
        functional_minimizer_svd(joint).map_err(err)?.value,
        minimize_functional(
            joint,
            &FunctionalConfig {
                seed,
                ..FunctionalConfig::default()
            },
        )
        .map_err(err)?
        .value,
        info_density_estimate(&cond, &SubsetSearch::default())
            .map_err(err)?
            .value,
    ])
}

/// Relabelling X and Y changes no estimator.
pub fn check_permutation_invariance(joint: &DiscreteJoint, x_perm: &[usize], y_perm: &[usize]) -> Check {
    let permuted = joint.permuted(x_perm, y_perm).map_err(|e| e.to_string())?;
    let a = estimator_values(joint, 1)?;
    let b = estimator_values(&permuted, 2)?;
    let names = ["subset_search", "max_correlation_inverse", "functional", "info_density"];
    for k in 0..4 {
        if rel_diff(a[k], b[k]) > 1e-10 {
            return Err(format!("{}: {} vs {} after permutation", names[k], a[k], b[k]));
        }
    }
    Ok(())
}

/// `subset_search ≥ 1/ρ²ₘ ≥ 1`, strictly above 1 on a full-support joint.
pub fn check_bound_ordering(joint: &DiscreteJoint, full_support: bool) -> Check {
    let [subset, svd, functional, _] = estimator_values(joint, 3)?;
    if subset < svd * (1.0 - 1e-9) {
        return Err(format!("subset bound {subset} below 1/ρ²ₘ = {svd}"));
    }
    if rel_diff(functional, svd) > 1e-6 {
        return Err(format!("functional {functional} differs from 1/ρ²ₘ = {svd}"));
    }
    if svd < 1.0 - 1e-12 || (full_support && svd <= 1.0) {
        return Err(format!("1/ρ²ₘ = {svd} is not above 1"));
    }
    Ok(())
}

/// One update from the exactly uniform encoder returns it unchanged.
pub fn check_trivial_stationarity(joint: &DiscreteJoint, nz: usize, beta: f64) -> Check {
    let uniform = DMatrix::from_element(joint.nx(), nz, 1.0 / nz as f64);
    let next = ib_update(joint, beta, &uniform).map_err(|e| e.to_string())?;
    let diff = (next - &uniform).abs().max();
    if diff > 4.0 * f64::EPSILON {
        return Err(format!("uniform encoder moved by {diff:e} at β = {beta}"));
    }
    Ok(())
}

/// Every sweep point satisfies `0 ≤ I(Y;Z) ≤ I(X;Z)` and beats the trivial
/// encoder.
pub fn check_sweep_points(joint: &DiscreteJoint, seed: u64) -> Check {
    let config = SweepConfig {
        solver: SolverConfig {
            restarts: 2,
            max_iters: 2000,
            ..SolverConfig::default()
        },
        ..SweepConfig::default()
    };
    let res = sweep(joint, &geometric_grid(0.7, 30.0, 8), &config, seed).map_err(|e| e.to_string())?;
    for p in &res.points {
        if p.i_yz < 0.0 || p.i_yz > p.i_xz + 1e-12 || p.objective > 1e-9 {
            return Err(format!(
                "β = {}: I(X;Z) = {}, I(Y;Z) = {}, objective {}",
                p.beta, p.i_xz, p.i_yz, p.objective
            ));
        }
    }
    Ok(())
}

/// A β that beats the trivial encoder stays beaten at every larger β.
pub fn check_learnability_monotone(joint: &DiscreteJoint, beta1: f64, beta2: f64, seed: u64) -> Check {
    let delta = 1e-6;
    let config = SolverConfig::default();
    let e1 = solve(joint, beta1, &config, seed).map_err(|e| e.to_string())?;
    if e1.objective >= -delta {
        return Ok(());
    }
    let e2 = solve(joint, beta2, &config, seed + 1).map_err(|e| e.to_string())?;
    if e2.objective >= -delta {
        return Err(format!(
            "learnable at β = {beta1} ({}) but not at β = {beta2} ({})",
            e1.objective, e2.objective
        ));
    }
    Ok(())
}

/// Relabelling X and Y leaves each β's solution unchanged up to restart
/// noise: the two best-of-restarts encoders either agree in the information
/// plane, or each one, carried across the relabelling, is a fixed point of
/// the other problem at the same coordinates. Near-flat directions converge
/// slowly, so the solver runs to a far tighter step tolerance than default.
pub fn check_sweep_permutation(joint: &DiscreteJoint, x_perm: &[usize], y_perm: &[usize], seed: u64) -> Check {
    let permuted = joint.permuted(x_perm, y_perm).map_err(|e| e.to_string())?;
    let config = SolverConfig {
        tol: 1e-14,
        max_iters: 200_000,
        ..SolverConfig::default()
    };
    let err = |e: iblearn::Error| e.to_string();
    let same = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).abs() <= 1e-6 && (a.1 - b.1).abs() <= 1e-6;
    for beta in geometric_grid(0.8, 20.0, 7) {
        let original = solve(joint, beta, &config, seed).map_err(err)?;
        let relabelled = solve(&permuted, beta, &config, seed).map_err(err)?;
        let a = (original.i_xz, original.i_yz);
        let b = (relabelled.i_xz, relabelled.i_yz);
        if same(a, b) {
            continue;
        }
        let nz = original.probs.ncols();
        // Row i of the relabelled problem is row x_perm[i] of the original.
        let forward = DMatrix::from_fn(joint.nx(), nz, |i, z| original.probs[(x_perm[i], z)]);
        let mut back = DMatrix::zeros(joint.nx(), nz);
        for (i, &x) in x_perm.iter().enumerate() {
            back.set_row(x, &relabelled.probs.row(i));
        }
        let on_permuted = solve_from(&permuted, beta, &forward, &config).map_err(err)?;
        let on_original = solve_from(joint, beta, &back, &config).map_err(err)?;
        if !same(a, (on_permuted.i_xz, on_permuted.i_yz)) || !same(b, (on_original.i_xz, on_original.i_yz)) {
            return Err(format!(
                "β = {beta}: {a:?} vs {b:?}, carried across to {:?} and {:?}",
                (on_permuted.i_xz, on_permuted.i_yz),
                (on_original.i_xz, on_original.i_yz)
            ));
        }
    }
    Ok(())
}

pub fn check_onset_rows(joint: &DiscreteJoint, h: &[f64]) -> Check {
    let delta = onset_prediction(joint, h).map_err(|e| e.to_string())?;
    let scale = delta.abs().max().max(1e-300);
    for x in 0..delta.nrows() {
        let s = delta.row(x).sum();
        if s.abs() > 1e-12 * scale.max(1.0) {
            return Err(format!("row {x} sums to {s:e}"));
        }
    }
    Ok(())
}

/// Exhaustive prefix search equals the brute-force prefix minimum, never
/// undercuts the all-subsets minimum, and the range family is no worse.
pub fn check_prefix_oracle(cond: &ConditionalMatrix) -> Check {
    let oracle = prefix_oracle(cond);
    let found = subset_search(cond, &SubsetSearch::default()).ok().map(|r| r.beta0);
    match (oracle, found) {
        (None, None) => Ok(()),
        (Some(o), Some(f)) => {
            if rel_diff(o, f) > 1e-10 {
                return Err(format!("prefix search {f} vs oracle {o}"));
            }
            if let Some(all) = all_subsets_oracle(cond) {
                if f < all * (1.0 - 1e-10) {
                    return Err(format!("prefix search {f} below the all-subsets minimum {all}"));
                }
            }
            let range = SubsetSearch {
                family: CandidateFamily::Range,
                ..SubsetSearch::default()
            };
            let r = subset_search(cond, &range).map_err(|e| e.to_string())?.beta0;
            if r > f * (1.0 + 1e-10) {
                return Err(format!("range search {r} worse than prefix search {f}"));
            }
            Ok(())
        }
        (o, f) => Err(format!("oracle {o:?} vs search {f:?}")),
    }
}

/// Backpropagation against central differences on a random small network.
pub fn check_gradient(seed: u64) -> Check {
    let mut r = rng(seed);
    let (n, d, c) = (9, 3, 3);
    let x = DMatrix::from_fn(n, d, |_, _| r.random_range(-2.0..2.0));
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
    let config = MlpConfig {
        hidden: vec![6, 4],
        seed,
        ..MlpConfig::default()
    };
    let mut model = MlpModel::init(d, c, &config);
    let jittered: Vec<f64> = model.params().iter().map(|p| p + r.random_range(-0.3..0.3)).collect();
    model.set_params(&jittered).map_err(|e| e.to_string())?;
    let (_, grad) = model.loss_and_grad(&x, &labels).map_err(|e| e.to_string())?;
    let params = model.params();
    let eps = 1e-6;
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] += eps;
        model.set_params(&p).unwrap();
        let up = model.loss(&x, &labels).unwrap();
        p[i] -= 2.0 * eps;
        model.set_params(&p).unwrap();
        let down = model.loss(&x, &labels).unwrap();
        let numeric = (up - down) / (2.0 * eps);
        let scale = grad[i].abs().max(numeric.abs()).max(1e-4);
        if (grad[i] - numeric).abs() > 1e-5 * scale {
            return Err(format!("parameter {i}: analytic {} vs numeric {numeric}", grad[i]));
        }
    }
    Ok(())
}
