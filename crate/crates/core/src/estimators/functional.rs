//! The perturbation functional
//!
//! ```text
//! β₀[h] = Var(h(X)) / Var(E[h(X) | Y])
//! ```
//!
//! over real functions `h` on X. Any non-constant, label-informative `h`
//! gives an upper bound on β₀ and the infimum equals `1/ρ²ₘ`.
//!
//! `β₀[a·h + b] = β₀[h]`, so the minimization works on the sphere
//! `E[h] = 0, Var(h) = 1`. Under the `L²(p(x))` metric the gradient of
//! `ln β₀[h]` there is `2h − 2·T h / Var(E[h|Y])` with `T h = E[E[h|Y] | X]`,
//! which keeps the iteration well conditioned when some `p(x)` are tiny.

use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dist::DiscreteJoint;
use crate::error::{Error, Result};
use crate::estimators::{weighted_mean, BetaEstimate, Method};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionalConfig {
    pub max_iters: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Convergence is declared once β₀[h] changed by less than `rel_tol`
    /// (relative) over the last `window` steps.
    pub window: usize,
    pub rel_tol: f64,
}

impl Default for FunctionalConfig {
    fn default() -> Self {
        Self {
            max_iters: 200_000,
            learning_rate: 0.5,
            seed: 0,
            window: 50,
            rel_tol: 1e-9,
        }
    }
}

/// Evaluate β₀[h] on `joint`.
pub fn beta0_functional(joint: &DiscreteJoint, h: &[f64]) -> Result<f64> {
    if h.len() != joint.nx() {
        return Err(Error::DimensionMismatch {
            expected: joint.nx(),
            found: h.len(),
        });
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidDirection("h has non-finite entries".into()));
    }
    let mean = weighted_mean(joint.px(), h);
    let centered: Vec<f64> = h.iter().map(|v| v - mean).collect();
    let var = weighted_mean(joint.px(), &centered.iter().map(|v| v * v).collect::<Vec<_>>());
    let scale = h.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if var <= (1e-12 * scale).powi(2) {
        return Err(Error::InvalidDirection("h is constant on the support of p(x)".into()));
    }
    let between = between_class_variance(joint, &centered);
    if between <= 1e-15 * var {
        return Err(Error::InvalidDirection(
            "E[h|y] does not vary with y; the denominator vanishes".into(),
        ));
    }
    Ok(var / between)
}

/// `Σ_y p(y)·E[h|y]²` for a centered `h`.
fn between_class_variance(joint: &DiscreteJoint, centered: &[f64]) -> f64 {
    class_means(joint, centered)
        .iter()
        .zip(joint.py())
        .map(|(m, p)| p * m * m)
        .sum()
}

fn class_means(joint: &DiscreteJoint, h: &[f64]) -> Vec<f64> {
    let probs = joint.probs();
    (0..joint.ny())
        .map(|y| (0..joint.nx()).map(|x| probs[(x, y)] * h[x]).sum::<f64>() / joint.py()[y])
        .collect()
}

/// Mean square contingency `Σ (p(x,y) − p(x)p(y))² / (p(x)p(y)) = Σ ρᵢ²`.
pub(crate) fn mean_square_contingency(joint: &DiscreteJoint) -> f64 {
    let mut total = 0.0;
    for x in 0..joint.nx() {
        for y in 0..joint.ny() {
            let indep = joint.px()[x] * joint.py()[y];
            let d = joint.get(x, y) - indep;
            total += d * d / indep;
        }
    }
    total
}

fn project(joint: &DiscreteJoint, h: &mut [f64]) {
    let mean = weighted_mean(joint.px(), h);
    h.iter_mut().for_each(|v| *v -= mean);
    let var: f64 = joint.px().iter().zip(h.iter()).map(|(p, v)| p * v * v).sum();
    let norm = var.sqrt();
    if norm > 0.0 {
        h.iter_mut().for_each(|v| *v /= norm);
    }
}

/// Sign of the entry of largest magnitude.
pub(crate) fn pivot_sign(h: &[f64]) -> f64 {
    let pivot = h
        .iter()
        .copied()
        .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
    if pivot < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Fix the sign ambiguity: the entry of largest magnitude is positive.
fn canonical_sign(h: &mut [f64]) {
    if pivot_sign(h) < 0.0 {
        h.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Projected gradient descent on `ln β₀[h]` from a random start.
pub fn minimize_functional(joint: &DiscreteJoint, config: &FunctionalConfig) -> Result<BetaEstimate> {
    if joint.nx() < 2 || joint.ny() < 2 || mean_square_contingency(joint) <= 1e-24 {
        return Err(Error::Independent);
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::InvalidArgument("learning rate must be positive".into()));
    }
    let nx = joint.nx();
    let cond = joint.conditional_rows();
    let ny = joint.ny();

    let mut rng = crate::rng::rng_for(config.seed, 0x6675_6e63);
    let mut h: Vec<f64> = (0..nx).map(|_| rng.sample(StandardNormal)).collect();
    project(joint, &mut h);

    let window = config.window.max(1);
    let mut history: Vec<f64> = Vec::with_capacity(config.max_iters.min(1 << 16));
    let mut best = (f64::INFINITY, h.clone());
    let mut converged = false;
    let mut iterations = 0;
    let mut th = vec![0.0; nx];

    for it in 0..config.max_iters {
        iterations = it + 1;
        let means = class_means(joint, &h);
        let between: f64 = means.iter().zip(joint.py()).map(|(m, p)| p * m * m).sum();
        if !(between > 0.0) {
            // Start orthogonal to every label-informative direction.
            h = (0..nx).map(|_| rng.sample(StandardNormal)).collect();
            project(joint, &mut h);
            continue;
        }
        let beta = 1.0 / between;
        if beta < best.0 {
            best = (beta, h.clone());
        }
        history.push(beta);
        if history.len() > window {
            let old = history[history.len() - 1 - window];
            if (old - beta).abs() <= config.rel_tol * beta {
                converged = true;
                break;
            }
        }

        for x in 0..nx {
            th[x] = (0..ny).map(|y| cond[x * ny + y] * means[y]).sum();
        }
        let lr = config.learning_rate;
        for x in 0..nx {
            let grad = 2.0 * h[x] - 2.0 * th[x] / between;
            h[x] -= lr * grad;
        }
        project(joint, &mut h);
    }

    let (value, mut h_star) = best;
    if !value.is_finite() {
        return Err(Error::Independent);
    }
    if !converged {
        warn!(
            "functional minimization did not converge in {} iterations; returning best value {value}",
            config.max_iters
        );
    }
    canonical_sign(&mut h_star);
    let mut est = BetaEstimate::new(Method::Functional, value)
        .with_diagnostic("converged", converged)
        .with_diagnostic("iterations", iterations)
        .with_diagnostic("learning_rate", config.learning_rate);
    est.h_vector = Some(h_star);
    Ok(est)
}
