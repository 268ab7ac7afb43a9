//! Closed form for class-conditional label noise.
//!
//! When the true classes `y*` occupy disjoint regions of X and the observed
//! label depends only on the true one, `p(y|x) = p(y|y*(x))`, and the subset
//! search collapses to a minimum over true classes:
//!
//! ```text
//! β₀ = min_{y*} (1/p(y*) − 1) / (Σ_y p(y|y*)²/p(y) − 1)
//! ```
//!
//! For symmetric binary flips at rate ρ with a uniform prior this is
//! `1/(1 − 2ρ)²`.

use nalgebra::DMatrix;

use crate::dist::{Marginal, STOCHASTIC_TOL};
use crate::error::{Error, Result};
use crate::estimators::{chi_square, BetaEstimate, Method};

const UNINFORMATIVE: f64 = 1e-20;

/// `noise[(t, y)] = p(y | y* = t)`, `prior[t] = p(y* = t)`.
pub fn corollary_class_conditional(noise: &DMatrix<f64>, prior: &Marginal) -> Result<BetaEstimate> {
    let (n_true, n_obs) = noise.shape();
    if n_true != prior.len() {
        return Err(Error::DimensionMismatch {
            expected: n_true,
            found: prior.len(),
        });
    }
    for t in 0..n_true {
        let row = noise.row(t);
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (row.sum() - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::Validation(format!("noise row {t} is not a distribution")));
        }
    }
    let p_y: Vec<f64> = (0..n_obs)
        .map(|y| (0..n_true).map(|t| prior.probs()[t] * noise[(t, y)]).sum())
        .collect();
    if let Some(y) = p_y.iter().position(|&p| p <= 0.0) {
        return Err(Error::Validation(format!("observed class {y} has zero probability")));
    }

    let mut best: Option<(f64, usize)> = None;
    for t in 0..n_true {
        let prior_t = prior.probs()[t];
        if prior_t <= 0.0 {
            continue;
        }
        let row: Vec<f64> = noise.row(t).iter().copied().collect();
        let chi2 = chi_square(&row, &p_y);
        if chi2 <= UNINFORMATIVE {
            continue;
        }
        let value = (1.0 - prior_t) / prior_t / chi2;
        if best.is_none_or(|(b, _)| value < b) {
            best = Some((value, t));
        }
    }
    let (value, arg) = best.ok_or(Error::Independent)?;
    Ok(BetaEstimate::new(Method::ClassConditional, value).with_diagnostic("true_class", arg))
}

/// Symmetric flip matrix `p(y ≠ y*) = rate`, spread evenly over the other
/// classes.
pub fn symmetric_noise(n_classes: usize, rate: f64) -> DMatrix<f64> {
    assert!(n_classes >= 2);
    let off = rate / (n_classes - 1) as f64;
    DMatrix::from_fn(n_classes, n_classes, |i, j| if i == j { 1.0 - rate } else { off })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(rate: f64) -> f64 {
        corollary_class_conditional(&symmetric_noise(2, rate), &Marginal::uniform(2))
            .unwrap()
            .value
    }

    #[test]
    fn binary_symmetric_flip() {
        assert!((binary(0.2) - 1.0 / 0.36).abs() < 1e-12);
        assert!((binary(0.2) - 2.78).abs() < 0.005);
        assert!((binary(0.48) - 625.0).abs() < 1e-9);
        assert!((binary(0.3) - 6.25).abs() < 1e-12);
    }

    #[test]
    fn identity_noise_is_one() {
        assert!((binary(0.0) - 1.0).abs() < 1e-15);
        let est = corollary_class_conditional(&DMatrix::identity(3, 3), &Marginal::new(vec![0.2, 0.3, 0.5]).unwrap())
            .unwrap();
        assert!((est.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn imbalanced_prior_picks_the_rare_class() {
        // For the rare class, 1/p − 1 is larger but so is the denominator.
        let prior = Marginal::new(vec![0.6, 0.4]).unwrap();
        let est = corollary_class_conditional(&symmetric_noise(2, 0.1), &prior).unwrap();
        let noise = symmetric_noise(2, 0.1);
        let p_y = [0.6 * 0.9 + 0.4 * 0.1, 0.6 * 0.1 + 0.4 * 0.9];
        let manual =
            |t: usize, pt: f64| (1.0 / pt - 1.0) / ((0..2).map(|y| noise[(t, y)].powi(2) / p_y[y]).sum::<f64>() - 1.0);
        let expected = manual(0, 0.6).min(manual(1, 0.4));
        assert!((est.value - expected).abs() < 1e-12);
    }

    #[test]
    fn half_noise_is_independent() {
        let err = corollary_class_conditional(&symmetric_noise(2, 0.5), &Marginal::uniform(2));
        assert!(matches!(err, Err(Error::Independent)));
    }
}
