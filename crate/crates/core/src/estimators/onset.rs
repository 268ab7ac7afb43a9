//! First-order change of the IB posterior just past the threshold.
//!
//! With the minimizing direction `h*`, the posterior the encoder induces
//! moves away from `p(y)` as
//!
//! ```text
//! p_β(y|x) − p(y) ∝ (h*(x) − h̄)·Σ_{x'} p(x', y)(h*(x') − h̄)
//! ```
//!
//! with `h̄ = E[h*]`. The positive scale depends on the perturbation size and
//! on the `z` part of the perturbation; it is fixed to 1 here.

use nalgebra::DMatrix;

use crate::dist::DiscreteJoint;
use crate::error::{Error, Result};
use crate::estimators::weighted_mean;

/// `|X|×|Y|` correction matrix; each row sums to zero.
pub fn onset_prediction(joint: &DiscreteJoint, h_star: &[f64]) -> Result<DMatrix<f64>> {
    if h_star.len() != joint.nx() {
        return Err(Error::DimensionMismatch {
            expected: joint.nx(),
            found: h_star.len(),
        });
    }
    let mean = weighted_mean(joint.px(), h_star);
    let centered: Vec<f64> = h_star.iter().map(|v| v - mean).collect();
    let spread = centered.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = h_star.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(spread > 1e-12 * scale) {
        return Err(Error::InvalidDirection("h* is constant".into()));
    }
    let column: Vec<f64> = (0..joint.ny())
        .map(|y| (0..joint.nx()).map(|x| joint.get(x, y) * centered[x]).sum())
        .collect();
    Ok(DMatrix::from_fn(joint.nx(), joint.ny(), |x, y| centered[x] * column[y]))
}
