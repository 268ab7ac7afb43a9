//! Maximum correlation ρₘ(X;Y) from the singular values of
//! `Q[x][y] = p(x,y) / √(p(x)p(y))`.
//!
//! The largest singular value of Q is always 1 (singular vectors `√p(x)`,
//! `√p(y)`); ρₘ is the next one. Subtracting the rank-one trivial part first
//! makes ρₘ the top singular value of the remainder, which also keeps the
//! maximizing functions well defined when ρₘ = 1 has multiplicity.

use log::warn;
use nalgebra::DMatrix;

use crate::dist::DiscreteJoint;
use crate::error::{Error, Result};
use crate::estimators::functional::pivot_sign;
use crate::estimators::{BetaEstimate, Method};

#[derive(Debug, Clone, PartialEq)]
pub struct MaxCorrelation {
    pub rho: f64,
    /// Largest singular value of Q; 1 up to round-off for a valid joint.
    pub top_singular: f64,
    /// Zero-mean, unit-variance `f(X)` attaining ρₘ.
    pub f: Vec<f64>,
    /// Zero-mean, unit-variance `g(Y)` attaining ρₘ.
    pub g: Vec<f64>,
}

fn normalized_contingency(joint: &DiscreteJoint) -> DMatrix<f64> {
    let (px, py) = (joint.px(), joint.py());
    DMatrix::from_fn(joint.nx(), joint.ny(), |x, y| joint.get(x, y) / (px[x] * py[y]).sqrt())
}

/// Top singular value and a unit singular-vector pair.
///
/// The value comes from a values-only SVD and the vectors from the symmetric
/// eigendecomposition of the smaller Gram matrix: requesting U and V from
/// nalgebra's SVD (0.33 to 0.35) returns wrong singular values on some small
/// matrices.
fn top_singular_triplet(m: &DMatrix<f64>) -> (f64, Vec<f64>, Vec<f64>) {
    let sigma = m.clone().singular_values().iter().fold(0.0f64, |a, &s| a.max(s));
    let wide = m.nrows() < m.ncols();
    let gram = if wide { m * m.transpose() } else { m.transpose() * m };
    let eig = gram.symmetric_eigen();
    let k = eig.eigenvalues.imax();
    let small = eig.eigenvectors.column(k).into_owned();
    let other = if wide { m.transpose() * &small } else { m * &small };
    let norm = other.norm();
    let other: Vec<f64> = if norm > 0.0 {
        other.iter().map(|v| v / norm).collect()
    } else {
        vec![0.0; other.len()]
    };
    let small: Vec<f64> = small.iter().copied().collect();
    if wide {
        (sigma, small, other)
    } else {
        (sigma, other, small)
    }
}

pub fn max_correlation_decomposition(joint: &DiscreteJoint) -> MaxCorrelation {
    let q = normalized_contingency(joint);
    let top_singular = q.clone().singular_values().iter().fold(0.0f64, |m, &s| m.max(s));
    if (top_singular - 1.0).abs() > 1e-9 {
        warn!("largest singular value of the normalized joint is {top_singular}, expected 1");
    }

    let (nx, ny) = (joint.nx(), joint.ny());
    if nx < 2 || ny < 2 {
        return MaxCorrelation {
            rho: 0.0,
            top_singular,
            f: vec![0.0; nx],
            g: vec![0.0; ny],
        };
    }
    let sqrt_px: Vec<f64> = joint.px().iter().map(|p| p.sqrt()).collect();
    let sqrt_py: Vec<f64> = joint.py().iter().map(|p| p.sqrt()).collect();
    let deflated = DMatrix::from_fn(nx, ny, |x, y| q[(x, y)] - sqrt_px[x] * sqrt_py[y]);
    let (sigma, u, v) = top_singular_triplet(&deflated);
    let rho = sigma.clamp(0.0, 1.0);

    let mut f: Vec<f64> = u.iter().zip(&sqrt_px).map(|(a, s)| a / s).collect();
    let mut g: Vec<f64> = v.iter().zip(&sqrt_py).map(|(a, s)| a / s).collect();
    if pivot_sign(&f) < 0.0 {
        f.iter_mut().for_each(|v| *v = -*v);
        g.iter_mut().for_each(|v| *v = -*v);
    }
    MaxCorrelation {
        rho,
        top_singular,
        f,
        g,
    }
}

/// ρₘ(X;Y) ∈ [0, 1].
pub fn max_correlation(joint: &DiscreteJoint) -> f64 {
    max_correlation_decomposition(joint).rho
}

/// Exact minimizer of β₀[h]: value `1/ρ²ₘ` with `h* = f`.
pub fn functional_minimizer_svd(joint: &DiscreteJoint) -> Result<BetaEstimate> {
    let mc = max_correlation_decomposition(joint);
    if mc.rho * mc.rho <= 1e-24 {
        return Err(Error::Independent);
    }
    let mut est = BetaEstimate::new(Method::MaxCorrelationInverse, 1.0 / (mc.rho * mc.rho))
        .with_diagnostic("rho_m", mc.rho)
        .with_diagnostic("top_singular_value", mc.top_singular);
    est.h_vector = Some(mc.f);
    Ok(est)
}
