//! Exact tabular IB solver and β sweep.
//!
//! For a fixed β the encoder is iterated through the self-consistent
//! equations
//!
//! ```text
//! p(z)   = Σ_x p(x) p(z|x)
//! p(y|z) = Σ_x p(x,y) p(z|x) / p(z)
//! p(z|x) ∝ p(z)·exp(−β·KL(p(y|x) ‖ p(y|z)))
//! ```
//!
//! Each step is a block minimization of the same free energy, so the
//! objective `I(X;Z) − β·I(Y;Z)` never increases; it is tracked every
//! iteration and any increase beyond round-off clears `Encoder::monotone`.
//!
//! The uniform encoder is an exact fixed point for every β, so random starts
//! perturb it with Dirichlet noise. The sweep then reads off the learnability
//! onset as the first β where `I(X;Z)` leaves the noise band of the lowest
//! grid points.

use std::io::Write;

use log::warn;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::Gamma;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::DiscreteJoint;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Defaults to `min(|X|, 2·|Y|)`.
    pub z_card: Option<usize>,
    pub restarts: usize,
    pub max_iters: usize,
    /// Max-norm change of `p(z|x)` that counts as converged.
    pub tol: f64,
    /// Dirichlet concentration of the random starts around the uniform encoder.
    pub init_concentration: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            z_card: None,
            restarts: 5,
            max_iters: 5000,
            tol: 1e-10,
            init_concentration: 10.0,
        }
    }
}

impl SolverConfig {
    pub fn z_card_for(&self, joint: &DiscreteJoint) -> usize {
        self.z_card.unwrap_or_else(|| joint.nx().min(2 * joint.ny())).max(2)
    }
}

/// A converged (or best-effort) encoder `p(z|x)` at one β.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    /// `|X|×|Z|`, row-stochastic.
    pub probs: DMatrix<f64>,
    pub beta: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `I(X;Z) − β·I(Y;Z)` in nats.
    pub objective: f64,
    pub i_xz: f64,
    pub i_yz: f64,
    /// False if the objective ever rose by more than round-off.
    pub monotone: bool,
}

/// Joint tables in row-major form for the inner loop.
struct Tables {
    nx: usize,
    ny: usize,
    px: Vec<f64>,
    py: Vec<f64>,
    pxy: Vec<f64>,
    pyx: Vec<f64>,
}

impl Tables {
    fn new(joint: &DiscreteJoint) -> Self {
        let (nx, ny) = (joint.nx(), joint.ny());
        let mut pxy = vec![0.0; nx * ny];
        for x in 0..nx {
            for y in 0..ny {
                pxy[x * ny + y] = joint.get(x, y);
            }
        }
        Self {
            nx,
            ny,
            px: joint.px().to_vec(),
            py: joint.py().to_vec(),
            pxy,
            pyx: joint.conditional_rows(),
        }
    }
}

/// Marginals induced by an encoder.
struct Induced {
    pz: Vec<f64>,
    /// `p(y, z)` stored z-major: `pyz[z * ny + y]`.
    pyz: Vec<f64>,
}

fn induce(t: &Tables, q: &[f64], nz: usize) -> Induced {
    let mut pz = vec![0.0; nz];
    let mut pyz = vec![0.0; nz * t.ny];
    for x in 0..t.nx {
        let row = &q[x * nz..(x + 1) * nz];
        for (z, &qz) in row.iter().enumerate() {
            if qz == 0.0 {
                continue;
            }
            pz[z] += t.px[x] * qz;
            for y in 0..t.ny {
                pyz[z * t.ny + y] += t.pxy[x * t.ny + y] * qz;
            }
        }
    }
    Induced { pz, pyz }
}

fn informations(t: &Tables, q: &[f64], nz: usize, m: &Induced) -> (f64, f64) {
    let mut i_xz = 0.0;
    for x in 0..t.nx {
        let row = &q[x * nz..(x + 1) * nz];
        let mut acc = 0.0;
        for (z, &qz) in row.iter().enumerate() {
            if qz > 0.0 {
                acc += qz * (qz / m.pz[z]).ln();
            }
        }
        i_xz += t.px[x] * acc;
    }
    let mut i_yz = 0.0;
    for z in 0..nz {
        for y in 0..t.ny {
            let p = m.pyz[z * t.ny + y];
            if p > 0.0 {
                i_yz += p * (p / (t.py[y] * m.pz[z])).ln();
            }
        }
    }
    (i_xz.max(0.0), i_yz.max(0.0))
}

/// One self-consistent update of `q` into `out`; returns the max-norm change.
fn step(t: &Tables, beta: f64, q: &[f64], nz: usize, m: &Induced, out: &mut [f64]) -> f64 {
    let ny = t.ny;
    let mut log_pygz = vec![f64::NEG_INFINITY; nz * ny];
    let mut log_pz = vec![f64::NEG_INFINITY; nz];
    for z in 0..nz {
        if m.pz[z] > 0.0 {
            log_pz[z] = m.pz[z].ln();
            for y in 0..ny {
                let p = m.pyz[z * ny + y];
                if p > 0.0 {
                    log_pygz[z * ny + y] = (p / m.pz[z]).ln();
                }
            }
        }
    }

    let mut logits = vec![0.0; nz];
    let mut delta = 0.0f64;
    for x in 0..t.nx {
        let pyx = &t.pyx[x * ny..(x + 1) * ny];
        for z in 0..nz {
            // ln p(z) − β·KL(p(y|x) ‖ p(y|z)) up to a z-independent constant.
            let mut cross = 0.0;
            for (y, &p) in pyx.iter().enumerate() {
                if p > 0.0 {
                    cross += p * log_pygz[z * ny + y];
                }
            }
            logits[z] = log_pz[z] + beta * cross;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let row_out = &mut out[x * nz..(x + 1) * nz];
        if max == f64::NEG_INFINITY || max.is_nan() {
            // Every cluster is impossible for this x; fall back to p(z).
            row_out.copy_from_slice(&m.pz);
        } else {
            let mut total = 0.0;
            for (o, &l) in row_out.iter_mut().zip(&logits) {
                *o = (l - max).exp();
                total += *o;
            }
            row_out.iter_mut().for_each(|o| *o /= total);
        }
        for z in 0..nz {
            delta = delta.max((row_out[z] - q[x * nz + z]).abs());
        }
    }
    delta
}

fn to_matrix(q: &[f64], nx: usize, nz: usize) -> DMatrix<f64> {
    DMatrix::from_fn(nx, nz, |x, z| q[x * nz + z])
}

fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (nx, nz) = m.shape();
    let mut out = vec![0.0; nx * nz];
    for x in 0..nx {
        for z in 0..nz {
            out[x * nz + z] = m[(x, z)];
        }
    }
    out
}

fn check_encoder(joint: &DiscreteJoint, encoder: &DMatrix<f64>) -> Result<()> {
    if encoder.nrows() != joint.nx() {
        return Err(Error::DimensionMismatch {
            expected: joint.nx(),
            found: encoder.nrows(),
        });
    }
    if encoder.ncols() < 2 {
        return Err(Error::InvalidArgument("encoder needs at least two clusters".into()));
    }
    for x in 0..encoder.nrows() {
        let row = encoder.row(x);
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (row.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("encoder row {x} is not a distribution")));
        }
    }
    Ok(())
}

/// A single self-consistent update of `encoder` at `beta`.
pub fn ib_update(joint: &DiscreteJoint, beta: f64, encoder: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_encoder(joint, encoder)?;
    let t = Tables::new(joint);
    let nz = encoder.ncols();
    let q = to_row_major(encoder);
    let m = induce(&t, &q, nz);
    let mut out = vec![0.0; q.len()];
    step(&t, beta, &q, nz, &m, &mut out);
    Ok(to_matrix(&out, t.nx, nz))
}

/// `(I(X;Z), I(Y;Z))` in nats for the encoder `p(z|x)`.
pub fn info_plane(encoder: &DMatrix<f64>, joint: &DiscreteJoint) -> Result<(f64, f64)> {
    check_encoder(joint, encoder)?;
    let t = Tables::new(joint);
    let q = to_row_major(encoder);
    let m = induce(&t, &q, encoder.ncols());
    Ok(informations(&t, &q, encoder.ncols(), &m))
}

fn iterate(t: &Tables, beta: f64, mut q: Vec<f64>, nz: usize, config: &SolverConfig) -> Encoder {
    let mut next = vec![0.0; q.len()];
    let mut previous = f64::INFINITY;
    let mut monotone = true;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        let m = induce(t, &q, nz);
        let (i_xz, i_yz) = informations(t, &q, nz, &m);
        let objective = i_xz - beta * i_yz;
        if objective > previous + 1e-12 * (1.0 + previous.abs()) {
            monotone = false;
        }
        previous = objective;
        let delta = step(t, beta, &q, nz, &m, &mut next);
        std::mem::swap(&mut q, &mut next);
        iterations += 1;
        if delta < config.tol {
            converged = true;
            break;
        }
    }
    let m = induce(t, &q, nz);
    let (i_xz, i_yz) = informations(t, &q, nz, &m);
    let objective = i_xz - beta * i_yz;
    if objective > previous + 1e-12 * (1.0 + previous.abs()) {
        monotone = false;
    }
    Encoder {
        probs: to_matrix(&q, t.nx, nz),
        beta,
        converged,
        iterations,
        objective,
        i_xz,
        i_yz,
        monotone,
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

/// Iterate from a given encoder.
pub fn solve_from(joint: &DiscreteJoint, beta: f64, init: &DMatrix<f64>, config: &SolverConfig) -> Result<Encoder> {
    check_beta(beta)?;
    check_encoder(joint, init)?;
    let t = Tables::new(joint);
    Ok(iterate(&t, beta, to_row_major(init), init.ncols(), config))
}

fn random_start(nx: usize, nz: usize, concentration: f64, seed: u64) -> Result<Vec<f64>> {
    let gamma =
        Gamma::new(concentration, 1.0).map_err(|e| Error::InvalidArgument(format!("init concentration: {e}")))?;
    let mut rng = rng_for(seed, 0x69_6e_69_74);
    let mut q = vec![0.0; nx * nz];
    for row in q.chunks_mut(nz) {
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = rng.sample(gamma);
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Ok(q)
}

/// Best of `config.restarts` random starts around the uniform encoder.
pub fn solve(joint: &DiscreteJoint, beta: f64, config: &SolverConfig, seed: u64) -> Result<Encoder> {
    check_beta(beta)?;
    if let Some(k) = config.z_card {
        if k < 2 {
            return Err(Error::InvalidArgument(format!("z_card must be at least 2, got {k}")));
        }
    }
    let nz = config.z_card_for(joint);
    let t = Tables::new(joint);
    let mut best: Option<Encoder> = None;
    for restart in 0..config.restarts.max(1) {
        let q = random_start(t.nx, nz, config.init_concentration, derive_seed(seed, restart as u64))?;
        let enc = iterate(&t, beta, q, nz, config);
        if best.as_ref().is_none_or(|b| enc.objective < b.objective) {
            best = Some(enc);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Onset detection parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnsetProtocol {
    /// Number of lowest-β points forming the baseline.
    pub baseline_points: usize,
    pub n_sigma: f64,
    /// Added to the threshold so a perfectly flat baseline still needs a
    /// real excursion, in nats.
    pub floor: f64,
}

impl Default for OnsetProtocol {
    fn default() -> Self {
        Self {
            baseline_points: 5,
            n_sigma: 3.0,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub beta: f64,
    pub i_xz: f64,
    pub i_yz: f64,
    pub objective: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub detected_beta0: Option<f64>,
    pub protocol: OnsetProtocol,
    pub baseline_mean: f64,
    pub baseline_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub solver: SolverConfig,
    pub protocol: OnsetProtocol,
    /// Anneal from the largest β downward, starting each β from the previous
    /// encoder instead of random restarts.
    pub warm_start: bool,
}

/// `n` points from `lo` to `hi` with a constant ratio.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let ratio = (hi / lo).powf(1.0 / (n - 1) as f64);
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo * ratio.powi(i as i32) })
        .collect()
}

/// Baseline statistics and onset for a sweep sorted by ascending β.
pub fn detect_onset(points: &[SweepPoint], protocol: &OnsetProtocol) -> (Option<f64>, f64, f64) {
    let k = protocol.baseline_points.min(points.len()).max(1);
    let base: Vec<f64> = points[..k].iter().map(|p| p.i_xz).collect();
    let mean = base.iter().sum::<f64>() / k as f64;
    let std = (base.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k as f64).sqrt();
    let threshold = mean + protocol.n_sigma * std + protocol.floor;
    let onset = (1..points.len())
        .find(|&i| points[i].i_xz > threshold)
        .map(|i| 0.5 * (points[i].beta + points[i - 1].beta));
    (onset, mean, std)
}

fn point(enc: &Encoder) -> SweepPoint {
    SweepPoint {
        beta: enc.beta,
        i_xz: enc.i_xz,
        i_yz: enc.i_yz,
        objective: enc.objective,
        converged: enc.converged,
    }
}

/// Solve every β of an ascending grid and detect the learnability onset.
pub fn sweep(joint: &DiscreteJoint, grid: &[f64], config: &SweepConfig, seed: u64) -> Result<SweepResult> {
    let needed = config.protocol.baseline_points + 2;
    if grid.len() < needed {
        return Err(Error::InvalidArgument(format!(
            "beta grid has {} points, need at least {needed}",
            grid.len()
        )));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("beta grid must be strictly ascending".into()));
    }
    grid.iter().try_for_each(|&b| check_beta(b))?;

    let points: Vec<SweepPoint> = if config.warm_start {
        let mut out = vec![None; grid.len()];
        let last = grid.len() - 1;
        let mut enc = solve(joint, grid[last], &config.solver, derive_seed(seed, last as u64))?;
        out[last] = Some(point(&enc));
        for i in (0..last).rev() {
            enc = solve_from(joint, grid[i], &enc.probs, &config.solver)?;
            out[i] = Some(point(&enc));
        }
        out.into_iter().map(|p| p.expect("filled")).collect()
    } else {
        grid.par_iter()
            .enumerate()
            .map(|(i, &beta)| solve(joint, beta, &config.solver, derive_seed(seed, i as u64)).map(|e| point(&e)))
            .collect::<Result<_>>()?
    };
    let unconverged = points.iter().filter(|p| !p.converged).count();
    if unconverged > 0 {
        warn!("{unconverged} sweep point(s) hit the iteration limit");
    }
    let (detected_beta0, baseline_mean, baseline_std) = detect_onset(&points, &config.protocol);
    Ok(SweepResult {
        points,
        detected_beta0,
        protocol: config.protocol,
        baseline_mean,
        baseline_std,
    })
}

impl SweepResult {
    /// Columns `beta, i_xz_nats, i_yz_nats, objective`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["beta", "i_xz_nats", "i_yz_nats", "objective"])?;
        for p in &self.points {
            w.write_record([
                p.beta.to_string(),
                p.i_xz.to_string(),
                p.i_yz.to_string(),
                p.objective.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn all_converged(&self) -> bool {
        self.points.iter().all(|p| p.converged)
    }
}
