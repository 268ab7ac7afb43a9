//! 2D Gaussian mixtures with class-conditional label noise.
//!
//! A [`MixtureSpec`] lists axis-aligned Gaussian components, each tied to a
//! true class `y*`, plus an optional confusion matrix `p(y|y*)`. From it we
//! can draw samples, evaluate the exact posterior `p(y|x)`, and discretize
//! onto a grid to get a finite joint, either from sample counts or from exact
//! cell masses.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::info;
use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dist::{ConditionalMatrix, DiscreteJoint, Marginal, STOCHASTIC_TOL};
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Per-axis variance of every preset component.
pub const PRESET_VARIANCE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub mean: [f64; 2],
    /// Diagonal of the covariance matrix.
    pub diag_cov: [f64; 2],
    pub weight: f64,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub components: Vec<Component>,
    /// Row `y*` is `p(observed | true = y*)`. Absent means no noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub seed: u64,
}

impl MixtureSpec {
    /// Two equal-weight classes at `(±8, 0)` with symmetric label flips of
    /// rate `rho`.
    pub fn noise_preset(rho: f64) -> Self {
        Self::two_class(16.0, [0.5, 0.5], rho)
    }

    /// Classes with weights 0.6/0.4 whose means are `distance` apart, no noise.
    pub fn overlap_preset(distance: f64) -> Self {
        Self::two_class(distance, [0.6, 0.4], 0.0)
    }

    fn two_class(distance: f64, weights: [f64; 2], rho: f64) -> Self {
        let component = |sign: f64, class_id: usize| Component {
            mean: [sign * distance / 2.0, 0.0],
            diag_cov: [PRESET_VARIANCE; 2],
            weight: weights[class_id],
            class_id,
        };
        let noise = (rho > 0.0).then(|| vec![vec![1.0 - rho, rho], vec![rho, 1.0 - rho]]);
        Self {
            components: vec![component(-1.0, 0), component(1.0, 1)],
            noise,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn n_classes(&self) -> usize {
        let from_components = self.components.iter().map(|c| c.class_id + 1).max().unwrap_or(0);
        self.noise
            .as_ref()
            .map_or(from_components, |n| n.len().max(from_components))
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Validation("mixture has no components".into()));
        }
        for (i, c) in self.components.iter().enumerate() {
            if c.diag_cov.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::Validation(format!("component {i} needs positive variances")));
            }
            if c.mean.iter().any(|m| !m.is_finite()) || !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(Error::Validation(format!(
                    "component {i} has an invalid mean or weight"
                )));
            }
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::Validation(format!("component weights sum to {total}, not 1")));
        }
        if let Some(noise) = &self.noise {
            let c = self.n_classes();
            if noise.len() != c {
                return Err(Error::DimensionMismatch {
                    expected: c,
                    found: noise.len(),
                });
            }
            for (i, row) in noise.iter().enumerate() {
                if row.len() != c {
                    return Err(Error::DimensionMismatch {
                        expected: c,
                        found: row.len(),
                    });
                }
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::Validation(format!("confusion row {i} is not a distribution")));
                }
            }
        }
        Ok(())
    }

    /// `p(y|y*)` as a `C×C` matrix; identity without noise.
    pub fn confusion(&self) -> DMatrix<f64> {
        let c = self.n_classes();
        match &self.noise {
            Some(rows) => DMatrix::from_fn(c, c, |i, j| rows[i][j]),
            None => DMatrix::identity(c, c),
        }
    }

    /// Prior `p(y*)` over true classes.
    pub fn class_prior(&self) -> Result<Marginal> {
        let mut prior = vec![0.0; self.n_classes()];
        for c in &self.components {
            prior[c.class_id] += c.weight;
        }
        Marginal::new(prior)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub points: Vec<[f64; 2]>,
    pub observed_labels: Vec<usize>,
    pub true_labels: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    x1: f64,
    x2: f64,
    observed_label: usize,
    true_label: usize,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Columns `x1, x2, observed_label, true_label`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for i in 0..self.len() {
            w.serialize(SampleRecord {
                x1: self.points[i][0],
                x2: self.points[i][1],
                observed_label: self.observed_labels[i],
                true_label: self.true_labels[i],
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut set = SampleSet {
            points: Vec::new(),
            observed_labels: Vec::new(),
            true_labels: Vec::new(),
        };
        for record in csv::Reader::from_reader(reader).deserialize() {
            let r: SampleRecord = record?;
            set.points.push([r.x1, r.x2]);
            set.observed_labels.push(r.observed_label);
            set.true_labels.push(r.true_label);
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(BufReader::new(File::open(path)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(BufWriter::new(File::create(path)?))
    }
}

/// Draw `n` labelled points; deterministic given `spec.seed`.
pub fn sample(spec: &MixtureSpec, n: usize) -> Result<SampleSet> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let pick = WeightedIndex::new(spec.components.iter().map(|c| c.weight))
        .map_err(|e| Error::Validation(format!("component weights: {e}")))?;
    let confusion = spec.confusion();
    let flips = (0..confusion.nrows())
        .map(|i| WeightedIndex::new(confusion.row(i).iter().copied()))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Validation(format!("confusion matrix: {e}")))?;

    let mut rng = rng_for(spec.seed, 0x73_616d_706c);
    let mut set = SampleSet {
        points: Vec::with_capacity(n),
        observed_labels: Vec::with_capacity(n),
        true_labels: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let c = &spec.components[pick.sample(&mut rng)];
        let point = [0, 1].map(|a| {
            let z: f64 = rng.sample(StandardNormal);
            c.mean[a] + c.diag_cov[a].sqrt() * z
        });
        set.points.push(point);
        set.true_labels.push(c.class_id);
        set.observed_labels.push(flips[c.class_id].sample(&mut rng));
    }
    Ok(set)
}

fn log_density(c: &Component, x: &[f64; 2]) -> f64 {
    (0..2)
        .map(|a| {
            let v = c.diag_cov[a];
            let d = x[a] - c.mean[a];
            -0.5 * (d * d / v + (2.0 * std::f64::consts::PI * v).ln())
        })
        .sum()
}

/// Exact `p(y|x)` at each point, uniformly weighted.
pub fn analytic_posterior(spec: &MixtureSpec, points: &[[f64; 2]]) -> Result<ConditionalMatrix> {
    spec.validate()?;
    if points.is_empty() {
        return Err(Error::InvalidArgument("no points".into()));
    }
    let c = spec.n_classes();
    let confusion = spec.confusion();
    let mut rows = DMatrix::zeros(points.len(), c);
    let mut logs = vec![f64::NEG_INFINITY; c];
    for (i, x) in points.iter().enumerate() {
        logs.iter_mut().for_each(|l| *l = f64::NEG_INFINITY);
        for comp in spec.components.iter().filter(|k| k.weight > 0.0) {
            let l = comp.weight.ln() + log_density(comp, x);
            let acc = &mut logs[comp.class_id];
            *acc = log_add(*acc, l);
        }
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let post: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = post.iter().sum();
        for y in 0..c {
            rows[(i, y)] = (0..c).map(|t| post[t] / total * confusion[(t, y)]).sum();
        }
    }
    ConditionalMatrix::uniform(rows)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Regular `bins × bins` grid over `[lo, hi)` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub bins: usize,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Grid {
    /// Covers every component mean with a margin of 4 standard deviations.
    pub fn covering(spec: &MixtureSpec, bins: usize) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for c in &spec.components {
            for a in 0..2 {
                let margin = 4.0 * c.diag_cov[a].sqrt();
                lo[a] = lo[a].min(c.mean[a] - margin);
                hi[a] = hi[a].max(c.mean[a] + margin);
            }
        }
        Self { bins, lo, hi }
    }

    fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::InvalidArgument("grid needs at least one bin".into()));
        }
        if (0..2).any(|a| !(self.hi[a] > self.lo[a]) || !self.lo[a].is_finite() || !self.hi[a].is_finite()) {
            return Err(Error::InvalidArgument("grid range is empty".into()));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.bins * self.bins
    }

    fn edge(&self, axis: usize, k: usize) -> f64 {
        if k == self.bins {
            return self.hi[axis];
        }
        self.lo[axis] + (self.hi[axis] - self.lo[axis]) * k as f64 / self.bins as f64
    }

    fn bin(&self, axis: usize, v: f64) -> Option<usize> {
        if !(v >= self.lo[axis] && v < self.hi[axis]) {
            return None;
        }
        let k = ((v - self.lo[axis]) / (self.hi[axis] - self.lo[axis]) * self.bins as f64) as usize;
        Some(k.min(self.bins - 1))
    }

    /// Row-major cell index, or `None` outside the range.
    pub fn cell(&self, point: &[f64; 2]) -> Option<usize> {
        Some(self.bin(0, point[0])? * self.bins + self.bin(1, point[1])?)
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 2] {
        let (i, j) = (cell / self.bins, cell % self.bins);
        [
            0.5 * (self.edge(0, i) + self.edge(0, i + 1)),
            0.5 * (self.edge(1, j) + self.edge(1, j + 1)),
        ]
    }
}

/// A grid joint together with the cell each row came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedJoint {
    pub joint: DiscreteJoint,
    pub grid: Grid,
    /// Grid cell index of every joint row.
    pub cells: Vec<usize>,
    /// Original class index of every joint column.
    pub classes: Vec<usize>,
}

impl DiscretizedJoint {
    /// The joint spread back over all `cells × classes` of the grid.
    pub fn dense(&self, n_classes: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n_cells() * n_classes];
        for (r, &cell) in self.cells.iter().enumerate() {
            for (k, &y) in self.classes.iter().enumerate() {
                out[cell * n_classes + y] = self.joint.get(r, k);
            }
        }
        out
    }
}

/// Total-variation distance between two discretizations of the same grid.
pub fn total_variation(a: &DiscretizedJoint, b: &DiscretizedJoint, n_classes: usize) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::InvalidArgument("joints use different grids".into()));
    }
    let (da, db) = (a.dense(n_classes), b.dense(n_classes));
    Ok(0.5 * da.iter().zip(&db).map(|(p, q)| (p - q).abs()).sum::<f64>())
}

/// Keep non-empty cells (row-major order) and build the joint.
fn build(grid: Grid, table: Vec<f64>, n_classes: usize) -> Result<DiscretizedJoint> {
    let total: f64 = table.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NoMassInRange);
    }
    let cells: Vec<usize> = (0..grid.n_cells())
        .filter(|&cell| table[cell * n_classes..(cell + 1) * n_classes].iter().any(|&p| p > 0.0))
        .collect();
    let classes: Vec<usize> = (0..n_classes)
        .filter(|&y| cells.iter().any(|&cell| table[cell * n_classes + y] > 0.0))
        .collect();
    let probs = DMatrix::from_fn(cells.len(), classes.len(), |r, k| {
        table[cells[r] * n_classes + classes[k]] / total
    });
    let labels = cells
        .iter()
        .map(|&c| format!("cell_{}_{}", c / grid.bins, c % grid.bins))
        .collect();
    let joint = DiscreteJoint::with_labels(probs, Some(labels), None)?;
    Ok(DiscretizedJoint {
        joint,
        grid,
        cells,
        classes,
    })
}

/// `P(a ≤ Z < b)` for a standard normal, accurate in both tails.
fn normal_mass(a: f64, b: f64) -> f64 {
    let upper = |t: f64| 0.5 * libm::erfc(t / std::f64::consts::SQRT_2);
    if a >= 0.0 {
        upper(a) - upper(b)
    } else if b <= 0.0 {
        upper(-b) - upper(-a)
    } else {
        1.0 - upper(b) - upper(-a)
    }
    .max(0.0)
}

/// Joint from exact cell masses `Σ_c w_c·P_c(cell)·p(y|y*_c)`; mass outside
/// the grid is dropped and the rest renormalized.
pub fn discretize_exact(spec: &MixtureSpec, grid: &Grid) -> Result<DiscretizedJoint> {
    spec.validate()?;
    grid.validate()?;
    let n_classes = spec.n_classes();
    let confusion = spec.confusion();
    let b = grid.bins;
    let mut table = vec![0.0; grid.n_cells() * n_classes];
    for comp in &spec.components {
        let axis_mass: Vec<Vec<f64>> = (0..2)
            .map(|a| {
                let s = comp.diag_cov[a].sqrt();
                (0..b)
                    .map(|k| {
                        normal_mass(
                            (grid.edge(a, k) - comp.mean[a]) / s,
                            (grid.edge(a, k + 1) - comp.mean[a]) / s,
                        )
                    })
                    .collect()
            })
            .collect();
        for i in 0..b {
            for j in 0..b {
                let mass = comp.weight * axis_mass[0][i] * axis_mass[1][j];
                if mass == 0.0 {
                    continue;
                }
                let cell = i * b + j;
                for y in 0..n_classes {
                    table[cell * n_classes + y] += mass * confusion[(comp.class_id, y)];
                }
            }
        }
    }
    build(*grid, table, n_classes)
}

/// Joint from counts of `(cell, observed label)`; points outside the grid are
/// dropped.
pub fn discretize_samples(samples: &SampleSet, grid: &Grid, n_classes: usize) -> Result<DiscretizedJoint> {
    grid.validate()?;
    let mut table = vec![0.0; grid.n_cells() * n_classes];
    let mut dropped = 0usize;
    for (point, &y) in samples.points.iter().zip(&samples.observed_labels) {
        if y >= n_classes {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {n_classes} classes"
            )));
        }
        match grid.cell(point) {
            Some(cell) => table[cell * n_classes + y] += 1.0,
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        info!("{dropped} sample(s) fell outside the grid and were dropped");
    }
    build(*grid, table, n_classes)
}
