//! Discrete probability containers and mutual information.
//!
//! Every estimator consumes one of two tables:
//!
//! * [`DiscreteJoint`]: the full joint `p(x, y)` over finite alphabets.
//! * [`ConditionalMatrix`]: a row-stochastic `p(y|x)` table plus per-example
//!   weights `p(x)`, the shape a classifier produces.
//!
//! Both are immutable after construction. Inputs within [`STOCHASTIC_TOL`] of
//! normalized are renormalized exactly; rows or columns with exactly zero mass
//! are pruned from joints (with a warning) so estimators only see the support.

use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on sums of probability vectors before renormalization.
pub const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Nats,
    Bits,
}

impl LogBase {
    /// Convert a quantity in nats to this unit.
    pub fn from_nats(self, nats: f64) -> f64 {
        match self {
            LogBase::Nats => nats,
            LogBase::Bits => nats / std::f64::consts::LN_2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// A probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    probs: Vec<f64>,
}

impl Marginal {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let probs = normalize_vector(probs, "marginal")?;
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform marginal over an empty alphabet");
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn entropy(&self, base: LogBase) -> f64 {
        base.from_nats(entropy_nats(&self.probs))
    }
}

fn normalize_vector(mut probs: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if probs.is_empty() {
        return Err(Error::Validation(format!("{what} is empty")));
    }
    if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::Validation(format!("{what} has an invalid entry {bad}")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::Validation(format!("{what} sums to {sum}, not 1")));
    }
    probs.iter_mut().for_each(|p| *p /= sum);
    Ok(probs)
}

/// Shannon entropy in nats with `0·ln 0 = 0`.
pub fn entropy_nats(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Joint probability table `p(x, y)` with `|X|` rows and `|Y|` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    probs: DMatrix<f64>,
    px: Vec<f64>,
    py: Vec<f64>,
    x_labels: Option<Vec<String>>,
    y_labels: Option<Vec<String>>,
    /// Original row/column index of every retained row/column.
    x_support: Vec<usize>,
    y_support: Vec<usize>,
}

impl DiscreteJoint {
    /// Validate a joint table, renormalize it and prune zero-mass rows and
    /// columns.
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        Self::with_labels(probs, None, None)
    }

    pub fn with_labels(
        probs: DMatrix<f64>,
        x_labels: Option<Vec<String>>,
        y_labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let (nx, ny) = probs.shape();
        if nx == 0 || ny == 0 {
            return Err(Error::Validation("joint table is empty".into()));
        }
        if let Some(labels) = &x_labels {
            if labels.len() != nx {
                return Err(Error::DimensionMismatch {
                    expected: nx,
                    found: labels.len(),
                });
            }
        }
        if let Some(labels) = &y_labels {
            if labels.len() != ny {
                return Err(Error::DimensionMismatch {
                    expected: ny,
                    found: labels.len(),
                });
            }
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::Validation(format!("joint has an invalid entry {bad}")));
        }
        let total = probs.sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::Validation(format!("joint sums to {total}, not 1")));
        }

        let x_support: Vec<usize> = (0..nx).filter(|&i| probs.row(i).sum() > 0.0).collect();
        let y_support: Vec<usize> = (0..ny).filter(|&j| probs.column(j).sum() > 0.0).collect();
        if x_support.len() < nx {
            warn!("pruning {} zero-mass row(s) of the joint", nx - x_support.len());
        }
        if y_support.len() < ny {
            warn!("pruning {} zero-mass column(s) of the joint", ny - y_support.len());
        }

        let mut pruned = DMatrix::from_fn(x_support.len(), y_support.len(), |i, j| {
            probs[(x_support[i], y_support[j])]
        });
        pruned /= pruned.sum();
        let px = (0..pruned.nrows()).map(|i| pruned.row(i).sum()).collect();
        let py = (0..pruned.ncols()).map(|j| pruned.column(j).sum()).collect();
        let x_labels = x_labels.map(|l| x_support.iter().map(|&i| l[i].clone()).collect());
        let y_labels = y_labels.map(|l| y_support.iter().map(|&j| l[j].clone()).collect());

        Ok(Self {
            probs: pruned,
            px,
            py,
            x_labels,
            y_labels,
            x_support,
            y_support,
        })
    }

    /// Row-major convenience constructor.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?)
    }

    /// Product distribution `p(x)·p(y)`.
    pub fn product(px: &Marginal, py: &Marginal) -> Self {
        let probs = DMatrix::from_fn(px.len(), py.len(), |i, j| px.probs[i] * py.probs[j]);
        Self::new(probs).expect("product of valid marginals is a valid joint")
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.probs[(x, y)]
    }

    pub fn nx(&self) -> usize {
        self.probs.nrows()
    }

    pub fn ny(&self) -> usize {
        self.probs.ncols()
    }

    pub fn px(&self) -> &[f64] {
        &self.px
    }

    pub fn py(&self) -> &[f64] {
        &self.py
    }

    pub fn x_labels(&self) -> Option<&[String]> {
        self.x_labels.as_deref()
    }

    pub fn y_labels(&self) -> Option<&[String]> {
        self.y_labels.as_deref()
    }

    /// Original indices of the rows that survived pruning.
    pub fn x_support(&self) -> &[usize] {
        &self.x_support
    }

    pub fn y_support(&self) -> &[usize] {
        &self.y_support
    }

    /// Row-major copy of `p(y|x)`.
    pub(crate) fn conditional_rows(&self) -> Vec<f64> {
        let (nx, ny) = self.probs.shape();
        let mut out = vec![0.0; nx * ny];
        for i in 0..nx {
            for j in 0..ny {
                out[i * ny + j] = self.probs[(i, j)] / self.px[i];
            }
        }
        out
    }

    /// Reorder rows and columns: new row `i` is old row `x_perm[i]`.
    pub fn permuted(&self, x_perm: &[usize], y_perm: &[usize]) -> Result<Self> {
        check_permutation(x_perm, self.nx())?;
        check_permutation(y_perm, self.ny())?;
        let probs = DMatrix::from_fn(self.nx(), self.ny(), |i, j| self.probs[(x_perm[i], y_perm[j])]);
        Self::new(probs)
    }

    pub fn transpose(&self) -> Self {
        Self::with_labels(self.probs.transpose(), self.y_labels.clone(), self.x_labels.clone())
            .expect("transpose of a valid joint is valid")
    }

    pub fn is_product(&self, tol: f64) -> bool {
        (0..self.nx()).all(|i| (0..self.ny()).all(|j| (self.probs[(i, j)] - self.px[i] * self.py[j]).abs() <= tol))
    }

    pub fn entropy_x(&self, base: LogBase) -> f64 {
        base.from_nats(entropy_nats(&self.px))
    }

    pub fn entropy_y(&self, base: LogBase) -> f64 {
        base.from_nats(entropy_nats(&self.py))
    }

    /// Dense CSV: header of Y labels, optionally preceded by an `x` label column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let y_labels = self
            .y_labels
            .clone()
            .unwrap_or_else(|| (0..self.ny()).map(|j| format!("y{j}")).collect());
        let mut header = Vec::with_capacity(self.ny() + 1);
        if self.x_labels.is_some() {
            header.push("x".to_string());
        }
        header.extend(y_labels);
        w.write_record(&header)?;
        for i in 0..self.nx() {
            let mut record = Vec::with_capacity(header.len());
            if let Some(labels) = &self.x_labels {
                record.push(labels[i].clone());
            }
            record.extend((0..self.ny()).map(|j| self.probs[(i, j)].to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let has_x = header.first().is_some_and(|h| h == "x");
        let y_labels: Vec<String> = header[usize::from(has_x)..].to_vec();
        let mut x_labels = Vec::new();
        let mut rows = Vec::new();
        for record in r.records() {
            let record = record?;
            let mut fields = record.iter();
            if has_x {
                x_labels.push(fields.next().unwrap_or_default().to_string());
            }
            rows.push(parse_numbers(fields)?);
        }
        let probs = matrix_from_rows(&rows)?;
        if probs.ncols() != y_labels.len() {
            return Err(Error::DimensionMismatch {
                expected: y_labels.len(),
                found: probs.ncols(),
            });
        }
        Self::with_labels(probs, has_x.then_some(x_labels), Some(y_labels))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Row-stochastic `p(y|x)` for N examples and C classes, plus example weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMatrix {
    rows: DMatrix<f64>,
    weights: Vec<f64>,
    class_names: Option<Vec<String>>,
}

impl ConditionalMatrix {
    pub fn new(rows: DMatrix<f64>, weights: Vec<f64>) -> Result<Self> {
        let (n, c) = rows.shape();
        if n == 0 || c == 0 {
            return Err(Error::Validation("conditional matrix is empty".into()));
        }
        if weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: weights.len(),
            });
        }
        if weights.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(Error::Validation("example weights must be strictly positive".into()));
        }
        let weights = normalize_vector(weights, "example weights")?;
        let mut rows = rows;
        for i in 0..n {
            let row: Vec<f64> = rows.row(i).iter().copied().collect();
            let row = normalize_vector(row, &format!("row {i} of p(y|x)"))?;
            for (j, p) in row.into_iter().enumerate() {
                rows[(i, j)] = p;
            }
        }
        Ok(Self {
            rows,
            weights,
            class_names: None,
        })
    }

    /// Uniform example weights `1/N`.
    pub fn uniform(rows: DMatrix<f64>) -> Result<Self> {
        let n = rows.nrows();
        Self::new(rows, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn from_rows(rows: &[Vec<f64>], weights: Option<Vec<f64>>) -> Result<Self> {
        let m = matrix_from_rows(rows)?;
        match weights {
            Some(w) => Self::new(m, w),
            None => Self::uniform(m),
        }
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_classes() {
            return Err(Error::DimensionMismatch {
                expected: self.n_classes(),
                found: names.len(),
            });
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn n_examples(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.rows.ncols()
    }

    /// `p(y) = Σᵢ p(xᵢ)·p(y|xᵢ)`.
    pub fn class_marginal(&self) -> Vec<f64> {
        (0..self.n_classes())
            .map(|j| {
                self.weights
                    .iter()
                    .enumerate()
                    .map(|(i, w)| w * self.rows[(i, j)])
                    .sum()
            })
            .collect()
    }

    pub fn permuted(&self, x_perm: &[usize], y_perm: &[usize]) -> Result<Self> {
        check_permutation(x_perm, self.n_examples())?;
        check_permutation(y_perm, self.n_classes())?;
        let rows = DMatrix::from_fn(self.n_examples(), self.n_classes(), |i, j| {
            self.rows[(x_perm[i], y_perm[j])]
        });
        let weights = x_perm.iter().map(|&i| self.weights[i]).collect();
        Self::new(rows, weights)
    }

    /// CSV with one column per class and an optional trailing `weight` column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self
            .class_names
            .clone()
            .unwrap_or_else(|| (0..self.n_classes()).map(|j| format!("y{j}")).collect());
        header.push("weight".into());
        w.write_record(&header)?;
        for i in 0..self.n_examples() {
            let mut record: Vec<String> = self.rows.row(i).iter().map(|p| p.to_string()).collect();
            record.push(self.weights[i].to_string());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let weight_col = header.iter().position(|h| h.eq_ignore_ascii_case("weight"));
        let class_names: Vec<String> = header
            .iter()
            .enumerate()
            .filter(|(k, _)| Some(*k) != weight_col)
            .map(|(_, h)| h.clone())
            .collect();
        let mut rows = Vec::new();
        let mut weights = Vec::new();
        for record in r.records() {
            let mut values = parse_numbers(record?.iter())?;
            if let Some(k) = weight_col {
                if k >= values.len() {
                    return Err(Error::DimensionMismatch {
                        expected: header.len(),
                        found: values.len(),
                    });
                }
                weights.push(values.remove(k));
            }
            rows.push(values);
        }
        let m = matrix_from_rows(&rows)?;
        if m.ncols() != class_names.len() {
            return Err(Error::DimensionMismatch {
                expected: class_names.len(),
                found: m.ncols(),
            });
        }
        let cond = if weight_col.is_some() {
            // Stored weights are rounded decimals; renormalize before validation.
            let total: f64 = weights.iter().sum();
            if total > 0.0 {
                weights.iter_mut().for_each(|w| *w /= total);
            }
            Self::new(m, weights)?
        } else {
            Self::uniform(m)?
        };
        cond.with_class_names(class_names)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// `p(x, y) = p(x)·p(y|x)`.
pub fn joint_from_conditional(cond: &ConditionalMatrix) -> Result<DiscreteJoint> {
    let probs = DMatrix::from_fn(cond.n_examples(), cond.n_classes(), |i, j| {
        cond.weights[i] * cond.rows[(i, j)]
    });
    DiscreteJoint::with_labels(probs, None, cond.class_names.clone())
}

/// Conditional along `axis`: `Axis::X` gives rows `p(y|x)` weighted by `p(x)`,
/// `Axis::Y` gives rows `p(x|y)` weighted by `p(y)`.
pub fn conditional_from_joint(joint: &DiscreteJoint, axis: Axis) -> Result<ConditionalMatrix> {
    let oriented = match axis {
        Axis::X => joint.clone(),
        Axis::Y => joint.transpose(),
    };
    let (n, c) = oriented.probs.shape();
    if let Some(i) = oriented.px.iter().position(|&p| p <= 0.0) {
        return Err(Error::Validation(format!("row {i} has zero mass")));
    }
    let rows = DMatrix::from_fn(n, c, |i, j| oriented.probs[(i, j)] / oriented.px[i]);
    let cond = ConditionalMatrix::new(rows, oriented.px.clone())?;
    match oriented.y_labels {
        Some(names) => cond.with_class_names(names),
        None => Ok(cond),
    }
}

pub fn marginal(joint: &DiscreteJoint, axis: Axis) -> Marginal {
    let probs = match axis {
        Axis::X => joint.px.clone(),
        Axis::Y => joint.py.clone(),
    };
    Marginal { probs }
}

/// `I(X;Y) = Σ p(x,y)·ln[p(x,y) / (p(x)p(y))]`, reported in `base`.
pub fn mutual_information(joint: &DiscreteJoint, base: LogBase) -> f64 {
    let mut mi = 0.0;
    for i in 0..joint.nx() {
        for j in 0..joint.ny() {
            let p = joint.probs[(i, j)];
            if p > 0.0 {
                mi += p * (p / (joint.px[i] * joint.py[j])).ln();
            }
        }
    }
    base.from_nats(mi.max(0.0))
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != c) {
        return Err(Error::DimensionMismatch {
            expected: c,
            found: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(n, c, |i, j| rows[i][j]))
}

fn parse_numbers<'a>(fields: impl Iterator<Item = &'a str>) -> Result<Vec<f64>> {
    fields
        .map(|f| {
            f.parse::<f64>()
                .map_err(|e| Error::Validation(format!("cannot parse {f:?} as a number: {e}")))
        })
        .collect()
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: perm.len(),
        });
    }
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidArgument(format!(
                "{perm:?} is not a permutation of 0..{n}"
            )));
        }
    }
    Ok(())
}
