//! Small fully connected network estimating `p(y|x)` from labelled samples.
//!
//! ReLU hidden layers, a softmax output, mean cross-entropy loss and Adam on
//! shuffled mini-batches. Inputs are standardized with statistics of the
//! training set, which are stored in the model.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::ConditionalMatrix;
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::synth::SampleSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    /// Adam step size of the first epoch.
    pub learning_rate: f64,
    /// The step size decays geometrically to `learning_rate · final_lr_fraction`
    /// at the last epoch.
    pub final_lr_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            learning_rate: 1e-2,
            final_lr_fraction: 1e-2,
            epochs: 30,
            batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out × n_in`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_out, self.n_in, &self.weights)
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub config: MlpConfig,
    /// Mean training loss before the first epoch and after each epoch.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_history: Vec<f64>,
}

impl MlpModel {
    /// Fan-in scaled uniform weights, zero biases, identity standardization.
    pub fn init(n_inputs: usize, n_classes: usize, config: &MlpConfig) -> Self {
        let mut rng = rng_for(config.seed, 0x6d_6c70);
        let mut sizes = vec![n_inputs];
        sizes.extend(&config.hidden);
        sizes.push(n_classes);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                Layer {
                    n_in: w[0],
                    n_out: w[1],
                    weights: (0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)).collect(),
                    biases: vec![0.0; w[1]],
                }
            })
            .collect();
        Self {
            layers,
            input_mean: vec![0.0; n_inputs],
            input_scale: vec![1.0; n_inputs],
            config: config.clone(),
            loss_history: Vec::new(),
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().expect("at least one layer").n_out
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    /// All weights then biases, layer by layer.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                found: params.len(),
            });
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let (nw, nb) = (l.weights.len(), l.biases.len());
            l.weights.copy_from_slice(&params[offset..offset + nw]);
            l.biases.copy_from_slice(&params[offset + nw..offset + nw + nb]);
            offset += nw + nb;
        }
        Ok(())
    }

    /// Standardized inputs as a `d × n` matrix.
    fn prepare(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if inputs.ncols() != self.n_inputs() {
            return Err(Error::DimensionMismatch {
                expected: self.n_inputs(),
                found: inputs.ncols(),
            });
        }
        Ok(DMatrix::from_fn(inputs.ncols(), inputs.nrows(), |d, i| {
            (inputs[(i, d)] - self.input_mean[d]) / self.input_scale[d]
        }))
    }

    /// Pre-activations of every layer and the softmax output (columns).
    fn forward(&self, a0: DMatrix<f64>) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
        let mut activations = vec![a0];
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let bias = DVector::from_column_slice(&layer.biases);
            let mut h = layer.matrix() * activations.last().expect("input");
            for mut col in h.column_iter_mut() {
                col += &bias;
            }
            if k < last {
                h.apply(|v| *v = v.max(0.0));
            }
            activations.push(h);
        }
        let mut out = activations.pop().expect("output layer");
        for mut col in out.column_iter_mut() {
            let max = col.max();
            col.apply(|v| *v = (*v - max).exp());
            let total = col.sum();
            col /= total;
        }
        (activations, out)
    }

    /// `p(y|x)` for each row of `inputs` (`n × d`).
    pub fn predict_proba(&self, inputs: &DMatrix<f64>) -> Result<ConditionalMatrix> {
        let (_, probs) = self.forward(self.prepare(inputs)?);
        ConditionalMatrix::uniform(probs.transpose())
    }

    pub fn predict_points(&self, points: &[[f64; 2]]) -> Result<ConditionalMatrix> {
        self.predict_proba(&points_matrix(points))
    }

    /// Mean cross-entropy and its gradient with respect to [`Self::params`].
    pub fn loss_and_grad(&self, inputs: &DMatrix<f64>, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
        let a0 = self.prepare(inputs)?;
        check_labels(labels, inputs.nrows(), self.n_classes())?;
        Ok(self.backprop(a0, labels))
    }

    pub fn loss(&self, inputs: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
        let a0 = self.prepare(inputs)?;
        check_labels(labels, inputs.nrows(), self.n_classes())?;
        let (_, probs) = self.forward(a0);
        Ok(cross_entropy(&probs, labels))
    }

    fn backprop(&self, a0: DMatrix<f64>, labels: &[usize]) -> (f64, Vec<f64>) {
        let n = labels.len() as f64;
        let (activations, probs) = self.forward(a0);
        let loss = cross_entropy(&probs, labels);

        let mut delta = probs;
        for (i, &y) in labels.iter().enumerate() {
            delta[(y, i)] -= 1.0;
        }
        delta /= n;

        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];
        for k in (0..self.layers.len()).rev() {
            let input = &activations[k];
            let dw = &delta * input.transpose();
            let db: Vec<f64> = delta.row_iter().map(|r| r.sum()).collect();
            let mut g: Vec<f64> = Vec::with_capacity(self.layers[k].n_params());
            // Row-major to match `Layer::weights`.
            for r in 0..dw.nrows() {
                g.extend(dw.row(r).iter());
            }
            g.extend(db);
            grads[k] = g;
            if k > 0 {
                let mut back = self.layers[k].matrix().transpose() * &delta;
                back.zip_apply(input, |d, a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = back;
            }
        }
        (loss, grads.concat())
    }
}

fn cross_entropy(probs: &DMatrix<f64>, labels: &[usize]) -> f64 {
    -labels
        .iter()
        .enumerate()
        .map(|(i, &y)| probs[(y, i)].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / labels.len() as f64
}

fn check_labels(labels: &[usize], n: usize, n_classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    Ok(())
}

/// `n × 2` input matrix.
pub fn points_matrix(points: &[[f64; 2]]) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), 2, |i, d| points[i][d])
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Train on `n × d` inputs; `n_classes` defaults to the largest label plus one.
pub fn fit(inputs: &DMatrix<f64>, labels: &[usize], n_classes: Option<usize>, config: &MlpConfig) -> Result<MlpModel> {
    let n = inputs.nrows();
    let c = n_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    check_labels(labels, n, c)?;
    let first = labels.first().ok_or(Error::SingleClass)?;
    if labels.iter().all(|y| y == first) {
        return Err(Error::SingleClass);
    }
    if !(config.learning_rate > 0.0 && config.final_lr_fraction > 0.0) || config.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "learning rate and batch size must be positive".into(),
        ));
    }
    let d = inputs.ncols();
    let mut model = MlpModel::init(d, c, config);
    for j in 0..d {
        let col = inputs.column(j);
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        model.input_mean[j] = mean;
        model.input_scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let standardized = model.prepare(inputs)?;

    let mut params = model.params();
    let mut adam = Adam::new(params.len());
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(config.seed, 0x6261_7463);
    model.loss_history.push(model.backprop(standardized.clone(), labels).0);
    for epoch in 0..config.epochs {
        let progress = if config.epochs > 1 {
            epoch as f64 / (config.epochs - 1) as f64
        } else {
            0.0
        };
        let lr = config.learning_rate * config.final_lr_fraction.powf(progress);
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let a0 = standardized.select_columns(batch);
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (_, grad) = model.backprop(a0, &ys);
            adam.step(&mut params, &grad, lr);
            model.set_params(&params)?;
        }
        model.loss_history.push(model.backprop(standardized.clone(), labels).0);
    }
    Ok(model)
}

/// Train on points and observed labels of a sample set.
pub fn fit_samples(samples: &SampleSet, n_classes: Option<usize>, config: &MlpConfig) -> Result<MlpModel> {
    fit(
        &points_matrix(&samples.points),
        &samples.observed_labels,
        n_classes,
        config,
    )
}

impl MlpModel {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        serde_json::to_writer(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }
}
