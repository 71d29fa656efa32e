//! Fully connected regression network with rectifier hidden layers.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of input features.
pub const INPUTS: usize = 3;
/// Hidden layer widths.
pub const HIDDEN: [usize; 3] = [32, 64, 64];

/// How raw features and labels are mapped to the network's working space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocessing {
    /// z-score of the raw features; the network regresses `|alpha|` directly.
    Linear,
    /// z-score of `log10` of the features; the network regresses
    /// `|alpha| / sqrt(xi')` and the prediction is rescaled by `sqrt(xi')`.
    #[default]
    LogRatio,
}

impl std::str::FromStr for Preprocessing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "log-ratio" | "log_ratio" => Ok(Self::LogRatio),
            _ => Err(Error::Config(format!("unknown preprocessing '{s}' (linear | log-ratio)"))),
        }
    }
}

/// Floor applied before taking logarithms of non-negative powers.
const LOG_FLOOR: f64 = 1e-300;

impl Preprocessing {
    /// Raw feature vector to unstandardized network input.
    pub fn transform(self, raw: &[f64]) -> [f64; INPUTS] {
        let mut out = [0.0; INPUTS];
        for (o, &r) in out.iter_mut().zip(raw) {
            *o = match self {
                Self::Linear => r,
                Self::LogRatio => r.max(LOG_FLOOR).log10(),
            };
        }
        out
    }

    /// Factor mapping the network output back to an amplitude.
    pub fn output_scale(self, raw: &[f64]) -> f64 {
        match self {
            Self::Linear => 1.0,
            Self::LogRatio => raw[0].max(0.0).sqrt(),
        }
    }
}

/// Per-feature z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits mean and standard deviation; constant features get unit scale.
    pub fn fit(rows: &[[f64; INPUTS]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Config("cannot fit a standardizer on zero rows".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; INPUTS];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; INPUTS];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        let std = var
            .into_iter()
            .map(|v| if v.sqrt() > 1e-12 * (1.0 + v.sqrt()) { v.sqrt() } else { 1.0 })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &[f64; INPUTS]) -> [f64; INPUTS] {
        let mut out = [0.0; INPUTS];
        for i in 0..INPUTS {
            out[i] = (x[i] - self.mean[i]) / self.std[i];
        }
        out
    }
}

/// Dense layer `z = W x + b` with `W` of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub final_train_mae: f64,
    pub final_val_mae: f64,
    pub train_rows: usize,
    pub val_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Dense>,
    pub standardizer: Standardizer,
    pub preprocessing: Preprocessing,
    pub meta: TrainingMeta,
}

/// Intermediate activations of a batch forward pass.
pub(crate) struct Trace {
    /// Inputs of every layer; `inputs[0]` is the standardized batch.
    inputs: Vec<Array2<f64>>,
    /// Linear output of the last layer, one entry per row.
    pub(crate) output: Array1<f64>,
}

impl MlpModel {
    /// He-uniform hidden layers, Glorot-uniform output layer, zero biases.
    pub fn init<R: Rng + ?Sized>(
        hidden: &[usize],
        standardizer: Standardizer,
        preprocessing: Preprocessing,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        let mut sizes = vec![INPUTS];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = if i == last {
                    (6.0 / (fan_in + fan_out) as f64).sqrt()
                } else {
                    (6.0 / fan_in as f64).sqrt()
                };
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                let mut layer = Dense::zeros(fan_in, fan_out);
                layer.weights.mapv_inplace(|_| dist.sample(rng));
                layer
            })
            .collect();
        Ok(Self {
            layers,
            standardizer,
            preprocessing,
            meta: TrainingMeta::default(),
        })
    }

    /// Layer widths from input to output.
    pub fn layout(&self) -> Vec<usize> {
        let mut out = vec![self.layers[0].inputs()];
        out.extend(self.layers.iter().map(Dense::outputs));
        out
    }

    pub fn param_counts(&self) -> Vec<usize> {
        self.layers.iter().map(Dense::param_count).collect()
    }

    /// Raw features to standardized network input.
    pub fn encode(&self, raw: &[f64]) -> Result<[f64; INPUTS]> {
        if raw.len() != INPUTS {
            return Err(Error::Model(format!(
                "expected {INPUTS} features, got {}",
                raw.len()
            )));
        }
        Ok(self.standardizer.apply(&self.preprocessing.transform(raw)))
    }

    /// Label in the network's working space.
    pub fn encode_label(&self, raw: &[f64], label: f64) -> f64 {
        let scale = self.preprocessing.output_scale(raw);
        match self.preprocessing {
            Preprocessing::Linear => label,
            Preprocessing::LogRatio if scale > 0.0 => label / scale,
            Preprocessing::LogRatio => 0.0,
        }
    }

    /// Non-negative amplitude estimate for one raw feature vector.
    pub fn predict(&self, raw: &[f64]) -> Result<f64> {
        let x = self.encode(raw)?;
        let batch = Array2::from_shape_vec((1, INPUTS), x.to_vec()).expect("shape");
        let z = self.forward_linear(batch.view())[0];
        Ok(z.max(0.0) * self.preprocessing.output_scale(raw))
    }

    pub fn predict_many(&self, rows: &[[f64; INPUTS]]) -> Result<Vec<f64>> {
        let mut data = Vec::with_capacity(rows.len() * INPUTS);
        for r in rows {
            data.extend_from_slice(&self.encode(r)?);
        }
        let batch = Array2::from_shape_vec((rows.len(), INPUTS), data).expect("shape");
        let z = self.forward_linear(batch.view());
        Ok(z.iter()
            .zip(rows)
            .map(|(z, r)| z.max(0.0) * self.preprocessing.output_scale(r))
            .collect())
    }

    /// Unclamped output of the last layer for standardized inputs.
    pub fn forward_linear(&self, x: ArrayView2<f64>) -> Array1<f64> {
        self.trace(x).output
    }

    pub(crate) fn trace(&self, x: ArrayView2<f64>) -> Trace {
        let mut inputs = vec![x.to_owned()];
        let depth = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = inputs[i].dot(&layer.weights.t());
            z += &layer.bias;
            if i + 1 < depth {
                z.mapv_inplace(|v| v.max(0.0));
                inputs.push(z);
            } else {
                return Trace {
                    inputs,
                    output: z.index_axis(Axis(1), 0).to_owned(),
                };
            }
        }
        unreachable!("a model always has an output layer")
    }

    /// Mean absolute error of the linear output against `y` and its exact
    /// gradient. The subgradient is taken as 0 at `|e|` and rectifier kinks.
    pub fn gradient(&self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> (f64, Vec<Dense>) {
        let trace = self.trace(x);
        let n = y.len() as f64;
        let err = &trace.output - &y;
        let loss = err.iter().map(|e| e.abs()).sum::<f64>() / n;
        let mut delta = err.mapv(|e| sign(e) / n).insert_axis(Axis(1));
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let a = &trace.inputs[i];
            let gw = delta.t().dot(a);
            let gb = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut back = delta.dot(&self.layers[i].weights);
                back.zip_mut_with(a, |d, &act| {
                    if act <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
            grads.push(Dense { weights: gw, bias: gb });
        }
        grads.reverse();
        (loss, grads)
    }

    /// Mean absolute error of the linear output, without gradients.
    pub fn mae(&self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> f64 {
        let out = self.forward_linear(x);
        out.iter().zip(y).map(|(o, t)| (o - t).abs()).sum::<f64>() / y.len().max(1) as f64
    }

    /// All parameters as mutable slices, weights before bias per layer.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weights.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensor_sizes(&self) -> Vec<usize> {
        self.layers.iter().flat_map(|l| [l.weights.len(), l.bias.len()]).collect()
    }
}

fn sign(e: f64) -> f64 {
    if e > 0.0 {
        1.0
    } else if e < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient tensors in the same order as [`MlpModel::tensors_mut`].
pub fn gradient_slices(grads: &[Dense]) -> Vec<&[f64]> {
    grads
        .iter()
        .flat_map(|g| {
            [
                g.weights.as_slice().expect("standard layout"),
                g.bias.as_slice().expect("standard layout"),
            ]
        })
        .collect()
}
