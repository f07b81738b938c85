//! Small feedforward network (tanh hidden layers, linear output) trained
//! with mini-batch gradient descent on mean squared error.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::deadline::Deadline;
use crate::error::{Error, Result};
use crate::transforms::DesignMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Gradient of the loss with respect to every layer's weights and biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Mlp {
    /// Xavier-uniform initialization; `hidden` may be empty (linear model).
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        if inputs == 0 || hidden.contains(&0) {
            return Err(Error::InvalidArgument("network layers need at least one unit".into()));
        }
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let dist = Uniform::new(-limit, limit).expect("valid range");
                Layer {
                    inputs: w[0],
                    outputs: w[1],
                    weights: (0..w[0] * w[1]).map(|_| dist.sample(rng)).collect(),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Activations of every layer, input first.
    fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let input = &acts[li];
            let out: Vec<f64> = (0..layer.outputs)
                .map(|o| {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    let z = layer.bias[o] + row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>();
                    if li == last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.forward_all(x).last().map_or(f64::NAN, |o| o[0])
    }

    /// Mean squared error over `batch` and its gradient by backpropagation.
    pub fn loss_and_gradients(&self, batch: &[(&[f64], f64)]) -> (f64, Gradients) {
        let mut grads = Gradients {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: self.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        };
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut loss = 0.0;
        for (x, y) in batch {
            let acts = self.forward_all(x);
            let pred = acts[acts.len() - 1][0];
            let err = pred - y;
            loss += err * err * scale;
            // dL/dz for the output layer.
            let mut delta = vec![2.0 * err * scale];
            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let input = &acts[li];
                for (o, &d) in delta.iter().enumerate().take(layer.outputs) {
                    grads.bias[li][o] += d;
                    let row = &mut grads.weights[li][o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, v) in row.iter_mut().zip(input) {
                        *g += d * v;
                    }
                }
                if li > 0 {
                    // Back through the tanh of the previous layer: d tanh = 1 - a^2.
                    delta = (0..layer.inputs)
                        .map(|i| {
                            let s: f64 = (0..layer.outputs).map(|o| layer.weights[o * layer.inputs + i] * delta[o]).sum();
                            s * (1.0 - input[i] * input[i])
                        })
                        .collect();
                }
            }
        }
        (loss, grads)
    }

    /// One gradient-descent step on `batch`. Returns the pre-step loss.
    pub fn train_step(&mut self, batch: &[(&[f64], f64)], learning_rate: f64) -> Result<f64> {
        let (loss, grads) = self.loss_and_gradients(batch);
        if !loss.is_finite() {
            return Err(Error::Numerical("non-finite training loss".into()));
        }
        if learning_rate == 0.0 {
            return Ok(loss);
        }
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads.weights.iter().zip(&grads.bias)) {
            for (w, g) in layer.weights.iter_mut().zip(gw) {
                *w -= learning_rate * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(gb) {
                *b -= learning_rate * g;
            }
        }
        Ok(loss)
    }

    /// All parameters flattened (weights then bias, layer by layer).
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("parameter vector too short");
            }
        }
    }
}

impl Gradients {
    /// Flattened in the same order as [`Mlp::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

/// Trains a fresh network on `data`. Shuffling and initialization draw from `rng`.
pub fn fit_mlp<R: Rng + ?Sized>(data: &DesignMatrix, params: &MlpParams, rng: &mut R, deadline: &Deadline) -> Result<Mlp> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("network training needs at least one row".into()));
    }
    if params.batch_size == 0 || !(params.learning_rate >= 0.0) {
        return Err(Error::InvalidArgument("invalid network training parameters".into()));
    }
    let mut net = Mlp::new(data.n_features(), &params.hidden, rng)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..params.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(params.batch_size) {
            deadline.check()?;
            let batch: Vec<(&[f64], f64)> = chunk.iter().map(|&i| (data.rows[i].as_slice(), data.targets[i])).collect();
            net.train_step(&batch, params.learning_rate)?;
        }
    }
    Ok(net)
}
