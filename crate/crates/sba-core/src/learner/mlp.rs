//! A small fully-connected value network with sigmoid hidden layers and a
//! linear output, trained by Adam on squared error of the taken action's
//! value. Written out by hand so gradients can be checked against central
//! finite differences.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// weights[out][in]
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// Network parameters: a dimension chain `[input, hidden.., outputs]` with
/// one weight matrix and bias vector per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpPayload", into = "MlpPayload")]
pub struct MlpParams {
    layers: Vec<Layer>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MlpPayload {
    dims: Vec<usize>,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

impl From<MlpParams> for MlpPayload {
    fn from(p: MlpParams) -> Self {
        MlpPayload {
            dims: p.dims(),
            weights: p.layers.iter().map(|l| l.weights.clone()).collect(),
            biases: p.layers.iter().map(|l| l.bias.clone()).collect(),
        }
    }
}

impl TryFrom<MlpPayload> for MlpParams {
    type Error = Error;

    fn try_from(payload: MlpPayload) -> Result<Self> {
        if payload.dims.len() < 2 {
            return Err(Error::Schema("mlp needs at least [input, output] dims".to_string()));
        }
        let n_layers = payload.dims.len() - 1;
        if payload.weights.len() != n_layers || payload.biases.len() != n_layers {
            return Err(Error::Schema(format!(
                "mlp with {} dims needs {} weight matrices and bias vectors, got {} and {}",
                payload.dims.len(),
                n_layers,
                payload.weights.len(),
                payload.biases.len()
            )));
        }
        let layers: Vec<Layer> = payload
            .weights
            .into_iter()
            .zip(payload.biases)
            .map(|(weights, bias)| Layer { weights, bias })
            .collect();
        let params = MlpParams { layers };
        params.validate_against(&payload.dims)?;
        Ok(params)
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl MlpParams {
    /// Glorot-uniform weights (|w| <= sqrt(6 / (fan_in + fan_out))), zero
    /// biases. Draw order is layer-major then row-major, so a fixed seed
    /// reproduces identical parameters.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!("invalid dimension chain {dims:?}")));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_out)
                .map(|_| (0..fan_in).map(|_| rng.gen_range(-bound..bound)).collect())
                .collect();
            layers.push(Layer {
                weights,
                bias: vec![0.0; fan_out],
            });
        }
        Ok(MlpParams { layers })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].weights[0].len()];
        dims.extend(self.layers.iter().map(|l| l.bias.len()));
        dims
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].weights[0].len()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().expect("at least one layer").bias.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    fn validate_against(&self, dims: &[usize]) -> Result<()> {
        let mut expected_in = dims[0];
        for (l, layer) in self.layers.iter().enumerate() {
            let out = dims[l + 1];
            if layer.bias.len() != out || layer.weights.len() != out {
                return Err(Error::Dimension(format!(
                    "layer {l} expects {out} outputs, got {} weights rows and {} biases",
                    layer.weights.len(),
                    layer.bias.len()
                )));
            }
            for (r, row) in layer.weights.iter().enumerate() {
                if row.len() != expected_in {
                    return Err(Error::Dimension(format!(
                        "layer {l} row {r} has {} inputs, expected {expected_in}",
                        row.len()
                    )));
                }
            }
            expected_in = out;
        }
        self.check_finite()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.layers[0].weights.is_empty() {
            return Err(Error::Dimension("mlp has no layers".to_string()));
        }
        let dims = self.dims();
        self.validate_against(&dims)
    }

    fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Dimension("mlp contains non-finite parameters".to_string()))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.bias.iter().all(|b| b.is_finite())
                && l.weights.iter().all(|row| row.iter().all(|w| w.is_finite()))
        })
    }

    /// Action values for an encoded observation.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.activations(x)?.pop().expect("output activation"))
    }

    /// All layer activations, input first, output last. Hidden layers are
    /// sigmoid, the output is linear.
    pub fn activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.input_size() {
            return Err(Error::Dimension(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.input_size()
            )));
        }
        let n = self.layers.len();
        let mut acts = Vec::with_capacity(n + 1);
        acts.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = &acts[l];
            let mut z: Vec<f64> = layer
                .weights
                .iter()
                .zip(&layer.bias)
                .map(|(row, b)| row.iter().zip(input).map(|(w, xi)| w * xi).sum::<f64>() + b)
                .collect();
            if l + 1 < n {
                for v in z.iter_mut() {
                    *v = sigmoid(*v);
                }
            }
            acts.push(z);
        }
        Ok(acts)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.bias.len() * (l.weights[0].len() + 1))
            .sum()
    }

    /// Flat parameter views, used by the finite-difference gradient check.
    pub fn get_flat(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            for row in &l.weights {
                if idx < row.len() {
                    return row[idx];
                }
                idx -= row.len();
            }
            if idx < l.bias.len() {
                return l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("flat index out of range");
    }

    pub fn set_flat(&mut self, mut idx: usize, value: f64) {
        for l in &mut self.layers {
            for row in &mut l.weights {
                if idx < row.len() {
                    row[idx] = value;
                    return;
                }
                idx -= row.len();
            }
            if idx < l.bias.len() {
                l.bias[idx] = value;
                return;
            }
            idx -= l.bias.len();
        }
        panic!("flat index out of range");
    }
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGrads {
            layers: params
                .layers
                .iter()
                .map(|l| Layer {
                    weights: l.weights.iter().map(|r| vec![0.0; r.len()]).collect(),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            for row in &l.weights {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(&l.bias);
        }
        out
    }
}

/// One regression target: the value of `action` at encoding `x` should
/// move toward `target`.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub x: Vec<f64>,
    pub action: usize,
    pub target: f64,
}

/// Mean squared error of the taken actions' values over a batch, plus its
/// gradient with respect to every parameter.
pub fn grad_batch(params: &MlpParams, batch: &[BatchItem]) -> Result<(f64, MlpGrads)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".to_string()));
    }
    let b = batch.len() as f64;
    let n = params.layers.len();
    let mut grads = MlpGrads::zeros_like(params);
    let mut loss = 0.0;

    for item in batch {
        if item.action >= params.output_size() {
            return Err(Error::Dimension(format!(
                "batch action {} out of range 0..{}",
                item.action,
                params.output_size()
            )));
        }
        let acts = params.activations(&item.x)?;
        let out = &acts[n];
        let err = out[item.action] - item.target;
        loss += err * err / b;

        let mut delta = vec![0.0; out.len()];
        delta[item.action] = 2.0 * err / b;

        for l in (0..n).rev() {
            let input = &acts[l];
            let glayer = &mut grads.layers[l];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                glayer.bias[o] += d;
                let row = &mut glayer.weights[o];
                for (i, xi) in input.iter().enumerate() {
                    row[i] += d * xi;
                }
            }
            if l > 0 {
                let layer = &params.layers[l];
                let mut prev = vec![0.0; input.len()];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    for (i, w) in layer.weights[o].iter().enumerate() {
                        prev[i] += w * d;
                    }
                }
                // Sigmoid derivative in terms of the activation itself.
                for (i, p) in prev.iter_mut().enumerate() {
                    *p *= input[i] * (1.0 - input[i]);
                }
                delta = prev;
            }
        }
    }
    Ok((loss, grads))
}

/// Adam optimizer state with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: u64,
    m: MlpGrads,
    v: MlpGrads,
}

impl AdamState {
    pub fn new(params: &MlpParams, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            lr,
            beta1,
            beta2,
            epsilon,
            t: 0,
            m: MlpGrads::zeros_like(params),
            v: MlpGrads::zeros_like(params),
        }
    }

    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpGrads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (l, layer) in params.layers.iter_mut().enumerate() {
            let (gm, gv, g) = (&mut self.m.layers[l], &mut self.v.layers[l], &grads.layers[l]);
            for o in 0..layer.bias.len() {
                for i in 0..layer.weights[o].len() {
                    let grad = g.weights[o][i];
                    let m = &mut gm.weights[o][i];
                    let v = &mut gv.weights[o][i];
                    *m = self.beta1 * *m + (1.0 - self.beta1) * grad;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * grad * grad;
                    layer.weights[o][i] -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.epsilon);
                }
                let grad = g.bias[o];
                let m = &mut gm.bias[o];
                let v = &mut gv.bias[o];
                *m = self.beta1 * *m + (1.0 - self.beta1) * grad;
                *v = self.beta2 * *v + (1.0 - self.beta2) * grad * grad;
                layer.bias[o] -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.epsilon);
            }
        }
    }
}
