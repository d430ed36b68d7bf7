//! Dense networks with optional batch normalization, exact reverse-mode
//! gradients and Adam, in `f64` throughout.
//!
//! Batches are `B x features` matrices, one sample per row. Layer order is
//! dense, batch norm (hidden layers only), activation; the output layer is
//! linear.

mod adam;
mod checkpoint;

pub use adam::{adam_step, adam_update, AdamState};
pub use checkpoint::{Checkpoint, CheckpointError, FORMAT_VERSION, MAGIC};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::config::Activation;
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.01;
pub const PENALIZED_TANH_SLOPE: f64 = 0.25;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::PenalizedTanh => {
                let t = x.tanh();
                if x > 0.0 {
                    t
                } else {
                    PENALIZED_TANH_SLOPE * t
                }
            }
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::PenalizedTanh => {
                let t = x.tanh();
                let d = 1.0 - t * t;
                if x > 0.0 {
                    d
                } else {
                    PENALIZED_TANH_SLOPE * d
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    /// Input, hidden..., output.
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    /// Batch norm after every hidden dense layer.
    pub batch_norm: bool,
}

impl NetworkSpec {
    pub fn new(layer_sizes: Vec<usize>, hidden_activation: Activation, batch_norm: bool) -> Result<Self> {
        let spec = Self {
            layer_sizes,
            hidden_activation,
            batch_norm,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 3 {
            return Err(Error::Config("a network needs input, at least one hidden and an output layer".into()));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_hidden(&self) -> usize {
        self.layer_sizes.len() - 2
    }

    /// Lengths of the trainable tensors in canonical order.
    pub fn tensor_lengths(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, pair) in self.layer_sizes.windows(2).enumerate() {
            out.push(pair[0] * pair[1]);
            out.push(pair[1]);
            if self.batch_norm && i < self.num_hidden() {
                out.push(pair[1]);
                out.push(pair[1]);
            }
        }
        out
    }

    pub fn num_trainable(&self) -> usize {
        self.tensor_lengths().iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in x fan_out`
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
    pub running_mean: DVector<f64>,
    pub running_var: DVector<f64>,
}

impl BatchNorm {
    fn identity(width: usize) -> Self {
        Self {
            gamma: DVector::from_element(width, 1.0),
            beta: DVector::zeros(width),
            running_mean: DVector::zeros(width),
            running_var: DVector::from_element(width, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParameters {
    spec: NetworkSpec,
    dense: Vec<Dense>,
    norms: Vec<BatchNorm>,
    /// Bumped on every change to trainable parameters.
    version: u64,
}

/// Glorot uniform weights, zero biases, identity batch norm.
pub fn init_network(spec: &NetworkSpec, rng: &mut impl Rng) -> Result<NetworkParameters> {
    spec.validate()?;
    let dense = spec
        .layer_sizes
        .windows(2)
        .map(|p| {
            let limit = (6.0 / (p[0] + p[1]) as f64).sqrt();
            Dense {
                weight: DMatrix::from_fn(p[0], p[1], |_, _| rng.random_range(-limit..=limit)),
                bias: DVector::zeros(p[1]),
            }
        })
        .collect();
    let norms = if spec.batch_norm {
        spec.layer_sizes[1..=spec.num_hidden()]
            .iter()
            .map(|&w| BatchNorm::identity(w))
            .collect()
    } else {
        Vec::new()
    };
    Ok(NetworkParameters {
        spec: spec.clone(),
        dense,
        norms,
        version: 0,
    })
}

#[derive(Debug, Clone)]
struct NormTrace {
    xhat: DMatrix<f64>,
    inv_std: DVector<f64>,
    mean: DVector<f64>,
    var: DVector<f64>,
}

#[derive(Debug, Clone)]
struct LayerTrace {
    /// Dense output before normalization and activation.
    z: DMatrix<f64>,
    norm: Option<NormTrace>,
    /// Activation input; `None` when it equals `z`.
    pre: Option<DMatrix<f64>>,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct Trace {
    mode: Mode,
    version: u64,
    shapes: Vec<usize>,
    /// `activations[0]` is the input, `activations[i + 1]` the output of hidden layer `i`.
    activations: Vec<DMatrix<f64>>,
    layers: Vec<LayerTrace>,
    output: DMatrix<f64>,
}

impl Trace {
    pub fn output(&self) -> &DMatrix<f64> {
        &self.output
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

/// Trainable-parameter gradients in canonical tensor order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            tensors: spec.tensor_lengths().into_iter().map(|n| vec![0.0; n]).collect(),
        }
    }

    /// `self += alpha * theta`, the gradient of `alpha/2 ||theta||^2`.
    pub fn add_l2(&mut self, params: &NetworkParameters, alpha: f64) {
        if alpha == 0.0 {
            return;
        }
        for (g, p) in self.tensors.iter_mut().zip(params.trainable()) {
            for (gi, pi) in g.iter_mut().zip(p) {
                *gi += alpha * pi;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flatten().copied().collect()
    }
}

fn add_bias(z: &mut DMatrix<f64>, bias: &DVector<f64>) {
    for (j, mut col) in z.column_iter_mut().enumerate() {
        col.add_scalar_mut(bias[j]);
    }
}

impl NetworkParameters {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn dense(&self) -> &[Dense] {
        &self.dense
    }

    pub fn norms(&self) -> &[BatchNorm] {
        &self.norms
    }

    pub fn dense_mut(&mut self, layer: usize) -> &mut Dense {
        self.version += 1;
        &mut self.dense[layer]
    }

    pub fn norm_mut(&mut self, layer: usize) -> &mut BatchNorm {
        self.version += 1;
        &mut self.norms[layer]
    }

    /// Zero the output layer so the network starts at a constant zero output.
    pub fn zero_output_layer(&mut self) {
        let last = self.dense.len() - 1;
        let d = self.dense_mut(last);
        d.weight.fill(0.0);
        d.bias.fill(0.0);
    }

    pub fn trainable(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for (i, d) in self.dense.iter().enumerate() {
            out.push(d.weight.as_slice());
            out.push(d.bias.as_slice());
            if let Some(n) = self.norms.get(i) {
                out.push(n.gamma.as_slice());
                out.push(n.beta.as_slice());
            }
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        let mut out: Vec<&mut [f64]> = Vec::new();
        let mut norms = self.norms.iter_mut();
        for d in self.dense.iter_mut() {
            out.push(d.weight.as_mut_slice());
            out.push(d.bias.as_mut_slice());
            if let Some(n) = norms.next() {
                out.push(n.gamma.as_mut_slice());
                out.push(n.beta.as_mut_slice());
            }
        }
        out
    }

    /// `1/2 ||theta||^2` over all trainable parameters.
    pub fn l2_penalty(&self) -> f64 {
        0.5 * self.trainable().iter().flat_map(|t| t.iter()).map(|v| v * v).sum::<f64>()
    }

    fn shapes(&self) -> Vec<usize> {
        self.spec.tensor_lengths()
    }

    pub fn forward(&self, x: &DMatrix<f64>, mode: Mode) -> Result<Trace> {
        if x.ncols() != self.spec.input_size() {
            return Err(Error::dimension("network input", self.spec.input_size(), x.ncols()));
        }
        let act = self.spec.hidden_activation;
        let last = self.dense.len() - 1;
        let mut activations = vec![x.clone()];
        let mut layers = Vec::with_capacity(self.dense.len());
        let mut output = DMatrix::zeros(0, 0);
        for (i, d) in self.dense.iter().enumerate() {
            let mut z = activations[i].clone() * &d.weight;
            add_bias(&mut z, &d.bias);
            if i == last {
                output = z.clone();
                layers.push(LayerTrace { z, norm: None, pre: None });
                break;
            }
            let (pre, norm) = match self.norms.get(i) {
                Some(bn) => {
                    let (pre, t) = batch_norm_forward(&z, bn, mode);
                    (Some(pre), Some(t))
                }
                None => (None, None),
            };
            let out = pre.as_ref().unwrap_or(&z).map(|v| act.apply(v));
            activations.push(out);
            layers.push(LayerTrace { z, norm, pre });
        }
        Ok(Trace {
            mode,
            version: self.version,
            shapes: self.shapes(),
            activations,
            layers,
            output,
        })
    }

    /// Infer-mode output without keeping a trace.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.spec.input_size() {
            return Err(Error::dimension("network input", self.spec.input_size(), x.ncols()));
        }
        let act = self.spec.hidden_activation;
        let last = self.dense.len() - 1;
        let mut h = x.clone();
        for (i, d) in self.dense.iter().enumerate() {
            let mut z = &h * &d.weight;
            add_bias(&mut z, &d.bias);
            if i == last {
                return Ok(z);
            }
            if let Some(bn) = self.norms.get(i) {
                z = batch_norm_forward(&z, bn, Mode::Infer).0;
            }
            z.apply(|v| *v = act.apply(*v));
            h = z;
        }
        unreachable!("network has an output layer")
    }

    /// Train-mode forward that also moves the running statistics.
    pub fn forward_train(&mut self, x: &DMatrix<f64>) -> Result<Trace> {
        let trace = self.forward(x, Mode::Train)?;
        self.update_running_stats(&trace);
        Ok(trace)
    }

    pub fn update_running_stats(&mut self, trace: &Trace) {
        if trace.mode != Mode::Train {
            return;
        }
        for (bn, layer) in self.norms.iter_mut().zip(&trace.layers) {
            if let Some(t) = &layer.norm {
                bn.running_mean = &bn.running_mean * BN_MOMENTUM + &t.mean * (1.0 - BN_MOMENTUM);
                bn.running_var = &bn.running_var * BN_MOMENTUM + &t.var * (1.0 - BN_MOMENTUM);
            }
        }
    }

    /// Gradients of `sum(d_out o output)` with respect to every trainable
    /// parameter and the input, through batch statistics where present.
    pub fn backward(&self, trace: &Trace, d_out: &DMatrix<f64>) -> Result<(Gradients, DMatrix<f64>)> {
        if trace.mode != Mode::Train || trace.version != self.version || trace.shapes != self.shapes() {
            return Err(Error::StaleTrace);
        }
        if d_out.shape() != trace.output.shape() {
            return Err(Error::dimension(
                "output gradient",
                format!("{:?}", trace.output.shape()),
                format!("{:?}", d_out.shape()),
            ));
        }
        let act = self.spec.hidden_activation;
        let last = self.dense.len() - 1;
        let mut per_layer: Vec<Vec<Vec<f64>>> = vec![Vec::new(); self.dense.len()];
        let mut g = d_out.clone();
        for i in (0..=last).rev() {
            let layer = &trace.layers[i];
            let mut norm_grads = Vec::new();
            if i != last {
                // g is with respect to this hidden layer's output
                let pre = layer.pre.as_ref().unwrap_or(&layer.z);
                g.zip_apply(pre, |gv, p| *gv *= act.derivative(p));
                if let (Some(t), Some(bn)) = (&layer.norm, self.norms.get(i)) {
                    let (dz, dgamma, dbeta) = batch_norm_backward(&g, t, bn);
                    norm_grads.push(dgamma.as_slice().to_vec());
                    norm_grads.push(dbeta.as_slice().to_vec());
                    g = dz;
                }
            }
            let input = &trace.activations[i];
            let dw = input.transpose() * &g;
            let db: Vec<f64> = g.column_iter().map(|c| c.sum()).collect();
            let d_in = &g * self.dense[i].weight.transpose();
            let mut grads = vec![dw.as_slice().to_vec(), db];
            grads.extend(norm_grads);
            per_layer[i] = grads;
            g = d_in;
        }
        Ok((
            Gradients {
                tensors: per_layer.into_iter().flatten().collect(),
            },
            g,
        ))
    }
}

fn batch_norm_forward(z: &DMatrix<f64>, bn: &BatchNorm, mode: Mode) -> (DMatrix<f64>, NormTrace) {
    let (b, w) = z.shape();
    let mut mean = DVector::zeros(w);
    let mut var = DVector::zeros(w);
    match mode {
        Mode::Train => {
            for (j, col) in z.column_iter().enumerate() {
                let m = col.sum() / b as f64;
                mean[j] = m;
                var[j] = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / b as f64;
            }
        }
        Mode::Infer => {
            mean.copy_from(&bn.running_mean);
            var.copy_from(&bn.running_var);
        }
    }
    let inv_std = var.map(|v| 1.0 / (v + BN_EPSILON).sqrt());
    let mut xhat = z.clone();
    for (j, mut col) in xhat.column_iter_mut().enumerate() {
        col.apply(|v| *v = (*v - mean[j]) * inv_std[j]);
    }
    let mut pre = xhat.clone();
    for (j, mut col) in pre.column_iter_mut().enumerate() {
        col.apply(|v| *v = bn.gamma[j] * *v + bn.beta[j]);
    }
    (pre, NormTrace { xhat, inv_std, mean, var })
}

fn batch_norm_backward(
    g: &DMatrix<f64>,
    t: &NormTrace,
    bn: &BatchNorm,
) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let (b, w) = g.shape();
    let bf = b as f64;
    let mut dz = DMatrix::zeros(b, w);
    let mut dgamma = DVector::zeros(w);
    let mut dbeta = DVector::zeros(w);
    for j in 0..w {
        let gc = g.column(j);
        let xc = t.xhat.column(j);
        let sum_g: f64 = gc.sum();
        let sum_gx: f64 = gc.dot(&xc);
        dgamma[j] = sum_gx;
        dbeta[j] = sum_g;
        let k = bn.gamma[j] * t.inv_std[j] / bf;
        let mut out = dz.column_mut(j);
        for r in 0..b {
            out[r] = k * (bf * gc[r] - sum_g - xc[r] * sum_gx);
        }
    }
    (dz, dgamma, dbeta)
}
