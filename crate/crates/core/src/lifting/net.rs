use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `a = σ(z)`.
    #[inline]
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Dense layer `y = W x + b`; `weights` is `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    #[serde(with = "crate::matrix_json::row_major")]
    pub weights: DMatrix<f64>,
    #[serde(with = "crate::matrix_json::vector")]
    pub bias: DVector<f64>,
}

/// Fully connected network. Hidden layers use `activation`; the output layer
/// is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<Layer>,
}

/// Per-layer parameter gradients, shaped like [`Mlp::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Layer {
                    weights: DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                    bias: DVector::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.norm_squared() + l.bias.norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weights.iter());
        out.extend(l.bias.iter());
    }
    out
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input batch, `activations[i + 1]` the output
    /// of layer `i` (post-activation for hidden layers).
    activations: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.activations.last().expect("cache holds at least the input")
    }

    pub fn into_output(mut self) -> DMatrix<f64> {
        self.activations.pop().expect("cache holds at least the input")
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(layer_dims: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::Domain(format!(
                "a network needs at least 2 layer widths, got {}",
                layer_dims.len()
            )));
        }
        if let Some(i) = layer_dims.iter().position(|&d| d == 0) {
            return Err(Error::Domain(format!("layer {i} has zero width")));
        }
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weights: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..=bound)),
                    bias: DVector::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            activation,
            layers,
        })
    }

    /// A network of the given shape with every parameter zero.
    pub fn zeros(layer_dims: &[usize], activation: Activation) -> Result<Self> {
        let mut net = Self::new(layer_dims, activation, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        for l in &mut net.layers {
            l.weights.fill(0.0);
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated at construction")
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn param_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.norm_squared() + l.bias.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Parameters in layer order, each weight matrix column-major then bias.
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut i = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = flat[i];
                i += 1;
            }
            for b in l.bias.iter_mut() {
                *b = flat[i];
                i += 1;
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} input rows, got {}",
                self.input_dim(),
                x.nrows()
            )));
        }
        Ok(())
    }

    /// Column-wise forward pass over a batch (`input_dim × m`).
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_cached(x)?.into_output())
    }

    pub fn forward_cached(&self, x: &DMatrix<f64>) -> Result<ForwardCache> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = activations.last().expect("non-empty");
            let mut z = affine(&layer.weights, &layer.bias, prev);
            if i != last {
                let act = self.activation;
                z.apply(|v| *v = act.apply(*v));
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    /// Reverse-mode pass. `upstream` is dL/d(output) with the output's shape.
    /// Returns the parameter gradients and dL/d(input).
    pub fn backward(&self, cache: &ForwardCache, upstream: &DMatrix<f64>) -> Result<(Gradients, DMatrix<f64>)> {
        let out = cache.output();
        if upstream.shape() != out.shape() {
            return Err(Error::Shape(format!(
                "upstream gradient is {:?}, network output is {:?}",
                upstream.shape(),
                out.shape()
            )));
        }
        let last = self.layers.len() - 1;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for i in (0..self.layers.len()).rev() {
            if i != last {
                let a = &cache.activations[i + 1];
                let act = self.activation;
                delta.zip_apply(a, |d, a| *d *= act.grad_from_output(a));
            }
            let input = &cache.activations[i];
            let gw = &delta * input.transpose();
            let gb = delta.column_sum();
            let next_delta = self.layers[i].weights.transpose() * &delta;
            grads.push(Layer { weights: gw, bias: gb });
            delta = next_delta;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }
}

/// `W x + b` for every column of `x`, each column summed in the same fixed
/// order so that a column's result does not depend on the batch it is in.
fn affine(w: &DMatrix<f64>, b: &DVector<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(w.nrows(), x.ncols());
    for (mut zc, xc) in z.column_iter_mut().zip(x.column_iter()) {
        zc.copy_from(b);
        for (k, &xk) in xc.iter().enumerate() {
            zc.axpy(xk, &w.column(k), 1.0);
        }
    }
    z
}
