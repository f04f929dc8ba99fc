use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, NodeId};
use super::tensor::{affine, Matrix};
use crate::error::{ensure_dim, Error, Result};

/// One fully connected layer, `out = W·x + b` with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        ensure_dim("layer bias", weights.rows(), bias.len())?;
        Ok(Layer { weights, bias })
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Layer {
            weights: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    pub fn input_width(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_width(&self) -> usize {
        self.weights.rows()
    }
}

/// Parameters of a multilayer perceptron: tanh on every hidden layer, linear
/// output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    layers: Vec<Layer>,
}

/// Graph node handles for every parameter of a [`NetParams`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    layers: Vec<(NodeId, NodeId)>,
}

impl NetParams {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Contract("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            ensure_dim("layer chain", pair[0].output_width(), pair[1].input_width())?;
        }
        Ok(NetParams { layers })
    }

    /// Uniform init in `±1/sqrt(fan_in)`, biases included.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Contract("need at least input and output widths".into()));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut layer = Layer::zeros(fan_in, fan_out);
                for v in layer.weights.as_mut_slice() {
                    *v = rng.random_range(-bound..=bound);
                }
                for v in layer.bias.iter_mut() {
                    *v = rng.random_range(-bound..=bound);
                }
                layer
            })
            .collect();
        NetParams::from_layers(layers)
    }

    pub fn zeros_like(&self) -> Self {
        NetParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.input_width(), l.output_width()))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].output_width()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(Layer::output_width));
        w
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer: weights (row-major) then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        ensure_dim("flat parameters", self.num_params(), flat.len())?;
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
            let m = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + m]);
            off += m;
        }
        Ok(())
    }

    /// Plain forward pass returning the output pre-activations.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        ensure_dim("network input", self.input_width(), input.len())?;
        let last = self.layers.len() - 1;
        let mut x = input.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; l.output_width()];
            affine(l.weights.as_slice(), l.input_width(), &x, &l.bias, &mut y);
            if i < last {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            x = y;
        }
        Ok(x)
    }

    /// Registers every parameter as a leaf on `g`.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let w = g
                    .matrix_leaf(
                        l.output_width(),
                        l.input_width(),
                        l.weights.as_slice().to_vec(),
                    )
                    .expect("layer shape is consistent by construction");
                let b = g.leaf(l.bias.clone());
                (w, b)
            })
            .collect();
        BoundParams { layers }
    }

    /// Taped forward pass. Returns the activation of every layer; the last
    /// entry is the output pre-activation.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        input: NodeId,
    ) -> Result<Vec<NodeId>> {
        ensure_dim("network input", self.input_width(), g.value(input).len())?;
        let last = bound.layers.len() - 1;
        let mut acts = Vec::with_capacity(bound.layers.len());
        let mut x = input;
        for (i, &(w, b)) in bound.layers.iter().enumerate() {
            let y = g.affine(w, b, x)?;
            x = if i < last { g.tanh(y) } else { y };
            acts.push(x);
        }
        Ok(acts)
    }

    /// Gathers the adjoints of the bound parameters into parameter shape.
    pub fn gradients(&self, grads: &Gradients, bound: &BoundParams) -> NetParams {
        let mut out = self.zeros_like();
        for (l, &(w, b)) in out.layers.iter_mut().zip(&bound.layers) {
            l.weights.as_mut_slice().copy_from_slice(grads.wrt(w));
            l.bias.copy_from_slice(grads.wrt(b));
        }
        out
    }

    /// `self += k · other`.
    pub fn add_scaled(&mut self, other: &NetParams, k: f64) -> Result<()> {
        ensure_dim("parameter count", self.num_params(), other.num_params())?;
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            for (p, q) in l.weights.as_mut_slice().iter_mut().zip(o.weights.as_slice()) {
                *p += k * q;
            }
            for (p, q) in l.bias.iter_mut().zip(&o.bias) {
                *p += k * q;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.as_slice().iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    /// Plain SGD: `p ← p − lr·g`.
    pub fn sgd_step(&mut self, grads: &NetParams, lr: f64) -> Result<()> {
        if !(lr >= 0.0) {
            return Err(Error::Contract(format!("learning rate must be >= 0, got {lr}")));
        }
        if self.widths() != grads.widths() {
            return Err(Error::Contract("gradient shape does not match parameters".into()));
        }
        if !grads.is_finite() {
            return Err(Error::Divergence("non-finite gradient".into()));
        }
        self.add_scaled(grads, -lr)
    }
}
