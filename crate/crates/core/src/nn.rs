//! Multilayer perceptrons.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

/// Layer widths of an MLP. The activation follows every hidden layer and
/// never the output layer; zero hidden layers gives an affine map.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub hidden: Vec<usize>,
    pub out_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(in_dim: usize, hidden: &[usize], out_dim: usize) -> Self {
        Self {
            in_dim,
            hidden: hidden.to_vec(),
            out_dim,
            activation: Activation::Tanh,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// `(fan_in, fan_out)` of each affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.in_dim);
        widths.extend_from_slice(&self.hidden);
        widths.push(self.out_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn count_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!("MLP widths must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// One affine layer: `weight: [out x in]`, `bias: [out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Dense>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: &MlpSpec, rng: &mut impl Rng) -> Self {
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
                Dense {
                    weight: Tensor::new(vec![fan_out, fan_in], w).expect("shape"),
                    bias: Tensor::zeros(&[fan_out]),
                }
            })
            .collect();
        Self {
            spec: spec.clone(),
            layers,
        }
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Dense {
                weight: Tensor::zeros(&[o, i]),
                bias: Tensor::zeros(&[o]),
            })
            .collect();
        Self {
            spec: spec.clone(),
            layers,
        }
    }

    /// Builds an MLP from explicit layers, checking they chain with `spec`.
    pub fn from_layers(spec: &MlpSpec, layers: Vec<Dense>) -> Result<Self> {
        let dims = spec.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::dim("mlp layers", &[dims.len()], &[layers.len()]));
        }
        for ((i, o), l) in dims.iter().zip(&layers) {
            if l.weight.shape() != [*o, *i] || l.bias.shape() != [*o] {
                return Err(Error::dim("mlp layer", &[*o, *i], l.weight.shape()));
            }
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn count_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Number of parameter tensors (two per layer).
    pub fn num_tensors(&self) -> usize {
        2 * self.layers.len()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn tensor_names(&self, prefix: &str) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("{prefix}.{i}.weight"), format!("{prefix}.{i}.bias")])
            .collect()
    }

    /// Records the parameters on `tape`, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    /// Traced forward pass; `leaves` are this MLP's bound parameters in
    /// [`Mlp::tensors`] order.
    pub fn forward_traced(&self, tape: &mut Tape, leaves: &[Var], x: Var) -> Result<Var> {
        debug_assert_eq!(leaves.len(), self.num_tensors());
        let cols = tape.value(x).shape().get(1).copied();
        if tape.value(x).shape().len() != 2 || cols != Some(self.spec.in_dim) {
            return Err(Error::dim("mlp input", tape.value(x).shape(), &[self.spec.in_dim]));
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, pair) in leaves.chunks_exact(2).enumerate() {
            h = tape.linear(h, pair[0], pair[1])?;
            if i < last {
                h = match self.spec.activation {
                    Activation::Tanh => tape.tanh(h)?,
                    Activation::Relu => tape.relu(h)?,
                };
            }
        }
        Ok(h)
    }

    /// Untraced forward pass on `x: [batch x in_dim]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let leaves = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = self.forward_traced(&mut tape, &leaves, xv)?;
        Ok(tape.value(y).clone())
    }
}
