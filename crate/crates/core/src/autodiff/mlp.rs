use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Parameter, Tape, Var};
use crate::error::{GinError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Fully connected network: affine layers with an activation between them
/// and none after the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub weights: Vec<Parameter>,
    pub biases: Vec<Parameter>,
    pub activation: Activation,
}

impl Mlp {
    /// `sizes` lists layer widths from input to output. Weights are drawn
    /// uniformly in +-sqrt(6 / (fan_in + fan_out)), biases start at zero.
    pub fn new<R: Rng>(name: &str, sizes: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(GinError::Parameter(format!("bad MLP sizes {sizes:?}")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (k, w) in sizes.windows(2).enumerate() {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            let wm = Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-bound..bound));
            weights.push(Parameter::new(format!("{name}.w{k}"), wm.into_dyn()));
            biases.push(Parameter::new(format!("{name}.b{k}"), Array1::zeros(w[1]).into_dyn()));
        }
        Ok(Mlp {
            weights,
            biases,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map(|w| w.shape()[1]).unwrap_or(0)
    }

    /// Binds the parameters on `tape` for one forward pass.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundMlp<'t> {
        BoundMlp {
            layers: self
                .weights
                .iter()
                .zip(&self.biases)
                .map(|(w, b)| (tape.param(w), tape.param(b)))
                .collect(),
            activation: self.activation,
        }
    }

    /// Convenience forward pass that binds and applies in one go.
    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        self.bind(tape).apply(x)
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.weights.iter().chain(&self.biases)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }
}

/// Parameters of an [`Mlp`] bound to one tape.
#[derive(Debug, Clone)]
pub struct BoundMlp<'t> {
    layers: Vec<(Var<'t>, Var<'t>)>,
    activation: Activation,
}

impl<'t> BoundMlp<'t> {
    pub fn input_dim(&self) -> usize {
        self.layers[0].0.shape()[0]
    }

    pub fn apply(&self, x: Var<'t>) -> Result<Var<'t>> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (k, (w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(*w)?.add(*b)?;
            if k < last {
                h = match self.activation {
                    Activation::Relu => h.relu(),
                    Activation::Sigmoid => h.sigmoid(),
                };
            }
        }
        Ok(h)
    }
}
