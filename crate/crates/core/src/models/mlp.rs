use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Softplus,
    Tanh,
    Relu,
}

impl Activation {
    pub(crate) fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Softplus => tape.softplus(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
        }
    }
}

/// Shape of a fully connected network. `hidden_layers = 0` is a single
/// affine map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    #[serde(default)]
    pub activation: Activation,
    pub output_dim: usize,
}

impl MlpConfig {
    pub const DEFAULT_HIDDEN_LAYERS: usize = 3;
    pub const DEFAULT_HIDDEN_UNITS: usize = 200;

    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_layers: Self::DEFAULT_HIDDEN_LAYERS,
            hidden_units: Self::DEFAULT_HIDDEN_UNITS,
            activation: Activation::Softplus,
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        if self.hidden_layers > 0 && self.hidden_units == 0 {
            return Err(Error::Config("hidden_units must be positive".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(std::iter::repeat_n(self.hidden_units, self.hidden_layers));
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Glorot-uniform weights and zero biases. With `zero_last`, the output
    /// layer weights are zero too, so the network starts as a constant zero.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R, zero_last: bool) -> Vec<f64> {
        let shapes = self.layer_shapes();
        let mut params = Vec::with_capacity(self.param_count());
        for (k, &(fan_in, fan_out)) in shapes.iter().enumerate() {
            let last = k + 1 == shapes.len();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(if last && zero_last {
                    0.0
                } else {
                    rng.random_range(-limit..limit)
                });
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        params
    }
}

/// Network weights laid out for batched row-vector evaluation.
///
/// The flat parameter layout, per layer, is the `fan_out x fan_in` weight
/// matrix in row-major order followed by the bias, so a layer computes
/// `W s + b` on a column state. Internally each weight is stored transposed.
#[derive(Clone, Debug)]
pub struct Mlp {
    config: MlpConfig,
    layers: Vec<(Arc<Tensor>, Arc<Tensor>)>,
}

impl Mlp {
    pub fn from_params(config: MlpConfig, params: &[f64]) -> Result<Self> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(Error::DimensionMismatch {
                expected: config.param_count(),
                got: params.len(),
            });
        }
        let mut at = 0;
        let mut layers = Vec::new();
        for (fan_in, fan_out) in config.layer_shapes() {
            let w = &params[at..at + fan_in * fan_out];
            let wt = Tensor::from_shape_fn((fan_in, fan_out), |(i, o)| w[o * fan_in + i]);
            at += fan_in * fan_out;
            let b = Tensor::from_shape_vec((1, fan_out), params[at..at + fan_out].to_vec())
                .expect("bias shape");
            at += fan_out;
            layers.push((Arc::new(wt), Arc::new(b)));
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|(w, b)| (tape.leaf_shared(Arc::clone(w)), tape.leaf_shared(Arc::clone(b))))
            .collect();
        BoundMlp {
            config: self.config,
            layers,
        }
    }
}

/// An [`Mlp`] whose weights are leaves on a particular tape.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    config: MlpConfig,
    layers: Vec<(Var, Var)>,
}

impl BoundMlp {
    /// Evaluates the network on a `batch x input_dim` node.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let got = tape.shape(x).1;
        if got != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                got,
            });
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            let z = tape.matmul(h, w);
            let z = tape.add_row(z, b);
            h = if k == last {
                z
            } else {
                self.config.activation.apply(tape, z)
            };
        }
        Ok(h)
    }

    /// Appends this network's parameter gradients, in flat layout, to `out`.
    pub fn collect_grad(&self, tape: &Tape, grads: &Gradients, out: &mut Vec<f64>) {
        for &(w, b) in &self.layers {
            let (fan_in, fan_out) = tape.shape(w);
            match grads.get(w) {
                Some(gw) => {
                    for o in 0..fan_out {
                        for i in 0..fan_in {
                            out.push(gw[[i, o]]);
                        }
                    }
                }
                None => out.extend(std::iter::repeat_n(0.0, fan_in * fan_out)),
            }
            match grads.get(b) {
                Some(gb) => out.extend(gb.iter().copied()),
                None => out.extend(std::iter::repeat_n(0.0, fan_out)),
            }
        }
    }
}
