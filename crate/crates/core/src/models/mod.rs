//! Parameterized vector fields `s -> ds/dt`.
//!
//! Three kinds share one flat parameter vector representation:
//!
//! - `node`: a plain MLP, `ds/dt = f(s)`.
//! - `hnn`: an MLP for a scalar `H`, `ds/dt = J grad H(s)`.
//! - `transformed_node`: a coupling transform `z = g(s)` plus a latent MLP
//!   `dz/dt = f_z(z)`, pulled back to `ds/dt` through `g^{-1}`.

mod checkpoint;
mod coupling;
mod mlp;
mod structure;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub use checkpoint::Checkpoint;
pub use coupling::{BoundCoupling, CouplingConfig, CouplingNet, SCALE_CLAMP};
pub use mlp::{Activation, BoundMlp, Mlp, MlpConfig};
pub use structure::{hamiltonian_field, transformed_field, SymplecticJ, TransformedField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Node,
    Hnn,
    TransformedNode,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Node => "node",
            ModelKind::Hnn => "hnn",
            ModelKind::TransformedNode => "transformed_node",
        })
    }
}

fn default_hidden_layers() -> usize {
    MlpConfig::DEFAULT_HIDDEN_LAYERS
}

fn default_hidden_units() -> usize {
    MlpConfig::DEFAULT_HIDDEN_UNITS
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub state_dim: usize,
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
    #[serde(default = "default_hidden_units")]
    pub hidden_units: usize,
    #[serde(default)]
    pub activation: Activation,
    /// Required for `transformed_node`, ignored otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingConfig>,
}

impl ModelConfig {
    pub fn new(state_dim: usize) -> Self {
        Self {
            state_dim,
            hidden_layers: default_hidden_layers(),
            hidden_units: default_hidden_units(),
            activation: Activation::Softplus,
            coupling: None,
        }
    }

    /// Shape of the main network (`f`, `H` or `f_z`).
    pub fn mlp(&self, kind: ModelKind) -> MlpConfig {
        MlpConfig {
            input_dim: self.state_dim,
            hidden_layers: self.hidden_layers,
            hidden_units: self.hidden_units,
            activation: self.activation,
            output_dim: if kind == ModelKind::Hnn { 1 } else { self.state_dim },
        }
    }

    pub fn param_count(&self, kind: ModelKind) -> usize {
        let main = self.mlp(kind).param_count();
        match (kind, &self.coupling) {
            (ModelKind::TransformedNode, Some(c)) => c.param_count(self.state_dim) + main,
            _ => main,
        }
    }

    fn validate(&self, kind: ModelKind) -> Result<()> {
        self.mlp(kind).validate()?;
        match kind {
            ModelKind::Node => Ok(()),
            ModelKind::Hnn => {
                if self.state_dim % 2 != 0 {
                    Err(Error::OddDimension(self.state_dim))
                } else {
                    Ok(())
                }
            }
            ModelKind::TransformedNode => match &self.coupling {
                Some(c) => c.validate(self.state_dim),
                None => Err(Error::Config(
                    "transformed_node requires a coupling configuration".into(),
                )),
            },
        }
    }
}

#[derive(Clone, Debug)]
enum Nets {
    Plain(Mlp),
    Hamiltonian(Mlp),
    Transformed { coupling: CouplingNet, latent: Mlp },
}

/// A vector field with its parameters.
#[derive(Clone, Debug)]
pub struct DynamicsModel {
    kind: ModelKind,
    config: ModelConfig,
    seed: u64,
    params: Vec<f64>,
    nets: Nets,
}

impl DynamicsModel {
    /// Freshly initialised model. Coupling permutations are derived from
    /// `seed` unless the config fixes them.
    pub fn new(kind: ModelKind, mut config: ModelConfig, seed: u64) -> Result<Self> {
        if kind == ModelKind::TransformedNode && config.coupling.is_none() {
            config.coupling = Some(CouplingConfig::default());
        }
        if let Some(c) = config.coupling.as_mut() {
            c.resolve(config.state_dim, seed);
        }
        config.validate(kind)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(config.param_count(kind));
        if kind == ModelKind::TransformedNode {
            let c = config.coupling.as_ref().expect("validated");
            params.extend(c.init_params(config.state_dim, &mut rng));
        }
        params.extend(config.mlp(kind).init_params(&mut rng, false));
        Self::from_params(kind, config, params, seed)
    }

    pub fn from_params(
        kind: ModelKind,
        mut config: ModelConfig,
        params: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        if kind != ModelKind::TransformedNode {
            config.coupling = None;
        }
        config.validate(kind)?;
        let nets = build_nets(kind, &config, &params)?;
        Ok(Self {
            kind,
            config,
            seed,
            params,
            nets,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        self.nets = build_nets(self.kind, &self.config, &params)?;
        self.params = params;
        Ok(())
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        let nets = match &self.nets {
            Nets::Plain(m) => BoundNets::Plain(m.bind(tape)),
            Nets::Hamiltonian(m) => BoundNets::Hamiltonian(m.bind(tape)),
            Nets::Transformed { coupling, latent } => BoundNets::Transformed {
                coupling: coupling.bind(tape),
                latent: latent.bind(tape),
            },
        };
        BoundModel {
            kind: self.kind,
            state_dim: self.config.state_dim,
            nets,
        }
    }

    /// `ds/dt` for every row of a `batch x n` matrix.
    pub fn eval_batch(&self, states: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let s = tape.leaf(states.clone());
        let sdot = bound.dynamics(&mut tape, s)?;
        Ok(tape.value(sdot).clone())
    }

    /// `ds/dt` at a single state.
    pub fn eval(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                got: state.len(),
            });
        }
        let s = Tensor::from_shape_vec((1, state.len()), state.to_vec()).expect("row");
        let out: Vec<f64> = self.eval_batch(&s)?.into_iter().collect();
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("model output".into()));
        }
        Ok(out)
    }
}

fn build_nets(kind: ModelKind, config: &ModelConfig, params: &[f64]) -> Result<Nets> {
    let expected = config.param_count(kind);
    if params.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: params.len(),
        });
    }
    let mlp = config.mlp(kind);
    Ok(match kind {
        ModelKind::Node => Nets::Plain(Mlp::from_params(mlp, params)?),
        ModelKind::Hnn => Nets::Hamiltonian(Mlp::from_params(mlp, params)?),
        ModelKind::TransformedNode => {
            let c = config.coupling.as_ref().expect("validated");
            let split = c.param_count(config.state_dim);
            Nets::Transformed {
                coupling: CouplingNet::from_params(c, config.state_dim, &params[..split])?,
                latent: Mlp::from_params(mlp, &params[split..])?,
            }
        }
    })
}

#[derive(Clone, Debug)]
enum BoundNets {
    Plain(BoundMlp),
    Hamiltonian(BoundMlp),
    Transformed {
        coupling: BoundCoupling,
        latent: BoundMlp,
    },
}

/// A [`DynamicsModel`] whose parameters are leaves on one tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    kind: ModelKind,
    state_dim: usize,
    nets: BoundNets,
}

impl BoundModel {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    fn check(&self, tape: &Tape, s: Var) -> Result<()> {
        let got = tape.shape(s).1;
        if got != self.state_dim {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim,
                got,
            });
        }
        Ok(())
    }

    /// `ds/dt` at every row of `s`.
    pub fn dynamics(&self, tape: &mut Tape, s: Var) -> Result<Var> {
        self.check(tape, s)?;
        match &self.nets {
            BoundNets::Plain(f) => f.forward(tape, s),
            BoundNets::Hamiltonian(h) => hamiltonian_field(tape, s, |t, s| h.forward(t, s)),
            BoundNets::Transformed { coupling, latent } => {
                Ok(transformed_field(tape, coupling, s, |t, z| latent.forward(t, z))?.rate)
            }
        }
    }

    /// Full set of intermediates for a transformed model.
    pub fn transformed(&self, tape: &mut Tape, s: Var) -> Result<TransformedField> {
        self.check(tape, s)?;
        match &self.nets {
            BoundNets::Transformed { coupling, latent } => {
                transformed_field(tape, coupling, s, |t, z| latent.forward(t, z))
            }
            _ => Err(Error::Config(format!(
                "model kind {} has no coordinate transform",
                self.kind
            ))),
        }
    }

    /// The learned scalar `H` of an `hnn` model.
    pub fn hamiltonian(&self, tape: &mut Tape, s: Var) -> Result<Var> {
        self.check(tape, s)?;
        match &self.nets {
            BoundNets::Hamiltonian(h) => h.forward(tape, s),
            _ => Err(Error::Config(format!(
                "model kind {} has no Hamiltonian network",
                self.kind
            ))),
        }
    }

    pub fn coupling(&self) -> Option<&BoundCoupling> {
        match &self.nets {
            BoundNets::Transformed { coupling, .. } => Some(coupling),
            _ => None,
        }
    }

    pub fn latent_net(&self) -> Option<&BoundMlp> {
        match &self.nets {
            BoundNets::Transformed { latent, .. } => Some(latent),
            _ => None,
        }
    }

    /// Parameter gradient in the model's flat layout.
    pub fn collect_grad(&self, tape: &Tape, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        match &self.nets {
            BoundNets::Plain(m) | BoundNets::Hamiltonian(m) => m.collect_grad(tape, grads, &mut out),
            BoundNets::Transformed { coupling, latent } => {
                coupling.collect_grad(tape, grads, &mut out);
                latent.collect_grad(tape, grads, &mut out);
            }
        }
        out
    }
}
