//! Affine coupling network: an invertible map `z = g(s)` with closed-form
//! inverse.
//!
//! Each block permutes the state, keeps the first half `u1` and maps the
//! second half as `z2 = u2 * exp(a(u1)) + t(u1)`, with `a` clamped to
//! `[-5, 5]` before exponentiation.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, BoundMlp, Mlp, MlpConfig};
use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};

pub const SCALE_CLAMP: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub blocks: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    #[serde(default)]
    pub activation: Activation,
    /// One permutation per block; generated from the model seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutations: Option<Vec<Vec<usize>>>,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            blocks: 8,
            hidden_layers: 2,
            hidden_units: 100,
            activation: Activation::Softplus,
            permutations: None,
        }
    }
}

impl CouplingConfig {
    pub fn subnet(&self, dim: usize) -> MlpConfig {
        MlpConfig {
            input_dim: dim / 2,
            hidden_layers: self.hidden_layers,
            hidden_units: self.hidden_units,
            activation: self.activation,
            output_dim: dim / 2,
        }
    }

    pub fn param_count(&self, dim: usize) -> usize {
        2 * self.blocks * self.subnet(dim).param_count()
    }

    /// Fills in seed-derived shuffles if no permutations were given.
    pub fn resolve(&mut self, dim: usize, seed: u64) {
        if self.permutations.is_none() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(0xC0u64);
            let perms = (0..self.blocks)
                .map(|_| {
                    let mut p: Vec<usize> = (0..dim).collect();
                    p.shuffle(&mut rng);
                    p
                })
                .collect();
            self.permutations = Some(perms);
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if dim % 2 != 0 {
            return Err(Error::OddDimension(dim));
        }
        if let Some(perms) = &self.permutations {
            if perms.len() != self.blocks {
                return Err(Error::Config(format!(
                    "{} permutations given for {} blocks",
                    perms.len(),
                    self.blocks
                )));
            }
            for p in perms {
                let mut seen = vec![false; dim];
                for &i in p {
                    if i >= dim || std::mem::replace(&mut seen[i], true) {
                        return Err(Error::Config(format!("{p:?} is not a permutation of 0..{dim}")));
                    }
                }
                if p.len() != dim {
                    return Err(Error::Config(format!("{p:?} is not a permutation of 0..{dim}")));
                }
            }
        }
        Ok(())
    }

    /// Initial parameters: Glorot hidden layers, zero output layers, so the
    /// network starts as a pure permutation.
    pub fn init_params<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        let sub = self.subnet(dim);
        let mut params = Vec::with_capacity(self.param_count(dim));
        for _ in 0..2 * self.blocks {
            params.extend(sub.init_params(rng, true));
        }
        params
    }
}

#[derive(Clone, Debug)]
struct Block {
    perm: Arc<[usize]>,
    inverse: Arc<[usize]>,
    scale: Mlp,
    shift: Mlp,
}

#[derive(Clone, Debug)]
pub struct CouplingNet {
    dim: usize,
    blocks: Vec<Block>,
}

impl CouplingNet {
    /// Builds the network; `config.permutations` must be resolved.
    pub fn from_params(config: &CouplingConfig, dim: usize, params: &[f64]) -> Result<Self> {
        config.validate(dim)?;
        let perms = config
            .permutations
            .as_ref()
            .ok_or_else(|| Error::Config("coupling permutations are unresolved".into()))?;
        if params.len() != config.param_count(dim) {
            return Err(Error::DimensionMismatch {
                expected: config.param_count(dim),
                got: params.len(),
            });
        }
        let sub = config.subnet(dim);
        let per = sub.param_count();
        let blocks = perms
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let mut inv = vec![0; dim];
                for (j, &pj) in p.iter().enumerate() {
                    inv[pj] = j;
                }
                let at = 2 * k * per;
                Ok(Block {
                    perm: Arc::from(p.clone()),
                    inverse: Arc::from(inv),
                    scale: Mlp::from_params(sub, &params[at..at + per])?,
                    shift: Mlp::from_params(sub, &params[at + per..at + 2 * per])?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { dim, blocks })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundCoupling {
        let blocks = self
            .blocks
            .iter()
            .map(|b| BoundBlock {
                perm: Arc::clone(&b.perm),
                inverse: Arc::clone(&b.inverse),
                scale: b.scale.bind(tape),
                shift: b.shift.bind(tape),
            })
            .collect();
        BoundCoupling {
            dim: self.dim,
            blocks,
        }
    }
}

#[derive(Clone, Debug)]
struct BoundBlock {
    perm: Arc<[usize]>,
    inverse: Arc<[usize]>,
    scale: BoundMlp,
    shift: BoundMlp,
}

impl BoundBlock {
    fn log_scale_and_shift(&self, tape: &mut Tape, u1: Var) -> Result<(Var, Var)> {
        let a = self.scale.forward(tape, u1)?;
        let a = tape.clamp(a, -SCALE_CLAMP, SCALE_CLAMP);
        let t = self.shift.forward(tape, u1)?;
        Ok((a, t))
    }
}

#[derive(Clone, Debug)]
pub struct BoundCoupling {
    dim: usize,
    blocks: Vec<BoundBlock>,
}

impl BoundCoupling {
    fn check(&self, tape: &Tape, s: Var) -> Result<()> {
        let got = tape.shape(s).1;
        if got % 2 != 0 {
            return Err(Error::OddDimension(got));
        }
        if got != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }

    /// `z = g(s)`.
    pub fn forward(&self, tape: &mut Tape, s: Var) -> Result<Var> {
        self.check(tape, s)?;
        let half = self.dim / 2;
        let mut x = s;
        for block in &self.blocks {
            let u = tape.permute_cols(x, Arc::clone(&block.perm));
            let u1 = tape.cols(u, 0, half);
            let u2 = tape.cols(u, half, half);
            let (a, t) = block.log_scale_and_shift(tape, u1)?;
            let ea = tape.exp(a);
            let scaled = tape.mul(u2, ea);
            let z2 = tape.add(scaled, t);
            x = tape.concat_cols(&[u1, z2]);
        }
        Ok(x)
    }

    /// `s = g^{-1}(z)`.
    pub fn inverse(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        self.check(tape, z)?;
        let half = self.dim / 2;
        let mut x = z;
        for block in self.blocks.iter().rev() {
            let u1 = tape.cols(x, 0, half);
            let z2 = tape.cols(x, half, half);
            let (a, t) = block.log_scale_and_shift(tape, u1)?;
            let na = tape.neg(a);
            let ena = tape.exp(na);
            let diff = tape.sub(z2, t);
            let u2 = tape.mul(diff, ena);
            let u = tape.concat_cols(&[u1, u2]);
            x = tape.permute_cols(u, Arc::clone(&block.inverse));
        }
        Ok(x)
    }

    pub fn collect_grad(&self, tape: &Tape, grads: &Gradients, out: &mut Vec<f64>) {
        for b in &self.blocks {
            b.scale.collect_grad(tape, grads, out);
            b.shift.collect_grad(tape, grads, out);
        }
    }
}
