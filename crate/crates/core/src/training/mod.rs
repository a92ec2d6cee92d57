//! Derivative-matching training with Adam.
//!
//! The loss of a batch is the mean squared error between predicted and
//! observed derivatives (summed over state coordinates, averaged over
//! samples) plus `w` times the batch mean of the constraint penalty.
//! Samples, not trajectories, are shuffled and batched.

mod adam;
mod loss;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState};
pub use loss::{loss, loss_and_grad, record_loss, LossParts, LossVars};

use crate::autodiff::Tensor;
use crate::constraints::{ConstraintKind, ConstraintSpec};
use crate::error::{Error, Result};
use crate::models::{Activation, CouplingConfig, DynamicsModel, MlpConfig, ModelConfig, ModelKind};
use crate::physics::{stack_samples, System, Trajectory};

/// Rows per worker when a batch is split across threads. Fixed so that the
/// summation order, and hence the result, does not depend on the pool size.
pub const CHUNK_ROWS: usize = 64;

const SHUFFLE_STREAM: u64 = 1;

/// Network shape; the state dimension comes from the task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
    #[serde(default = "default_hidden_units")]
    pub hidden_units: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingConfig>,
}

fn default_hidden_layers() -> usize {
    MlpConfig::DEFAULT_HIDDEN_LAYERS
}

fn default_hidden_units() -> usize {
    MlpConfig::DEFAULT_HIDDEN_UNITS
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden_layers: default_hidden_layers(),
            hidden_units: default_hidden_units(),
            activation: Activation::default(),
            coupling: None,
        }
    }
}

impl Architecture {
    pub fn model_config(&self, state_dim: usize) -> ModelConfig {
        ModelConfig {
            state_dim,
            hidden_layers: self.hidden_layers,
            hidden_units: self.hidden_units,
            activation: self.activation,
            coupling: self.coupling.clone(),
        }
    }
}

fn default_lr() -> f64 {
    1e-4
}

fn default_epochs() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: System,
    pub model_kind: ModelKind,
    #[serde(default)]
    pub architecture: Architecture,
    #[serde(default)]
    pub constraint: ConstraintSpec,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Defaults to [`TrainConfig::default_batch_size`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Report a checkpoint every this many epochs; 0 only at the end.
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn new(task: System, model_kind: ModelKind) -> Self {
        Self {
            task,
            model_kind,
            architecture: Architecture::default(),
            constraint: ConstraintSpec::none(),
            lr: default_lr(),
            epochs: default_epochs(),
            batch_size: None,
            seed: 0,
            checkpoint_every: 0,
        }
    }

    /// Adds the task's usual constraint at its usual weight.
    pub fn constrained(mut self) -> Self {
        let kind = match (self.task, self.model_kind) {
            (System::DampedPendulumXy, _) => ConstraintKind::Dissipative,
            (_, ModelKind::TransformedNode) => ConstraintKind::TransformedHamiltonian,
            _ => ConstraintKind::Hamiltonian,
        };
        self.constraint = ConstraintSpec::new(kind, Self::default_weight(self.task));
        self
    }

    pub fn default_weight(task: System) -> f64 {
        match task {
            System::MassSpring => 1e5,
            System::SinglePendulum => 1e4,
            System::DoublePendulum => 1e3,
            System::DampedPendulumXy => 1e2,
        }
    }

    pub fn default_batch_size(task: System) -> usize {
        match task {
            System::DoublePendulum => 1280,
            _ => 32,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
            .unwrap_or_else(|| Self::default_batch_size(self.task))
    }

    pub fn model_config(&self) -> ModelConfig {
        self.architecture.model_config(self.task.state_dim())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size() == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let n = self.task.state_dim();
        self.constraint.validate(n)?;
        if self.constraint.kind == ConstraintKind::TransformedHamiltonian
            && self.model_kind != ModelKind::TransformedNode
        {
            return Err(Error::Config(format!(
                "transformed_hamiltonian constraint needs a transformed_node model, got {}",
                self.model_kind
            )));
        }
        if self.model_kind == ModelKind::Hnn && n % 2 != 0 {
            return Err(Error::OddDimension(n));
        }
        Ok(())
    }

    pub fn init_model(&self) -> Result<DynamicsModel> {
        DynamicsModel::new(self.model_kind, self.model_config(), self.seed)
    }
}

/// One row of the metrics log. Epoch 0 is the initial model over the whole
/// dataset; later rows average the batch losses seen during the epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mse: f64,
    pub penalty: f64,
    pub total: f64,
    pub wall_ms: f64,
}

/// Why training stopped early.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainFailure {
    pub epoch: usize,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Parameters after the last epoch that completed with a finite loss.
    pub model: DynamicsModel,
    pub epochs_completed: usize,
    pub metrics: Vec<EpochMetrics>,
    pub failure: Option<TrainFailure>,
}

/// Loss and gradient of a batch, split into [`CHUNK_ROWS`]-row chunks that
/// are evaluated in parallel and combined in a fixed order.
pub fn batch_loss_and_grad(
    model: &DynamicsModel,
    states: &Tensor,
    targets: &Tensor,
    spec: &ConstraintSpec,
) -> Result<(LossParts, Vec<f64>)> {
    let rows = states.nrows();
    if rows <= CHUNK_ROWS {
        return loss_and_grad(model, states, targets, spec);
    }
    let starts: Vec<usize> = (0..rows).step_by(CHUNK_ROWS).collect();
    let pieces = starts
        .par_iter()
        .map(|&a| {
            let b = (a + CHUNK_ROWS).min(rows);
            let s = states.slice(ndarray::s![a..b, ..]).to_owned();
            let t = targets.slice(ndarray::s![a..b, ..]).to_owned();
            loss_and_grad(model, &s, &t, spec).map(|r| (b - a, r))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = LossParts {
        total: 0.0,
        mse: 0.0,
        penalty: 0.0,
    };
    let mut grad = vec![0.0; model.param_count()];
    for (len, (parts, g)) in pieces {
        let w = len as f64 / rows as f64;
        out.total += w * parts.total;
        out.mse += w * parts.mse;
        out.penalty += w * parts.penalty;
        for (acc, x) in grad.iter_mut().zip(g) {
            *acc += w * x;
        }
    }
    Ok((out, grad))
}

/// Loss of the whole sample set, evaluated in chunks of `chunk` rows.
pub fn dataset_loss(
    model: &DynamicsModel,
    states: &Tensor,
    targets: &Tensor,
    spec: &ConstraintSpec,
    chunk: usize,
) -> Result<LossParts> {
    let rows = states.nrows();
    let starts: Vec<usize> = (0..rows).step_by(chunk.max(1)).collect();
    let pieces = starts
        .par_iter()
        .map(|&a| {
            let b = (a + chunk).min(rows);
            let s = states.slice(ndarray::s![a..b, ..]).to_owned();
            let t = targets.slice(ndarray::s![a..b, ..]).to_owned();
            loss(model, &s, &t, spec).map(|p| (b - a, p))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = LossParts {
        total: 0.0,
        mse: 0.0,
        penalty: 0.0,
    };
    for (len, p) in pieces {
        let w = len as f64 / rows as f64;
        out.total += w * p.total;
        out.mse += w * p.mse;
        out.penalty += w * p.penalty;
    }
    Ok(out)
}

/// Trains on every sample of `trajectories`.
pub fn train(config: &TrainConfig, trajectories: &[Trajectory]) -> Result<TrainReport> {
    train_with(config, trajectories, |_, _| Ok(()))
}

/// Like [`train`], calling `on_checkpoint` every `checkpoint_every` epochs
/// and after the final epoch.
pub fn train_with<F>(
    config: &TrainConfig,
    trajectories: &[Trajectory],
    on_checkpoint: F,
) -> Result<TrainReport>
where
    F: FnMut(&EpochMetrics, &DynamicsModel) -> Result<()>,
{
    let n = config.task.state_dim();
    for t in trajectories {
        t.validate(n)?;
    }
    let (states, targets) = stack_samples(trajectories, n);
    train_samples(config, &states, &targets, on_checkpoint)
}

/// Trains on explicit `(state, derivative)` rows.
pub fn train_samples<F>(
    config: &TrainConfig,
    states: &Tensor,
    targets: &Tensor,
    mut on_checkpoint: F,
) -> Result<TrainReport>
where
    F: FnMut(&EpochMetrics, &DynamicsModel) -> Result<()>,
{
    config.validate()?;
    let rows = states.nrows();
    if rows == 0 {
        return Err(Error::Config("dataset has no samples".into()));
    }
    let mut model = config.init_model()?;
    let batch_size = config.batch_size();
    let spec = &config.constraint;

    let start = Instant::now();
    let initial = dataset_loss(&model, states, targets, spec, batch_size.max(CHUNK_ROWS))?;
    let mut metrics = vec![EpochMetrics {
        epoch: 0,
        mse: initial.mse,
        penalty: initial.penalty,
        total: initial.total,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    }];

    let mut adam = AdamState::new(model.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..rows).collect();
    let mut failure = None;
    let mut completed = 0;

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let saved = (model.params().to_vec(), adam.clone());
        let mut params = model.params().to_vec();
        let mut sums = [0.0; 3];
        let mut outcome = Ok(());
        for idx in order.chunks(batch_size) {
            let s = states.select(Axis(0), idx);
            let t = targets.select(Axis(0), idx);
            match batch_loss_and_grad(&model, &s, &t, spec) {
                Ok((parts, grad)) => {
                    let w = idx.len() as f64 / rows as f64;
                    sums[0] += w * parts.mse;
                    sums[1] += w * parts.penalty;
                    sums[2] += w * parts.total;
                    adam_step(&mut params, &grad, &mut adam, config.lr)?;
                    if params.iter().any(|p| !p.is_finite()) {
                        outcome = Err(Error::NonFinite("parameters after update".into()));
                        break;
                    }
                    model.set_params(params.clone())?;
                }
                Err(e @ Error::NonFinite(_)) => {
                    outcome = Err(e);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if let Err(e) = outcome {
            log::warn!("training stopped in epoch {epoch}: {e}");
            model.set_params(saved.0)?;
            failure = Some(TrainFailure {
                epoch,
                message: e.to_string(),
            });
            break;
        }
        completed = epoch;
        let m = EpochMetrics {
            epoch,
            mse: sums[0],
            penalty: sums[1],
            total: sums[2],
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        log::debug!(
            "epoch {epoch}: mse {:.6e} penalty {:.6e} total {:.6e}",
            m.mse,
            m.penalty,
            m.total
        );
        metrics.push(m);
        if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 && epoch != config.epochs {
            on_checkpoint(&m, &model)?;
        }
    }
    let last = *metrics.last().expect("epoch 0 row");
    on_checkpoint(&last, &model)?;
    Ok(TrainReport {
        model,
        epochs_completed: completed,
        metrics,
        failure,
    })
}

/// Writes the metrics log as CSV with header `epoch,mse,penalty,total,wall_ms`.
pub fn write_metrics<W: Write>(w: W, metrics: &[EpochMetrics]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for m in metrics {
        out.serialize(m).map_err(|e| Error::Format(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_metrics(path: impl AsRef<Path>, metrics: &[EpochMetrics]) -> Result<()> {
    write_metrics(std::fs::File::create(path)?, metrics)
}
