//! Energy-drift evaluation of learned vector fields.
//!
//! A model is rolled out with RK4 from fresh initial states and the energy
//! of its trajectory is compared against the truth: the initial energy for
//! conservative systems, the energy along the simulated true trajectory for
//! the damped pendulum. A rollout that overflows scores `inf`.

use std::io::Write;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::models::DynamicsModel;
use crate::odeint::{integrate_partial, IntegratorConfig};
use crate::physics::{linspace, Sampler, System};

/// Anything that can be rolled out.
pub trait VectorField: Sync {
    fn state_dim(&self) -> usize;
    fn field(&self, s: &[f64]) -> Result<Vec<f64>>;
}

impl VectorField for DynamicsModel {
    fn state_dim(&self) -> usize {
        DynamicsModel::state_dim(self)
    }

    fn field(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.eval(s)
    }
}

/// The true dynamics of a system, used as a reference model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Oracle(pub System);

impl VectorField for Oracle {
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }

    fn field(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.0.rhs(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub n_test: usize,
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
    pub sampler: Sampler,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_test: 100,
            t_end: 100.0,
            dt: 0.1,
            seed: 0,
            sampler: Sampler::Normal,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_test == 0 {
            return Err(Error::Config("n_test must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.t_end >= self.dt) || !self.t_end.is_finite() {
            return Err(Error::Config(format!(
                "need 0 < dt <= t_end, got dt {} and t_end {}",
                self.dt, self.t_end
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        time_grid(self.t_end, self.dt)
    }
}

/// `0, dt, ..., t_end`, with `t_end / dt` rounded to whole steps.
pub fn time_grid(t_end: f64, dt: f64) -> Vec<f64> {
    let steps = (t_end / dt).round().max(1.0) as usize;
    linspace(0.0, t_end, steps + 1)
}

/// One rollout with its energy record. After an overflow the vectors stop
/// at the last finite state and `rmse` is `inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub model_energy: Vec<f64>,
    pub true_energy: Vec<f64>,
    pub rmse: f64,
    pub overflow: bool,
}

impl EnergyTrace {
    /// Largest coordinate magnitude reached, `inf` after an overflow.
    pub fn max_abs_state(&self) -> f64 {
        if self.overflow {
            return f64::INFINITY;
        }
        self.states
            .iter()
            .flatten()
            .fold(0.0, |m: f64, x| m.max(x.abs()))
    }
}

/// Rolls out `model` from `s0` with RK4 of step `dt` up to `t_end`.
pub fn energy_trace(
    model: &dyn VectorField,
    system: System,
    s0: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<EnergyTrace> {
    if model.state_dim() != system.state_dim() || s0.len() != system.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: system.state_dim(),
            got: if s0.len() != system.state_dim() {
                s0.len()
            } else {
                model.state_dim()
            },
        });
    }
    let grid = time_grid(t_end, dt);
    let sol = integrate_partial(|s| model.field(s), s0, &grid, &IntegratorConfig::rk4(dt))?;
    let reached = sol.states.len();
    let true_energy = if system.is_conservative() {
        vec![system.energy(s0)?; reached]
    } else {
        system
            .simulate(s0, &grid[..reached.max(2).min(grid.len())])?
            .iter()
            .take(reached)
            .map(|s| system.energy(s))
            .collect::<Result<_>>()?
    };
    let model_energy = sol
        .states
        .iter()
        .map(|s| system.energy(s))
        .collect::<Result<Vec<_>>>()?;
    let mut overflow = !sol.is_complete();
    let rmse = if overflow {
        f64::INFINITY
    } else {
        let mse = model_energy
            .iter()
            .zip(&true_energy)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / reached as f64;
        if mse.is_finite() {
            mse.sqrt()
        } else {
            overflow = true;
            f64::INFINITY
        }
    };
    Ok(EnergyTrace {
        times: grid[..reached].to_vec(),
        states: sol.states,
        model_energy,
        true_energy,
        rmse,
        overflow,
    })
}

/// Energy-deviation RMSE of one rollout; `inf` on overflow.
pub fn energy_deviation_rmse(
    model: &dyn VectorField,
    system: System,
    s0: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<f64> {
    Ok(energy_trace(model, system, s0, t_end, dt)?.rmse)
}

/// Stream offset that keeps test initial states apart from training
/// trajectories generated with the same seed.
const TEST_STREAM: u64 = 1 << 63;

/// `n` initial states drawn like training data, independent per index.
pub fn test_initial_states(system: System, n: usize, sampler: Sampler, seed: u64) -> Vec<Vec<f64>> {
    (0..n as u64)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(TEST_STREAM | i);
            let mut traj = ChaCha8Rng::seed_from_u64(rng.next_u64());
            system.sample_initial(sampler, &mut traj)
        })
        .collect()
}

/// Rolls out `model` from every test initial state; runs on the current
/// rayon pool.
pub fn evaluate(model: &dyn VectorField, system: System, cfg: &EvalConfig) -> Result<Vec<EnergyTrace>> {
    cfg.validate()?;
    let starts = test_initial_states(system, cfg.n_test, cfg.sampler, cfg.seed);
    starts
        .par_iter()
        .map(|s0| energy_trace(model, system, s0, cfg.t_end, cfg.dt))
        .collect()
}

/// Percentile `p` (0 to 100) of ascending `sorted` data, interpolating
/// linearly between order statistics.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    let (a, b) = (sorted[lo], sorted[hi]);
    if frac == 0.0 || a == b {
        a
    } else {
        a + (b - a) * frac
    }
}

/// Summary of an evaluation run. Serialized with `null` for infinite
/// values, since JSON has no infinity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub task: System,
    pub model: String,
    pub n_test: usize,
    #[serde(serialize_with = "ser_vec", deserialize_with = "de_vec")]
    pub rmse: Vec<f64>,
    #[serde(serialize_with = "ser_one", deserialize_with = "de_one")]
    pub median: f64,
    #[serde(serialize_with = "ser_one", deserialize_with = "de_one")]
    pub p2_5: f64,
    #[serde(serialize_with = "ser_one", deserialize_with = "de_one")]
    pub p97_5: f64,
    pub overflow_count: usize,
}

impl EvalReport {
    pub fn new(task: System, model: impl Into<String>, rmse: Vec<f64>) -> Result<Self> {
        if rmse.is_empty() {
            return Err(Error::Config("no test trajectories".into()));
        }
        if rmse.iter().any(|x| x.is_nan() || *x < 0.0) {
            return Err(Error::Config("RMSE values must be nonnegative".into()));
        }
        let mut sorted = rmse.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            task,
            model: model.into(),
            n_test: rmse.len(),
            median: percentile(&sorted, 50.0),
            p2_5: percentile(&sorted, 2.5),
            p97_5: percentile(&sorted, 97.5),
            overflow_count: rmse.iter().filter(|x| x.is_infinite()).count(),
            rmse,
        })
    }

    /// Checks that the summary fields agree with `rmse`.
    pub fn validate(&self) -> Result<()> {
        let fresh = Self::new(self.task, self.model.clone(), self.rmse.clone())?;
        if fresh != *self {
            return Err(Error::Format("report summary does not match its RMSE values".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let report: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        report.validate()?;
        Ok(report)
    }
}

fn finite_or_none(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn ser_one<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    finite_or_none(*x).serialize(s)
}

fn ser_vec<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|&x| finite_or_none(x)))
}

fn de_one<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

fn de_vec<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    let v = Vec::<Option<f64>>::deserialize(d)?;
    Ok(v.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
}

#[derive(Serialize)]
struct EnergyRow {
    trajectory: usize,
    t: f64,
    model_energy: f64,
    true_energy: f64,
}

/// Energy against time for every trajectory, as CSV with header
/// `trajectory,t,model_energy,true_energy`.
pub fn write_energy_csv<W: Write>(w: W, traces: &[EnergyTrace]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (i, tr) in traces.iter().enumerate() {
        for k in 0..tr.times.len() {
            out.serialize(EnergyRow {
                trajectory: i,
                t: tr.times[k],
                model_energy: tr.model_energy[k],
                true_energy: tr.true_energy[k],
            })
            .map_err(|e| Error::Format(e.to_string()))?;
        }
    }
    out.flush()?;
    Ok(())
}
