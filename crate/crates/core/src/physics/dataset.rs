use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::systems::{System, DAMPING};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::odeint::{integrate, IntegratorConfig};

/// Distribution of initial conditions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// Standard normal per coordinate.
    #[default]
    Normal,
    /// Uniform on `[-0.5, 0.5)` per coordinate.
    Uniform,
}

impl Sampler {
    fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Sampler::Normal => rng.sample(StandardNormal),
            Sampler::Uniform => rng.random_range(-0.5..0.5),
        }
    }
}

/// How a dataset is sampled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Protocol {
    pub n_traj: usize,
    pub n_samples: usize,
    /// Samples are equally spaced on `[0, t_end]`, both ends included.
    pub t_end: f64,
    pub noise_sigma: f64,
    #[serde(default)]
    pub sampler: Sampler,
}

impl Protocol {
    pub fn default_for(system: System) -> Self {
        let (n_traj, n_samples, noise_sigma) = match system {
            System::DoublePendulum => (2000, 300, 0.0),
            _ => (250, 30, 0.1),
        };
        Self {
            n_traj,
            n_samples,
            t_end: 2.0 * std::f64::consts::PI,
            noise_sigma,
            sampler: Sampler::Normal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 || self.n_samples < 2 {
            return Err(Error::Config(
                "need at least one trajectory and two samples per trajectory".into(),
            ));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::Config(format!("t_end must be positive, got {}", self.t_end)));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config(format!(
                "noise sigma must be nonnegative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        linspace(0.0, self.t_end, self.n_samples)
    }
}

/// `n` equally spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let step = (b - a) / (n - 1) as f64;
            let mut v: Vec<f64> = (0..n).map(|i| a + step * i as f64).collect();
            v[n - 1] = b;
            v
        }
    }
}

/// One observed trajectory. `derivs[i]` is the true field at the clean state
/// behind the (possibly noisy) `states[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    #[serde(rename = "t")]
    pub times: Vec<f64>,
    #[serde(rename = "s")]
    pub states: Vec<Vec<f64>>,
    #[serde(rename = "sdot")]
    pub derivs: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        let n = self.times.len();
        if self.states.len() != n || self.derivs.len() != n {
            return Err(Error::Format(format!(
                "trajectory {} has {} times, {} states and {} derivatives",
                self.seed,
                n,
                self.states.len(),
                self.derivs.len()
            )));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Format(format!("trajectory {} times not increasing", self.seed)));
        }
        for row in self.states.iter().chain(&self.derivs) {
            if row.len() != state_dim {
                return Err(Error::DimensionMismatch {
                    expected: state_dim,
                    got: row.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub system: System,
    pub protocol: Protocol,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn sample_count(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// All samples stacked as `(states, derivs)`, each `samples x n`.
    pub fn samples(&self) -> (Tensor, Tensor) {
        stack_samples(&self.trajectories, self.system.state_dim())
    }
}

/// Stacks the `(state, deriv)` pairs of several trajectories.
pub fn stack_samples(trajectories: &[Trajectory], dim: usize) -> (Tensor, Tensor) {
    let total: usize = trajectories.iter().map(Trajectory::len).sum();
    let mut states = Tensor::zeros((total, dim));
    let mut derivs = Tensor::zeros((total, dim));
    let rows = trajectories
        .iter()
        .flat_map(|t| t.states.iter().zip(&t.derivs));
    for (i, (s, d)) in rows.enumerate() {
        for j in 0..dim {
            states[[i, j]] = s[j];
            derivs[[i, j]] = d[j];
        }
    }
    (states, derivs)
}

/// Seed of trajectory `index` in a dataset generated with `seed`.
///
/// Each trajectory draws from its own stream, so results do not depend on
/// the order or parallelism of generation.
pub fn trajectory_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.next_u64()
}

impl System {
    /// A random initial state. The Cartesian pendulum draws `(theta, omega)`
    /// and maps them onto the circle.
    pub fn sample_initial<R: Rng + ?Sized>(self, sampler: Sampler, rng: &mut R) -> Vec<f64> {
        match self {
            System::DampedPendulumXy => {
                let theta = sampler.draw(rng);
                let omega = sampler.draw(rng);
                polar_to_xy(theta, omega).to_vec()
            }
            _ => (0..self.state_dim()).map(|_| sampler.draw(rng)).collect(),
        }
    }

    /// High-accuracy reference solution on `t_grid`, starting at `s0`.
    ///
    /// The Cartesian pendulum is integrated in angle space and mapped back,
    /// which keeps the solution exactly on the circle.
    pub fn simulate(self, s0: &[f64], t_grid: &[f64]) -> Result<Vec<Vec<f64>>> {
        let cfg = IntegratorConfig::rk45();
        match self {
            System::DampedPendulumXy => {
                let (theta, omega) = xy_to_polar(s0)?;
                let angles = integrate(
                    |p| Ok(vec![p[1], -p[0].sin() - DAMPING * p[1]]),
                    &[theta, omega],
                    t_grid,
                    &cfg,
                )?;
                Ok(angles.iter().map(|p| polar_to_xy(p[0], p[1]).to_vec()).collect())
            }
            _ => integrate(|s| self.rhs(s), s0, t_grid, &cfg),
        }
    }
}

fn polar_to_xy(theta: f64, omega: f64) -> [f64; 4] {
    let (sin, cos) = theta.sin_cos();
    [sin, -cos, cos * omega, sin * omega]
}

fn xy_to_polar(s: &[f64]) -> Result<(f64, f64)> {
    let (x, y, vx, vy) = (s[0], s[1], s[2], s[3]);
    let r2 = x * x + y * y;
    if !(r2 > 0.0) {
        return Err(Error::Domain("pendulum bob at the pivot".into()));
    }
    Ok((x.atan2(-y), (x * vy - y * vx) / r2))
}

/// Generates trajectory `index` of a dataset.
pub fn generate_trajectory(system: System, protocol: &Protocol, seed: u64, index: u64) -> Result<Trajectory> {
    let sub = trajectory_seed(seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(sub);
    let s0 = system.sample_initial(protocol.sampler, &mut rng);
    let times = protocol.times();
    let clean = system.simulate(&s0, &times)?;
    let derivs = clean.iter().map(|s| system.rhs(s)).collect::<Result<Vec<_>>>()?;
    let states = if protocol.noise_sigma == 0.0 {
        clean
    } else {
        clean
            .into_iter()
            .map(|s| {
                s.into_iter()
                    .map(|x| x + protocol.noise_sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    };
    Ok(Trajectory {
        seed: sub,
        times,
        states,
        derivs,
    })
}

/// Generates a dataset; runs on the current rayon pool.
pub fn generate_dataset(system: System, protocol: Protocol, seed: u64) -> Result<Dataset> {
    protocol.validate()?;
    let trajectories = (0..protocol.n_traj as u64)
        .into_par_iter()
        .map(|i| generate_trajectory(system, &protocol, seed, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        system,
        protocol,
        seed,
        trajectories,
    })
}
