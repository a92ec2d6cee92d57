//! Benchmark systems and trajectory datasets.
//!
//! | system               | state              | dynamics                          |
//! |----------------------|--------------------|-----------------------------------|
//! | `mass_spring`        | `(x, v)`           | `m = k = 1`                       |
//! | `single_pendulum`    | `(theta, omega)`   | `g = 3`, `l = 1`                  |
//! | `double_pendulum`    | `(t1, t2, w1, w2)` | unit masses and lengths, `g = 1`  |
//! | `damped_pendulum_xy` | `(x, y, vx, vy)`   | `g = l = 1`, damping `0.05`       |
//!
//! The damped pendulum is observed in redundant Cartesian coordinates of the
//! bob, with the pivot at the origin and `y` pointing up.

mod dataset;
mod systems;

pub use dataset::{
    generate_dataset, generate_trajectory, linspace, stack_samples, trajectory_seed, Dataset,
    Protocol, Sampler, Trajectory,
};
pub use systems::{System, DAMPING, PENDULUM_G};
