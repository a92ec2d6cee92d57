//! Learning ODE vector fields from trajectory data, with physical structure
//! imposed through penalty terms in the loss.
//!
//! - [`autodiff`]: batched tensor tape; forward tangents are recorded on the
//!   tape so Jacobian penalties can be differentiated again.
//! - [`models`]: MLP vector fields, Hamiltonian networks and coupling-layer
//!   coordinate transforms.
//! - [`constraints`]: the symplectic penalty, its latent variant, and the
//!   spectral penalty with its eigensolver.
//! - [`physics`]: benchmark systems and dataset generation.
//! - [`odeint`]: RK4 and adaptive Dormand–Prince.
//! - [`training`]: loss, Adam and the epoch loop.
//! - [`evaluation`]: long rollouts and energy-drift statistics.

pub mod autodiff;
pub mod constraints;
pub mod error;
pub mod evaluation;
pub mod format;
pub mod models;
pub mod odeint;
pub mod physics;
pub mod training;

pub use error::{Error, Result};
