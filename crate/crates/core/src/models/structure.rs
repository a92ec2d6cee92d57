//! Symplectic structure and the two structured vector fields built from it.

use crate::autodiff::{basis_direction, Tape, Tensor, Var};
use crate::error::{Error, Result};

use super::coupling::BoundCoupling;

/// The canonical symplectic matrix `[[0, I], [-I, 0]]` of even order `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SymplecticJ {
    n: usize,
}

impl SymplecticJ {
    pub fn new(n: usize) -> Result<Self> {
        if n % 2 != 0 || n == 0 {
            return Err(Error::OddDimension(n));
        }
        Ok(Self { n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> Tensor {
        let m = self.n / 2;
        let mut j = Tensor::zeros((self.n, self.n));
        for i in 0..m {
            j[[i, i + m]] = 1.0;
            j[[i + m, i]] = -1.0;
        }
        j
    }

    /// `J x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let m = self.n / 2;
        (0..self.n)
            .map(|i| if i < m { x[i + m] } else { -x[i - m] })
            .collect()
    }

    /// `J^T x = -J x`.
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        self.apply(x).into_iter().map(|v| -v).collect()
    }
}

/// `J grad H` for a batched scalar function `h` (`batch x n -> batch x 1`).
///
/// The gradient is taken in forward mode, one sweep per coordinate, so the
/// result stays differentiable with respect to whatever `h` closes over.
pub fn hamiltonian_field<F>(tape: &mut Tape, s: Var, h: F) -> Result<Var>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let (batch, n) = tape.shape(s);
    if n % 2 != 0 {
        return Err(Error::OddDimension(n));
    }
    let mark = tape.mark();
    let energy = h(tape, s)?;
    let (rows, cols) = tape.shape(energy);
    if cols != 1 || rows != batch {
        return Err(Error::DimensionMismatch { expected: 1, got: cols });
    }
    let end = tape.mark();
    let grad: Vec<Var> = (0..n)
        .map(|i| {
            let dir = basis_direction(tape, batch, n, i);
            tape.push_tangents_range(mark, end, &[(s, dir)], &[energy])[0]
        })
        .collect();
    let m = n / 2;
    let mut parts = Vec::with_capacity(n);
    parts.extend_from_slice(&grad[m..]);
    for &g in &grad[..m] {
        parts.push(tape.neg(g));
    }
    Ok(tape.concat_cols(&parts))
}

/// Intermediate nodes of a coordinate-transformed vector field.
#[derive(Clone, Copy, Debug)]
pub struct TransformedField {
    /// `z = g(s)`.
    pub latent: Var,
    /// `dz/dt = f_z(z)`.
    pub latent_rate: Var,
    /// `ds/dt = (d g^{-1} / dz) dz/dt`.
    pub rate: Var,
}

/// Pulls latent dynamics back through an invertible transform: computes
/// `z = g(s)`, `dz/dt = f_z(z)` and then `ds/dt` as the forward-mode
/// derivative of `g^{-1}` at `z` along `dz/dt`.
pub fn transformed_field<F>(
    tape: &mut Tape,
    coupling: &BoundCoupling,
    s: Var,
    latent_dynamics: F,
) -> Result<TransformedField>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let z = coupling.forward(tape, s)?;
    let zdot = latent_dynamics(tape, z)?;
    if tape.shape(zdot) != tape.shape(z) {
        return Err(Error::DimensionMismatch {
            expected: tape.shape(z).1,
            got: tape.shape(zdot).1,
        });
    }
    let mark = tape.mark();
    let recon = coupling.inverse(tape, z)?;
    let sdot = tape.push_tangents(mark, &[(z, zdot)], &[recon])[0];
    Ok(TransformedField {
        latent: z,
        latent_rate: zdot,
        rate: sdot,
    })
}
