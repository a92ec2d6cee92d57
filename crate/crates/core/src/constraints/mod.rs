//! Physics penalties on the Jacobian of a learned vector field.
//!
//! - Hamiltonian: `||J^T A - A^T J||_F^2`, zero exactly when `J^{-1} A` is
//!   symmetric, i.e. when `A` is the Jacobian of some `J grad H`.
//! - Transformed Hamiltonian: the same penalty on the latent-space
//!   Jacobian `d f_z / d z` of a coordinate-transformed model.
//! - Dissipative: `sum_i max(0, Re l_i - a_i)^2` over the eigenvalues of
//!   `A`, sorted by descending real part (then imaginary part) and paired
//!   with the bounds in order.
//!
//! Every function here comes in two forms: on a plain matrix, and on a tape
//! [`Jacobian`] where the result is a `batch x 1` node of per-sample
//! penalties that stays differentiable with respect to model parameters.

mod eigen;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::autodiff::{jacobian, Jacobian, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::{BoundModel, SymplecticJ};

pub use eigen::{
    cholesky, eig_nonsymmetric, eig_right, eigenvalues, EigenResult, RightEigen,
    CONDITION_THRESHOLD,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    #[default]
    None,
    Hamiltonian,
    TransformedHamiltonian,
    Dissipative,
}

impl std::fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConstraintKind::None => "none",
            ConstraintKind::Hamiltonian => "hamiltonian",
            ConstraintKind::TransformedHamiltonian => "transformed_hamiltonian",
            ConstraintKind::Dissipative => "dissipative",
        })
    }
}

/// Which penalty to add to the loss and with what weight.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub kind: ConstraintKind,
    #[serde(default)]
    pub weight: f64,
    /// Upper bounds on eigenvalue real parts; all zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<f64>>,
}

impl ConstraintSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(kind: ConstraintKind, weight: f64) -> Self {
        Self {
            kind,
            weight,
            bounds: None,
        }
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return Err(Error::Config(format!(
                "constraint weight must be finite and nonnegative, got {}",
                self.weight
            )));
        }
        if let Some(b) = &self.bounds {
            if self.kind != ConstraintKind::Dissipative {
                return Err(Error::Config(format!("bounds given for a {} constraint", self.kind)));
            }
            if b.len() != state_dim {
                return Err(Error::DimensionMismatch {
                    expected: state_dim,
                    got: b.len(),
                });
            }
        }
        if matches!(
            self.kind,
            ConstraintKind::Hamiltonian | ConstraintKind::TransformedHamiltonian
        ) && state_dim % 2 != 0
        {
            return Err(Error::OddDimension(state_dim));
        }
        Ok(())
    }

    /// Bounds for an `n`-dimensional state.
    pub fn bounds_for(&self, n: usize) -> Vec<f64> {
        self.bounds.clone().unwrap_or_else(|| vec![0.0; n])
    }
}

fn square_dim(a: &Tensor) -> Result<usize> {
    let (rows, cols) = a.dim();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    Ok(rows)
}

/// `||J^T A - A^T J||_F^2` for a plain matrix.
pub fn hamiltonian_constraint(a: &Tensor) -> Result<f64> {
    let n = square_dim(a)?;
    let j = SymplecticJ::new(n)?.matrix();
    let s = j.t().dot(a);
    Ok((&s - &s.t()).iter().map(|x| x * x).sum())
}

/// Per-sample Hamiltonian penalty of a tape Jacobian, `batch x 1`.
pub fn hamiltonian_penalty(tape: &mut Tape, jac: &Jacobian) -> Result<Var> {
    let n = jac.dim();
    if n % 2 != 0 || n == 0 {
        return Err(Error::OddDimension(n));
    }
    let m = n / 2;
    // (J^T A)_{rc} is -A_{r+m,c} for r < m and A_{r-m,c} otherwise; the sign
    // is folded into the subtraction below.
    let source = |r: usize| if r < m { (r + m, -1.0) } else { (r - m, 1.0) };
    let mut terms = Vec::with_capacity(n * (n - 1) / 2);
    for r in 0..n {
        for c in r + 1..n {
            let (ra, sa) = source(r);
            let (rb, sb) = source(c);
            let x = jac.entry(tape, ra, c);
            let y = jac.entry(tape, rb, r);
            let x = tape.scale(x, sa);
            let y = tape.scale(y, sb);
            let diff = tape.sub(x, y);
            terms.push(tape.square(diff));
        }
    }
    let all = tape.concat_cols(&terms);
    let sum = tape.row_sums(all);
    // Each off-diagonal pair appears twice in the full Frobenius sum.
    Ok(tape.scale(sum, 2.0))
}

/// Per-sample penalty on the latent Jacobian `d f_z / d z` of a transformed
/// model, evaluated at `z = g(s)`.
pub fn transformed_hamiltonian_penalty(
    tape: &mut Tape,
    model: &BoundModel,
    s: Var,
) -> Result<Var> {
    let coupling = model.coupling().ok_or_else(|| {
        Error::Config(format!(
            "transformed_hamiltonian constraint needs a transformed model, got {}",
            model.kind()
        ))
    })?;
    let latent = model.latent_net().expect("transformed model has a latent net");
    let z = coupling.forward(tape, s)?;
    let jac = jacobian(tape, z, |t, z| latent.forward(t, z))?;
    hamiltonian_penalty(tape, &jac)
}

/// Eigenvalue indices sorted by descending real part, then descending
/// imaginary part.
pub fn sorted_order(eigenvalues: &[Complex64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| {
        let (x, y) = (eigenvalues[a], eigenvalues[b]);
        y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im))
    });
    idx
}

/// Dissipative penalty with its gradient with respect to the matrix entries.
#[derive(Clone, Debug)]
pub struct DissipativeValue {
    pub value: f64,
    /// `d value / d A_ij`; contributions of ill-conditioned eigenvalues
    /// are zeroed.
    pub grad: Tensor,
    pub ill_conditioned: usize,
}

/// `sum_i max(0, Re l_i - a_i)^2` for a plain matrix.
pub fn dissipative_constraint(a: &Tensor, bounds: &[f64]) -> Result<f64> {
    Ok(dissipative_with_grad(a, bounds)?.value)
}

/// Penalty and analytic gradient. With `w`, `v` the left and right
/// eigenvectors, `d l / d A_ij = w_i v_j / (w^T v)`.
pub fn dissipative_with_grad(a: &Tensor, bounds: &[f64]) -> Result<DissipativeValue> {
    let n = square_dim(a)?;
    if bounds.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: bounds.len(),
        });
    }
    let eig = eig_nonsymmetric(a)?;
    let mut value = 0.0;
    let mut grad = Tensor::zeros((n, n));
    let mut ill = 0;
    for (rank, k) in sorted_order(&eig.eigenvalues).into_iter().enumerate() {
        let excess = eig.eigenvalues[k].re - bounds[rank];
        if excess <= 0.0 {
            continue;
        }
        value += excess * excess;
        if eig.ill_conditioned[k] {
            ill += 1;
            continue;
        }
        let denom = eig.pairing(k);
        let coef = 2.0 * excess;
        for i in 0..n {
            let wi = eig.left[[i, k]] / denom;
            for j in 0..n {
                grad[[i, j]] += coef * (wi * eig.right[[j, k]]).re;
            }
        }
    }
    Ok(DissipativeValue {
        value,
        grad,
        ill_conditioned: ill,
    })
}

/// Per-sample dissipative penalty of a tape Jacobian, `batch x 1`.
///
/// The eigendecomposition itself is not recorded; its derivative enters as
/// a precomputed linearization. A sample whose QR iteration does not
/// converge contributes zero, with a warning.
pub fn dissipative_penalty(tape: &mut Tape, jac: &Jacobian, bounds: &[f64]) -> Result<Var> {
    let n = jac.dim();
    if bounds.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: bounds.len(),
        });
    }
    let batch = tape.shape(jac.output).0;
    let mut values = Tensor::zeros((batch, 1));
    let mut grads = Tensor::zeros((batch, n * n));
    for b in 0..batch {
        let a = jac.sample(tape, b);
        match dissipative_with_grad(&a, bounds) {
            Ok(d) => {
                values[[b, 0]] = d.value;
                // Flattened layout: entry (r, c) sits at column c * n + r.
                for r in 0..n {
                    for c in 0..n {
                        grads[[b, c * n + r]] = d.grad[[r, c]];
                    }
                }
            }
            Err(Error::NoConvergence(iters)) => {
                log::warn!("eigenvalue iteration did not converge after {iters} steps; skipping sample {b}");
            }
            Err(e) => return Err(e),
        }
    }
    let flat = jac.flatten(tape);
    Ok(tape.row_linear(flat, values, grads))
}

/// `max_k |Re l_k(J B)|` for a symmetric positive definite `B`.
pub fn hamiltonian_spectrum_check(b: &Tensor) -> Result<f64> {
    let n = square_dim(b)?;
    cholesky(b)?;
    let jb = SymplecticJ::new(n)?.matrix().dot(b);
    Ok(eigenvalues(&jb)?
        .iter()
        .fold(0.0f64, |acc, l| acc.max(l.re.abs())))
}

#[cfg(test)]
mod tests;
