use crate::autodiff::{jacobian, Tape, Tensor, Var};
use crate::constraints::{
    dissipative_penalty, hamiltonian_penalty, transformed_hamiltonian_penalty, ConstraintKind,
    ConstraintSpec,
};
use crate::error::{Error, Result};
use crate::models::{BoundModel, DynamicsModel};

/// Loss values of one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub mse: f64,
    pub penalty: f64,
}

/// Tape nodes of the three loss terms, each `1 x 1`.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub mse: Var,
    pub penalty: Var,
}

/// Records `mse + w * penalty` for a batch of `(state, target)` rows.
pub fn record_loss(
    tape: &mut Tape,
    model: &BoundModel,
    states: &Tensor,
    targets: &Tensor,
    spec: &ConstraintSpec,
) -> Result<LossVars> {
    let (batch, n) = states.dim();
    if batch == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    if targets.dim() != (batch, n) {
        return Err(Error::DimensionMismatch {
            expected: batch * n,
            got: targets.len(),
        });
    }
    let s = tape.leaf(states.clone());
    let (pred, per_sample) = match spec.kind {
        ConstraintKind::None => (model.dynamics(tape, s)?, None),
        ConstraintKind::Hamiltonian => {
            let jac = jacobian(tape, s, |t, s| model.dynamics(t, s))?;
            let pen = hamiltonian_penalty(tape, &jac)?;
            (jac.output, Some(pen))
        }
        ConstraintKind::Dissipative => {
            let jac = jacobian(tape, s, |t, s| model.dynamics(t, s))?;
            let pen = dissipative_penalty(tape, &jac, &spec.bounds_for(n))?;
            (jac.output, Some(pen))
        }
        ConstraintKind::TransformedHamiltonian => {
            let pen = transformed_hamiltonian_penalty(tape, model, s)?;
            (model.dynamics(tape, s)?, Some(pen))
        }
    };
    let target = tape.leaf(targets.clone());
    let err = tape.sub(pred, target);
    let sq = tape.square(err);
    let per_row = tape.row_sums(sq);
    let mse = tape.mean(per_row);
    let penalty = match per_sample {
        Some(p) => tape.mean(p),
        None => tape.zeros(1, 1),
    };
    let total = if spec.weight == 0.0 {
        mse
    } else {
        let weighted = tape.scale(penalty, spec.weight);
        tape.add(mse, weighted)
    };
    Ok(LossVars { total, mse, penalty })
}

fn parts(tape: &Tape, vars: &LossVars) -> Result<LossParts> {
    let out = LossParts {
        total: tape.scalar(vars.total),
        mse: tape.scalar(vars.mse),
        penalty: tape.scalar(vars.penalty),
    };
    if !out.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss is {} (mse {}, penalty {})",
            out.total, out.mse, out.penalty
        )));
    }
    Ok(out)
}

/// Loss of a batch without gradients.
pub fn loss(
    model: &DynamicsModel,
    states: &Tensor,
    targets: &Tensor,
    spec: &ConstraintSpec,
) -> Result<LossParts> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let vars = record_loss(&mut tape, &bound, states, targets, spec)?;
    parts(&tape, &vars)
}

/// Loss of a batch and its gradient in the model's flat parameter layout.
pub fn loss_and_grad(
    model: &DynamicsModel,
    states: &Tensor,
    targets: &Tensor,
    spec: &ConstraintSpec,
) -> Result<(LossParts, Vec<f64>)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let vars = record_loss(&mut tape, &bound, states, targets, spec)?;
    let out = parts(&tape, &vars)?;
    let grads = tape.backward(vars.total)?;
    let grad = bound.collect_grad(&tape, &grads);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("loss gradient".into()));
    }
    Ok((out, grad))
}
