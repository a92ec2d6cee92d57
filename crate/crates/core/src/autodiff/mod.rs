//! Tensor computation graph with reverse-mode gradients and a forward-mode
//! transform whose tangents stay on the tape.

mod forward;
mod tape;

pub use forward::{basis_direction, jacobian, jacobian_rect, jvp, Jacobian};
pub use tape::{Gradients, Mark, Tape, Tensor, Var};
