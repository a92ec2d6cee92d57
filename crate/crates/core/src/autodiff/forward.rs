//! Forward mode as a tape-to-tape transform.
//!
//! Tangents are not side-channel numbers: [`Tape::push_tangents`] walks a
//! recorded segment and appends, for every node that depends on a seeded
//! input, the ops computing its directional derivative. The tangent nodes are
//! ordinary tape nodes, so a later reverse pass differentiates them with
//! respect to parameters (forward-over-reverse), and a second forward
//! transform over a segment that already holds tangents yields second
//! directional derivatives.

use std::collections::HashMap;

use super::tape::{Mark, Op, Tape, Tensor, Var};
use crate::error::{Error, Result};

impl Tape {
    /// Appends the forward-mode tangents of `outputs` with respect to the
    /// seeded inputs, differentiating every node recorded since `mark`.
    ///
    /// `seeds` pairs an input node with the node holding its tangent. Inputs
    /// recorded before `mark` may be seeded; anything else recorded before
    /// `mark` (parameters, constants) has zero tangent. Outputs that do not
    /// depend on any seed get an explicit zero node.
    pub fn push_tangents(&mut self, mark: Mark, seeds: &[(Var, Var)], outputs: &[Var]) -> Vec<Var> {
        let end = self.mark();
        self.push_tangents_range(mark, end, seeds, outputs)
    }

    /// [`Tape::push_tangents`] restricted to the nodes in `[mark, end)`.
    /// Nodes recorded after `end` (earlier sweeps, direction leaves) are
    /// ignored; `outputs` must lie before `end`.
    pub fn push_tangents_range(
        &mut self,
        mark: Mark,
        end: Mark,
        seeds: &[(Var, Var)],
        outputs: &[Var],
    ) -> Vec<Var> {
        let (start, end) = (mark.0, end.0);
        assert!(start <= end && end <= self.nodes.len(), "invalid tape range");
        let mut seg: Vec<Option<Var>> = vec![None; end - start];
        let mut before: HashMap<usize, Var> = HashMap::new();
        for &(input, tangent) in seeds {
            assert_eq!(
                self.shape(input),
                self.shape(tangent),
                "tangent shape must match its input"
            );
            if input.0 >= end {
                continue;
            } else if input.0 >= start {
                seg[input.0 - start] = Some(tangent);
            } else {
                before.insert(input.0, tangent);
            }
        }

        for &o in outputs {
            assert!(o.0 < end, "output recorded after the differentiated range");
        }

        let lookup = |seg: &[Option<Var>], v: Var| -> Option<Var> {
            if v.0 >= start {
                seg[v.0 - start]
            } else {
                before.get(&v.0).copied()
            }
        };

        for i in start..end {
            if seg[i - start].is_some() {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let out = Var(i);
            let t = |v: Var| lookup(&seg, v);
            let tangent = match op {
                Op::Leaf | Op::Mask => None,
                Op::Add(a, b) => match (t(a), t(b)) {
                    (Some(ta), Some(tb)) => Some(self.add(ta, tb)),
                    (Some(ta), None) => Some(ta),
                    (None, Some(tb)) => Some(tb),
                    (None, None) => None,
                },
                Op::Sub(a, b) => match (t(a), t(b)) {
                    (Some(ta), Some(tb)) => Some(self.sub(ta, tb)),
                    (Some(ta), None) => Some(ta),
                    (None, Some(tb)) => Some(self.neg(tb)),
                    (None, None) => None,
                },
                Op::Mul(a, b) => {
                    let l = t(a).map(|ta| self.mul(ta, b));
                    let r = t(b).map(|tb| self.mul(a, tb));
                    self.add_opt(l, r)
                }
                Op::Div(a, b) => {
                    let l = t(a);
                    let r = t(b).map(|tb| self.mul(out, tb));
                    let num = match (l, r) {
                        (Some(l), Some(r)) => Some(self.sub(l, r)),
                        (Some(l), None) => Some(l),
                        (None, Some(r)) => Some(self.neg(r)),
                        (None, None) => None,
                    };
                    num.map(|n| self.div(n, b))
                }
                Op::Neg(a) => t(a).map(|ta| self.neg(ta)),
                Op::Affine(a, scale) => t(a).map(|ta| self.scale(ta, scale)),
                Op::MatMul(a, b) => {
                    let l = t(a).map(|ta| self.matmul(ta, b));
                    let r = t(b).map(|tb| self.matmul(a, tb));
                    self.add_opt(l, r)
                }
                Op::Transpose(a) => t(a).map(|ta| self.transpose(ta)),
                Op::BroadcastRows(a, rows) => t(a).map(|ta| self.broadcast_rows(ta, rows)),
                Op::BroadcastCols(a, cols) => t(a).map(|ta| self.broadcast_cols(ta, cols)),
                Op::Exp(a) => t(a).map(|ta| self.mul(ta, out)),
                Op::Ln(a) => t(a).map(|ta| self.div(ta, a)),
                Op::Sin(a) => t(a).map(|ta| {
                    let c = self.cos(a);
                    self.mul(ta, c)
                }),
                Op::Cos(a) => t(a).map(|ta| {
                    let s = self.sin(a);
                    let ns = self.neg(s);
                    self.mul(ta, ns)
                }),
                Op::Tanh(a) => t(a).map(|ta| {
                    let sq = self.square(out);
                    let d = self.affine(sq, -1.0, 1.0);
                    self.mul(ta, d)
                }),
                Op::Sigmoid(a) => t(a).map(|ta| {
                    let sq = self.square(out);
                    let d = self.sub(out, sq);
                    self.mul(ta, d)
                }),
                Op::Softplus(a) => t(a).map(|ta| {
                    let d = self.sigmoid(a);
                    self.mul(ta, d)
                }),
                Op::Relu(a) => t(a).map(|ta| {
                    let d = self.mask(a, 0.0, f64::INFINITY);
                    self.mul(ta, d)
                }),
                Op::Sqrt(a) => t(a).map(|ta| {
                    let d = self.scale(out, 2.0);
                    self.div(ta, d)
                }),
                Op::Square(a) => t(a).map(|ta| {
                    let d = self.scale(a, 2.0);
                    self.mul(ta, d)
                }),
                Op::Clamp(a, lo, hi) => t(a).map(|ta| {
                    let d = self.mask(a, lo, hi);
                    self.mul(ta, d)
                }),
                Op::Sum(a) => t(a).map(|ta| self.sum(ta)),
                Op::Mean(a) => t(a).map(|ta| self.mean(ta)),
                Op::RowSums(a) => t(a).map(|ta| self.row_sums(ta)),
                Op::Cols(a, s, l) => t(a).map(|ta| self.cols(ta, s, l)),
                Op::ConcatCols(parts) => {
                    let tangents: Vec<Option<Var>> = parts.iter().map(|&p| t(p)).collect();
                    if tangents.iter().all(Option::is_none) {
                        None
                    } else {
                        let filled: Vec<Var> = parts
                            .iter()
                            .zip(tangents)
                            .map(|(&p, tp)| {
                                tp.unwrap_or_else(|| {
                                    let (r, c) = self.shape(p);
                                    self.zeros(r, c)
                                })
                            })
                            .collect();
                        Some(self.concat_cols(&filled))
                    }
                }
                Op::PermuteCols(a, perm) => t(a).map(|ta| self.permute_cols(ta, perm)),
                // First order only: the recorded row gradient is held constant.
                Op::RowLinear(a, grad) => t(a).map(|ta| {
                    let g = self.leaf_shared(grad);
                    let prod = self.mul(g, ta);
                    self.row_sums(prod)
                }),
            };
            seg[i - start] = tangent;
        }

        outputs
            .iter()
            .map(|&o| match lookup(&seg, o) {
                Some(t) => t,
                None => {
                    let (r, c) = self.shape(o);
                    self.zeros(r, c)
                }
            })
            .collect()
    }

    fn add_opt(&mut self, a: Option<Var>, b: Option<Var>) -> Option<Var> {
        match (a, b) {
            (Some(a), Some(b)) => Some(self.add(a, b)),
            (a, None) => a,
            (None, b) => b,
        }
    }
}

/// Evaluates `f` at `s` and its directional derivative along `v`.
///
/// Both results are tape nodes; the tangent remains differentiable with
/// respect to anything `f` closes over.
pub fn jvp<F>(tape: &mut Tape, s: Var, v: Var, f: F) -> Result<(Var, Var)>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let (sr, sc) = tape.shape(s);
    let (vr, vc) = tape.shape(v);
    if sc != vc {
        return Err(Error::DimensionMismatch { expected: sc, got: vc });
    }
    if sr != vr {
        return Err(Error::DimensionMismatch { expected: sr, got: vr });
    }
    let mark = tape.mark();
    let out = f(tape, s)?;
    let tangent = tape.push_tangents(mark, &[(s, v)], &[out])[0];
    Ok((out, tangent))
}

/// Per-sample Jacobians of a batched map `s -> f(s)`.
///
/// `columns[c]` is a `batch x n` node whose row `b` is column `c` of the
/// Jacobian at sample `b`, i.e. the tangent for basis direction `e_c`.
#[derive(Clone, Debug)]
pub struct Jacobian {
    pub output: Var,
    pub columns: Vec<Var>,
}

impl Jacobian {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// `d f_r / d s_c` for every sample, as a `batch x 1` node.
    pub fn entry(&self, tape: &mut Tape, r: usize, c: usize) -> Var {
        tape.col(self.columns[c], r)
    }

    /// All entries flattened column-major per sample: `batch x n^2`, where
    /// entry `(r, c)` sits at column `c * n + r`.
    pub fn flatten(&self, tape: &mut Tape) -> Var {
        tape.concat_cols(&self.columns)
    }

    /// Jacobian of sample `b` as a plain matrix.
    pub fn sample(&self, tape: &Tape, b: usize) -> Tensor {
        let n = self.dim();
        let rows = tape.shape(self.output).1;
        let mut m = Tensor::zeros((rows, n));
        for (c, &col) in self.columns.iter().enumerate() {
            let v = tape.value(col);
            for r in 0..rows {
                m[[r, c]] = v[[b, r]];
            }
        }
        m
    }
}

/// Basis direction `e_i` for every row of a `rows x n` batch.
pub fn basis_direction(tape: &mut Tape, rows: usize, n: usize, i: usize) -> Var {
    let mut d = Tensor::zeros((rows, n));
    d.column_mut(i).fill(1.0);
    tape.leaf(d)
}

/// Jacobian of a square map at every sample of `s`, built from one forward
/// evaluation and `n` tangent sweeps.
pub fn jacobian<F>(tape: &mut Tape, s: Var, f: F) -> Result<Jacobian>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let jac = jacobian_rect(tape, s, f)?;
    let (rows, cols) = (tape.shape(jac.output).1, jac.dim());
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    Ok(jac)
}

/// Like [`jacobian`] without the squareness requirement.
pub fn jacobian_rect<F>(tape: &mut Tape, s: Var, f: F) -> Result<Jacobian>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let (batch, n) = tape.shape(s);
    let mark = tape.mark();
    let output = f(tape, s)?;
    let end = tape.mark();
    let mut columns = Vec::with_capacity(n);
    for i in 0..n {
        let dir = basis_direction(tape, batch, n, i);
        // Sweep only the primal segment, not earlier tangent sweeps.
        let t = tape.push_tangents_range(mark, end, &[(s, dir)], &[output])[0];
        columns.push(t);
    }
    Ok(Jacobian { output, columns })
}
