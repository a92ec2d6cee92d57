//! Append-only tape of tensor operations with reverse accumulation.
//!
//! Every value on the tape is a dense row-major `f64` matrix. Scalars are
//! `1x1` matrices and a batch of state vectors is a `batch x dim` matrix, one
//! sample per row. All ops used by the models are row-independent, so a batch
//! behaves like `batch` separate evaluations sharing one tape.

use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

pub type Tensor = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Position on the tape; nodes recorded after it form a segment that
/// [`Tape::push_tangents`] can differentiate in forward mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Mark(pub(crate) usize);

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    /// `scale * x + shift`; only the scale matters for derivatives.
    Affine(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    /// `1 x n` repeated to `rows x n`.
    BroadcastRows(Var, usize),
    /// `m x 1` repeated to `m x cols`.
    BroadcastCols(Var, usize),
    Exp(Var),
    Ln(Var),
    Sin(Var),
    Cos(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Relu(Var),
    Sqrt(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    /// Indicator of `lo < x < hi`; carries no derivative.
    Mask,
    Sum(Var),
    Mean(Var),
    RowSums(Var),
    Cols(Var, usize, usize),
    ConcatCols(Vec<Var>),
    PermuteCols(Var, Arc<[usize]>),
    /// Per-row scalar function whose gradient w.r.t. the row was computed
    /// when the node was recorded: `d out[b] / d x[b, j] = grad[b, j]`.
    RowLinear(Var, Arc<Tensor>),
}

impl Op {
    #[cfg(debug_assertions)]
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf | Mask => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => vec![*a, *b],
            Neg(a) | Affine(a, ..) | Transpose(a) | BroadcastRows(a, _) | BroadcastCols(a, _)
            | Exp(a) | Ln(a) | Sin(a) | Cos(a) | Tanh(a) | Sigmoid(a) | Softplus(a) | Relu(a)
            | Sqrt(a) | Square(a) | Clamp(a, ..) | Sum(a) | Mean(a) | RowSums(a)
            | Cols(a, ..) | PermuteCols(a, _) | RowLinear(a, _) => vec![*a],
            ConcatCols(xs) => xs.clone(),
        }
    }
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) value: Arc<Tensor>,
}

/// Single-owner computation tape.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

/// Result of a reverse pass: one optional adjoint per tape node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adjoint of `v` as a dense matrix of `v`'s shape (zeros when absent).
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.shape(v)),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn inside(x: f64, lo: f64, hi: f64) -> f64 {
    if x > lo && x < hi {
        1.0
    } else {
        0.0
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn mark(&self) -> Mark {
        Mark(self.nodes.len())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a `1x1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.dim(), (1, 1));
        t[[0, 0]]
    }

    pub(crate) fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.push_shared(op, Arc::new(value))
    }

    fn push_shared(&mut self, op: Op, value: Arc<Tensor>) -> Var {
        #[cfg(debug_assertions)]
        for p in op.parents() {
            debug_assert!(p.0 < self.nodes.len());
        }
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf (input, parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Records a leaf that shares storage with the caller, e.g. model weights.
    pub fn leaf_shared(&mut self, value: Arc<Tensor>) -> Var {
        self.push_shared(Op::Leaf, value)
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.leaf(Tensor::from_elem((1, 1), x))
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.leaf(Tensor::zeros((rows, cols)))
    }

    fn binary_same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: operand shapes differ"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "add");
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "sub");
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "mul");
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "div");
        let v = self.value(a) / self.value(b);
        self.push(Op::Div(a, b), v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| -x);
        self.push(Op::Neg(a), v)
    }

    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).mapv(|x| scale * x + shift);
        self.push(Op::Affine(a, scale), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.affine(a, c, 0.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (_, k) = self.shape(a);
        let (k2, _) = self.shape(b);
        assert_eq!(k, k2, "matmul: inner dimensions differ");
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(Op::Transpose(a), v)
    }

    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(r, 1, "broadcast_rows expects a single row");
        let v = self
            .value(a)
            .broadcast((rows, c))
            .expect("broadcast")
            .to_owned();
        self.push(Op::BroadcastRows(a, rows), v)
    }

    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(c, 1, "broadcast_cols expects a single column");
        let v = self
            .value(a)
            .broadcast((r, cols))
            .expect("broadcast")
            .to_owned();
        self.push(Op::BroadcastCols(a, cols), v)
    }

    /// Adds a `1 x n` row (a bias) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let rows = self.shape(a).0;
        let b = self.broadcast_rows(row, rows);
        self.add(a, b)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.value(a).mapv(f);
        self.push(op, v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), f64::ln)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sin(a), f64::sin)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, Op::Cos(a), f64::cos)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    /// `max(0, x)`; the derivative at exactly zero is taken as zero.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn mask(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Mask, |x| inside(x, lo, hi))
    }

    /// Sum of all entries, as a `1x1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::from_elem((1, 1), self.value(a).sum());
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::from_elem((1, 1), t.sum() / t.len() as f64);
        self.push(Op::Mean(a), v)
    }

    /// Per-row sums, `m x n -> m x 1`.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(Op::RowSums(a), v)
    }

    pub fn cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(Op::Cols(a, start, len), v)
    }

    pub fn col(&mut self, a: Var, j: usize) -> Var {
        self.cols(a, j, 1)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.shape(parts[0]).0;
        let width: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut v = Tensor::zeros((rows, width));
        let mut at = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.nrows(), rows, "concat_cols: row counts differ");
            v.slice_mut(s![.., at..at + t.ncols()]).assign(t);
            at += t.ncols();
        }
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    /// `out[:, j] = a[:, perm[j]]`.
    pub fn permute_cols(&mut self, a: Var, perm: Arc<[usize]>) -> Var {
        let t = self.value(a);
        assert_eq!(perm.len(), t.ncols(), "permutation length");
        let mut v = Tensor::zeros(t.dim());
        for (j, &p) in perm.iter().enumerate() {
            v.column_mut(j).assign(&t.column(p));
        }
        self.push(Op::PermuteCols(a, perm), v)
    }

    /// Records a per-row scalar function of `a` given its values (`m x 1`)
    /// and its row-wise gradient (`m x n`, same shape as `a`).
    pub fn row_linear(&mut self, a: Var, values: Tensor, grad: Tensor) -> Var {
        assert_eq!(grad.dim(), self.shape(a), "row_linear gradient shape");
        assert_eq!(values.dim(), (self.shape(a).0, 1), "row_linear value shape");
        self.push(Op::RowLinear(a, Arc::new(grad)), values)
    }

    /// Reverse accumulation from a scalar output. The tape is not modified.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let (rows, cols) = self.shape(output);
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarOutput { rows, cols });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::from_elem((1, 1), 1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "adjoint of node {i} during backward"
                )));
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        use Op::*;
        let node = &self.nodes[i];
        let out = &*node.value;
        match &node.op {
            Leaf | Mask => {}
            Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.mapv(|x| -x));
            }
            Mul(a, b) => {
                accumulate(grads, *a, g * self.value(*b));
                accumulate(grads, *b, g * self.value(*a));
            }
            Div(a, b) => {
                let bv = self.value(*b);
                accumulate(grads, *a, g / bv);
                let mut gb = g * out;
                gb /= bv;
                gb.mapv_inplace(|x| -x);
                accumulate(grads, *b, gb);
            }
            Neg(a) => accumulate(grads, *a, g.mapv(|x| -x)),
            Affine(a, scale) => accumulate(grads, *a, g * *scale),
            MatMul(a, b) => {
                accumulate(grads, *a, g.dot(&self.value(*b).t()));
                accumulate(grads, *b, self.value(*a).t().dot(g));
            }
            Transpose(a) => accumulate(grads, *a, g.t().to_owned()),
            BroadcastRows(a, _) => {
                accumulate(grads, *a, g.sum_axis(Axis(0)).insert_axis(Axis(0)))
            }
            BroadcastCols(a, _) => {
                accumulate(grads, *a, g.sum_axis(Axis(1)).insert_axis(Axis(1)))
            }
            Exp(a) => accumulate(grads, *a, g * out),
            Ln(a) => accumulate(grads, *a, g / self.value(*a)),
            Sin(a) => accumulate(grads, *a, map2(g, self.value(*a), |g, x| g * x.cos())),
            Cos(a) => accumulate(grads, *a, map2(g, self.value(*a), |g, x| -g * x.sin())),
            Tanh(a) => accumulate(grads, *a, map2(g, out, |g, y| g * (1.0 - y * y))),
            Sigmoid(a) => accumulate(grads, *a, map2(g, out, |g, y| g * y * (1.0 - y))),
            Softplus(a) => {
                accumulate(grads, *a, map2(g, self.value(*a), |g, x| g * sigmoid(x)))
            }
            Relu(a) => accumulate(
                grads,
                *a,
                map2(g, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 }),
            ),
            Sqrt(a) => accumulate(grads, *a, map2(g, out, |g, y| 0.5 * g / y)),
            Square(a) => accumulate(grads, *a, map2(g, self.value(*a), |g, x| 2.0 * g * x)),
            Clamp(a, lo, hi) => accumulate(
                grads,
                *a,
                map2(g, self.value(*a), |g, x| g * inside(x, *lo, *hi)),
            ),
            Sum(a) => {
                let shape = self.shape(*a);
                accumulate(grads, *a, Tensor::from_elem(shape, g[[0, 0]]));
            }
            Mean(a) => {
                let shape = self.shape(*a);
                let n = (shape.0 * shape.1) as f64;
                accumulate(grads, *a, Tensor::from_elem(shape, g[[0, 0]] / n));
            }
            RowSums(a) => {
                let shape = self.shape(*a);
                accumulate(grads, *a, g.broadcast(shape).expect("broadcast").to_owned());
            }
            Cols(a, start, len) => {
                let mut ga = Tensor::zeros(self.shape(*a));
                ga.slice_mut(s![.., *start..*start + *len]).assign(g);
                accumulate(grads, *a, ga);
            }
            ConcatCols(parts) => {
                let mut at = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    accumulate(grads, p, g.slice(s![.., at..at + w]).to_owned());
                    at += w;
                }
            }
            PermuteCols(a, perm) => {
                let mut ga = Tensor::zeros(self.shape(*a));
                for (j, &p) in perm.iter().enumerate() {
                    ga.column_mut(p).assign(&g.column(j));
                }
                accumulate(grads, *a, ga);
            }
            RowLinear(a, jac) => {
                let mut ga = (**jac).clone();
                Zip::from(ga.rows_mut())
                    .and(g.rows())
                    .for_each(|mut row, gr| row *= gr[0]);
                accumulate(grads, *a, ga);
            }
        }
    }
}

fn map2(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let mut out = a.clone();
    Zip::from(&mut out).and(b).for_each(|o, &y| *o = f(*o, y));
    out
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, contribution: Tensor) {
    match &mut grads[v.0] {
        Some(g) => *g += &contribution,
        slot @ None => *slot = Some(contribution),
    }
}
