//! Define-by-run reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation performed on [`Tensor`] handles during a
//! forward pass. Calling [`Tensor::backward`] on a 1x1 result walks the tape in
//! reverse and accumulates one gradient per reachable node. The tape is
//! rebuilt for every forward pass; parameters live outside it (see
//! [`crate::params::ParamSet`]) and are bound as leaves each step.
//!
//! ```
//! use cgcn::autodiff::Tape;
//! use cgcn::matrix::Matrix;
//!
//! let tape = Tape::new();
//! let x = tape.param(Matrix::scalar(3.0));
//! let y = x.hadamard(x).unwrap().sum().unwrap();
//! let grads = y.backward().unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

use std::cell::RefCell;
use std::rc::Rc;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub type NodeId = usize;

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => sigmoid(v),
            Activation::Linear => v,
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Linear => 1.0,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "linear" | "identity" => Ok(Activation::Linear),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Matmul(NodeId, NodeId),
    /// `a · bᵀ`
    MatmulT(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    /// 1x1 tensor times a matrix.
    ScalarMul {
        scalar: NodeId,
        m: NodeId,
    },
    AddRowBias {
        m: NodeId,
        bias: NodeId,
    },
    Affine {
        a: NodeId,
        scale: f64,
    },
    Act {
        a: NodeId,
        kind: Activation,
    },
    RowSoftmax(NodeId),
    RowNormalize(NodeId),
    Powf {
        a: NodeId,
        exponent: f64,
    },
    LnFloor {
        a: NodeId,
        eps: f64,
    },
    SqDist {
        z: NodeId,
        centers: NodeId,
    },
    FrobeniusSq(NodeId, NodeId),
    Sum(NodeId),
    WeightedSum {
        a: NodeId,
        weights: Rc<Matrix>,
    },
}

#[derive(Debug)]
struct Node {
    value: Rc<Matrix>,
    requires_grad: bool,
    /// `None` for leaves and for results of operations on constants only.
    op: Option<Op>,
}

/// Ordered record of operations. Inputs always precede outputs.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a leaf value.
    pub fn leaf(&self, value: Matrix, requires_grad: bool) -> Tensor<'_> {
        let id = self.push(Rc::new(value), requires_grad, None);
        Tensor { tape: self, id }
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Matrix) -> Tensor<'_> {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Matrix) -> Tensor<'_> {
        self.leaf(value, false)
    }

    /// Constant leaf sharing an existing allocation.
    pub fn constant_shared(&self, value: Rc<Matrix>) -> Tensor<'_> {
        let id = self.push(value, false, None);
        Tensor { tape: self, id }
    }

    fn push(&self, value: Rc<Matrix>, requires_grad: bool, op: Option<Op>) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        nodes.len() - 1
    }

    fn value(&self, id: NodeId) -> Rc<Matrix> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn record(
        &self,
        op_name: &'static str,
        value: Matrix,
        inputs: &[NodeId],
        op: Op,
    ) -> Result<Tensor<'_>> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|&i| self.requires_grad(i));
        let op = requires_grad.then_some(op);
        let id = self.push(Rc::new(value), requires_grad, op);
        Ok(Tensor { tape: self, id })
    }

    /// Gradients of the scalar `loss` with respect to every node that requires one.
    pub fn backward(&self, loss: Tensor<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Contract(
                "loss tensor belongs to a different tape".into(),
            ));
        }
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.id].value.shape();
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {}x{}",
                shape.0, shape.1
            )));
        }

        let mut grads: Vec<Option<Matrix>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Matrix::scalar(1.0));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(op) = &node.op else { continue };
            let Some(g) = grads[id].take() else { continue };
            for (input, contribution) in backward_rule(&nodes, op, &node.value, &g)? {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }

        // Unreachable leaves get explicit zeros.
        for (id, node) in nodes.iter().enumerate() {
            if node.requires_grad && node.op.is_none() && grads[id].is_none() {
                let (r, c) = node.value.shape();
                grads[id] = Some(Matrix::zeros(r, c));
            }
        }
        Ok(Gradients { grads })
    }
}

/// Accumulated gradients after a backward pass, indexed by node id.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, t: Tensor<'_>) -> Option<&Matrix> {
        self.wrt(t.id)
    }

    pub fn wrt(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id).and_then(Option::as_ref)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Tensor<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl std::fmt::Debug for Tensor<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("value", &self.value())
            .finish()
    }
}

fn check_same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

impl<'t> Tensor<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Matrix> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    /// Same value as a constant leaf; gradients stop here.
    pub fn detach(&self) -> Tensor<'t> {
        self.tape.constant_shared(self.value())
    }

    pub fn backward(&self) -> Result<Gradients> {
        self.tape.backward(*self)
    }

    fn assert_same_tape(&self, other: &Tensor<'_>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "tensors from different tapes"
        );
    }

    pub fn matmul(&self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.assert_same_tape(&other);
        let value = self.value().matmul(&other.value())?;
        self.tape.record(
            "matmul",
            value,
            &[self.id, other.id],
            Op::Matmul(self.id, other.id),
        )
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.assert_same_tape(&other);
        let value = self.value().matmul_t(&other.value())?;
        self.tape.record(
            "matmul_t",
            value,
            &[self.id, other.id],
            Op::MatmulT(self.id, other.id),
        )
    }

    pub fn transpose(&self) -> Result<Tensor<'t>> {
        let value = self.value().transpose();
        self.tape
            .record("transpose", value, &[self.id], Op::Transpose(self.id))
    }

    pub fn add(&self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.assert_same_tape(&other);
        let (a, b) = (self.value(), other.value());
        check_same_shape("add", &a, &b)?;
        let value = a.zip_map(&b, |x, y| x + y);
        self.tape.record(
            "add",
            value,
            &[self.id, other.id],
            Op::Add(self.id, other.id),
        )
    }

    pub fn sub(&self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.assert_same_tape(&other);
        let (a, b) = (self.value(), other.value());
        check_same_shape("sub", &a, &b)?;
        let value = a.zip_map(&b, |x, y| x - y);
        self.tape.record(
            "sub",
            value,
            &[self.id, other.id],
            Op::Sub(self.id, other.id),
        )
    }

    pub fn hadamard(&self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.assert_same_tape(&other);
        let (a, b) = (self.value(), other.value());
        check_same_shape("hadamard", &a, &b)?;
        let value = a.zip_map(&b, |x, y| x * y);
        self.tape.record(
            "hadamard",
            value,
            &[self.id, other.id],
            Op::Hadamard(self.id, other.id),
        )
    }

    /// Multiplies every entry by the 1x1 tensor `scalar`.
    pub fn scale_by(&self, scalar: Tensor<'t>) -> Result<Tensor<'t>> {
        self.assert_same_tape(&scalar);
        let s = scalar.value();
        if s.shape() != (1, 1) {
            return Err(Error::Dimension {
                op: "scale_by",
                left: self.shape(),
                right: s.shape(),
            });
        }
        let value = self.value().scale(s.item());
        self.tape.record(
            "scale_by",
            value,
            &[scalar.id, self.id],
            Op::ScalarMul {
                scalar: scalar.id,
                m: self.id,
            },
        )
    }

    /// Adds a 1xC row vector to every row.
    pub fn add_row_bias(&self, bias: Tensor<'t>) -> Result<Tensor<'t>> {
        self.assert_same_tape(&bias);
        let (m, b) = (self.value(), bias.value());
        if b.rows() != 1 || b.cols() != m.cols() {
            return Err(Error::Dimension {
                op: "add_row_bias",
                left: m.shape(),
                right: b.shape(),
            });
        }
        let mut value = (*m).clone();
        for r in 0..value.rows() {
            for (v, bb) in value.row_mut(r).iter_mut().zip(b.as_slice()) {
                *v += *bb;
            }
        }
        self.tape.record(
            "add_row_bias",
            value,
            &[self.id, bias.id],
            Op::AddRowBias {
                m: self.id,
                bias: bias.id,
            },
        )
    }

    /// Elementwise `scale * x + shift` with constant coefficients.
    pub fn affine(&self, scale: f64, shift: f64) -> Result<Tensor<'t>> {
        let value = self.value().map(|v| scale * v + shift);
        self.tape.record(
            "affine",
            value,
            &[self.id],
            Op::Affine { a: self.id, scale },
        )
    }

    pub fn scale(&self, s: f64) -> Result<Tensor<'t>> {
        self.affine(s, 0.0)
    }

    pub fn activation(&self, kind: Activation) -> Result<Tensor<'t>> {
        let value = self.value().map(|v| kind.apply(v));
        self.tape.record(
            "activation",
            value,
            &[self.id],
            Op::Act { a: self.id, kind },
        )
    }

    /// Softmax over each row, stabilized by subtracting the row maximum.
    pub fn row_softmax(&self) -> Result<Tensor<'t>> {
        let a = self.value();
        if !a.is_finite() {
            return Err(Error::NonFinite { op: "row_softmax" });
        }
        let mut value = (*a).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.tape
            .record("row_softmax", value, &[self.id], Op::RowSoftmax(self.id))
    }

    /// Divides each row by its sum. Entries are expected to be positive.
    pub fn row_normalize(&self) -> Result<Tensor<'t>> {
        let mut value = (*self.value()).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let total: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.tape.record(
            "row_normalize",
            value,
            &[self.id],
            Op::RowNormalize(self.id),
        )
    }

    /// Elementwise power with a constant exponent.
    pub fn powf(&self, exponent: f64) -> Result<Tensor<'t>> {
        let value = self.value().map(|v| v.powf(exponent));
        self.tape.record(
            "powf",
            value,
            &[self.id],
            Op::Powf {
                a: self.id,
                exponent,
            },
        )
    }

    /// Elementwise `ln(max(x, eps))`.
    pub fn ln_floor(&self, eps: f64) -> Result<Tensor<'t>> {
        let value = self.value().map(|v| v.max(eps).ln());
        self.tape.record(
            "ln_floor",
            value,
            &[self.id],
            Op::LnFloor { a: self.id, eps },
        )
    }

    /// Pairwise squared Euclidean distances between rows of `self` (N×d)
    /// and rows of `centers` (K×d), giving N×K.
    pub fn sq_dist(&self, centers: Tensor<'t>) -> Result<Tensor<'t>> {
        self.assert_same_tape(&centers);
        let (z, c) = (self.value(), centers.value());
        if z.cols() != c.cols() {
            return Err(Error::Dimension {
                op: "sq_dist",
                left: z.shape(),
                right: c.shape(),
            });
        }
        let mut value = Matrix::zeros(z.rows(), c.rows());
        for i in 0..z.rows() {
            let zi = z.row(i);
            for j in 0..c.rows() {
                let d: f64 = zi
                    .iter()
                    .zip(c.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                value.set(i, j, d);
            }
        }
        self.tape.record(
            "sq_dist",
            value,
            &[self.id, centers.id],
            Op::SqDist {
                z: self.id,
                centers: centers.id,
            },
        )
    }

    /// `Σ (self − other)²` as a 1x1 tensor.
    pub fn frobenius_sq(&self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.assert_same_tape(&other);
        let (a, b) = (self.value(), other.value());
        check_same_shape("frobenius_sq", &a, &b)?;
        let total: f64 = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        self.tape.record(
            "frobenius_sq",
            Matrix::scalar(total),
            &[self.id, other.id],
            Op::FrobeniusSq(self.id, other.id),
        )
    }

    pub fn sum(&self) -> Result<Tensor<'t>> {
        let total = self.value().sum();
        self.tape
            .record("sum", Matrix::scalar(total), &[self.id], Op::Sum(self.id))
    }

    /// `Σ w ∘ self` with a constant weight matrix.
    pub fn weighted_sum(&self, weights: Rc<Matrix>) -> Result<Tensor<'t>> {
        let a = self.value();
        check_same_shape("weighted_sum", &a, &weights)?;
        let total: f64 = a
            .as_slice()
            .iter()
            .zip(weights.as_slice())
            .map(|(x, w)| x * w)
            .sum();
        self.tape.record(
            "weighted_sum",
            Matrix::scalar(total),
            &[self.id],
            Op::WeightedSum {
                a: self.id,
                weights,
            },
        )
    }
}

fn backward_rule(
    nodes: &[Node],
    op: &Op,
    out: &Matrix,
    g: &Matrix,
) -> Result<Vec<(NodeId, Matrix)>> {
    let val = |id: NodeId| -> &Matrix { &nodes[id].value };
    let needs = |id: NodeId| nodes[id].requires_grad;
    let mut out_grads = Vec::with_capacity(2);

    match *op {
        Op::Matmul(a, b) => {
            if needs(a) {
                out_grads.push((a, g.matmul_t(val(b))?));
            }
            if needs(b) {
                out_grads.push((b, val(a).t_matmul(g)?));
            }
        }
        Op::MatmulT(a, b) => {
            if needs(a) {
                out_grads.push((a, g.matmul(val(b))?));
            }
            if needs(b) {
                out_grads.push((b, g.t_matmul(val(a))?));
            }
        }
        Op::Transpose(a) => out_grads.push((a, g.transpose())),
        Op::Add(a, b) => {
            out_grads.push((a, g.clone()));
            out_grads.push((b, g.clone()));
        }
        Op::Sub(a, b) => {
            out_grads.push((a, g.clone()));
            out_grads.push((b, g.scale(-1.0)));
        }
        Op::Hadamard(a, b) => {
            if needs(a) {
                out_grads.push((a, g.zip_map(val(b), |x, y| x * y)));
            }
            if needs(b) {
                out_grads.push((b, g.zip_map(val(a), |x, y| x * y)));
            }
        }
        Op::ScalarMul { scalar, m } => {
            if needs(scalar) {
                let ds: f64 = g
                    .as_slice()
                    .iter()
                    .zip(val(m).as_slice())
                    .map(|(x, y)| x * y)
                    .sum();
                out_grads.push((scalar, Matrix::scalar(ds)));
            }
            if needs(m) {
                out_grads.push((m, g.scale(val(scalar).item())));
            }
        }
        Op::AddRowBias { m, bias } => {
            out_grads.push((m, g.clone()));
            if needs(bias) {
                let sums = g.col_sums();
                out_grads.push((bias, Matrix::from_vec(1, sums.len(), sums)?));
            }
        }
        Op::Affine { a, scale } => out_grads.push((a, g.scale(scale))),
        Op::Act { a, kind } => {
            let x = val(a);
            let mut d = g.clone();
            for ((dv, &xv), &yv) in d
                .as_mut_slice()
                .iter_mut()
                .zip(x.as_slice())
                .zip(out.as_slice())
            {
                *dv *= kind.derivative(xv, yv);
            }
            out_grads.push((a, d));
        }
        Op::RowSoftmax(a) => {
            let mut d = Matrix::zeros(out.rows(), out.cols());
            for r in 0..out.rows() {
                let (y, gr) = (out.row(r), g.row(r));
                let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                for ((dv, &yv), &gv) in d.row_mut(r).iter_mut().zip(y).zip(gr) {
                    *dv = yv * (gv - dot);
                }
            }
            out_grads.push((a, d));
        }
        Op::RowNormalize(a) => {
            let x = val(a);
            let mut d = Matrix::zeros(out.rows(), out.cols());
            for r in 0..out.rows() {
                let total: f64 = x.row(r).iter().sum();
                let (y, gr) = (out.row(r), g.row(r));
                let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                for (dv, &gv) in d.row_mut(r).iter_mut().zip(gr) {
                    *dv = (gv - dot) / total;
                }
            }
            out_grads.push((a, d));
        }
        Op::Powf { a, exponent } => {
            let x = val(a);
            let d = Matrix::from_vec(
                x.rows(),
                x.cols(),
                g.as_slice()
                    .iter()
                    .zip(x.as_slice())
                    .map(|(gv, xv)| gv * exponent * xv.powf(exponent - 1.0))
                    .collect(),
            )?;
            out_grads.push((a, d));
        }
        Op::LnFloor { a, eps } => {
            let x = val(a);
            let d = g.zip_map(x, |gv, xv| if xv > eps { gv / xv } else { 0.0 });
            out_grads.push((a, d));
        }
        Op::SqDist { z, centers } => {
            let (zv, cv) = (val(z), val(centers));
            if needs(z) {
                // dz_i = 2 (Σ_j g_ij) z_i − 2 Σ_j g_ij c_j
                let gc = g.matmul(cv)?;
                let row_g = g.row_sums();
                let mut d = Matrix::zeros(zv.rows(), zv.cols());
                for i in 0..zv.rows() {
                    for ((dv, &zval), &gcv) in d.row_mut(i).iter_mut().zip(zv.row(i)).zip(gc.row(i))
                    {
                        *dv = 2.0 * (row_g[i] * zval - gcv);
                    }
                }
                out_grads.push((z, d));
            }
            if needs(centers) {
                let gz = g.t_matmul(zv)?;
                let col_g = g.col_sums();
                let mut d = Matrix::zeros(cv.rows(), cv.cols());
                for j in 0..cv.rows() {
                    for ((dv, &cval), &gzv) in d.row_mut(j).iter_mut().zip(cv.row(j)).zip(gz.row(j))
                    {
                        *dv = 2.0 * (col_g[j] * cval - gzv);
                    }
                }
                out_grads.push((centers, d));
            }
        }
        Op::FrobeniusSq(a, b) => {
            let s = 2.0 * g.item();
            let diff = val(a).zip_map(val(b), |x, y| x - y);
            if needs(a) {
                out_grads.push((a, diff.scale(s)));
            }
            if needs(b) {
                out_grads.push((b, diff.scale(-s)));
            }
        }
        Op::Sum(a) => {
            let (r, c) = val(a).shape();
            out_grads.push((a, Matrix::filled(r, c, g.item())));
        }
        Op::WeightedSum { a, ref weights } => out_grads.push((a, weights.scale(g.item()))),
    }
    Ok(out_grads)
}
