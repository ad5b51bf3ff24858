use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::kernels;
use super::shape::{axis_split, broadcast_index, broadcast_shape, check_axis, strides};
use super::tensor::{NodeId, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Abs,
    Log,
    Exp,
    Sqrt,
    Square,
}

impl ElementwiseOp {
    pub fn is_binary(self) -> bool {
        matches!(
            self,
            ElementwiseOp::Add | ElementwiseOp::Sub | ElementwiseOp::Mul | ElementwiseOp::Div
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

/// Reduction target: one axis or every element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    All,
    Dim(usize),
}

/// Recorded operand: the node it came from (if any) plus the values the
/// backward rule needs.
#[derive(Clone)]
struct Input {
    node: Option<usize>,
    shape: Vec<usize>,
    values: Arc<Vec<f64>>,
}

enum Op {
    Leaf,
    Add(Input, Input),
    Sub(Input, Input),
    Mul(Input, Input),
    Div(Input, Input),
    Neg(Input),
    Abs(Input),
    Log(Input),
    Exp(Input),
    Sqrt(Input),
    Square(Input),
    Scale(Input, f64),
    AddScalar(Input),
    Reduce {
        input: Input,
        op: ReduceOp,
        axis: Axis,
    },
    Matmul {
        a: Input,
        b: Input,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Softmax {
        input: Input,
        axis: usize,
    },
    LogSoftmax {
        input: Input,
        axis: usize,
    },
    Reshape(Input),
    Transpose {
        input: Input,
        dims: (usize, usize),
    },
    Unfold {
        input: Input,
        patch: usize,
        stride: usize,
        count: usize,
    },
    MovingAverage {
        input: Input,
        kernel: usize,
    },
}

impl Op {
    fn inputs(&self) -> Vec<&Input> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![a, b],
            Op::Matmul { a, b, .. } => vec![a, b],
            Op::Neg(x)
            | Op::Abs(x)
            | Op::Log(x)
            | Op::Exp(x)
            | Op::Sqrt(x)
            | Op::Square(x)
            | Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Reshape(x) => vec![x],
            Op::Reduce { input, .. }
            | Op::Softmax { input, .. }
            | Op::LogSoftmax { input, .. }
            | Op::Transpose { input, .. }
            | Op::Unfold { input, .. }
            | Op::MovingAverage { input, .. } => vec![input],
        }
    }
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    values: Arc<Vec<f64>>,
}

/// Reverse-mode gradient tape.
///
/// Nodes are appended in creation order, which is also a topological order.
/// A tape has a single writer; build one per forward/backward sequence.
/// Operations whose inputs are all detached return detached tensors and
/// leave the tape untouched.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients returned by [`Tape::backward`], keyed by node.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&Tensor> {
        t.node_id().and_then(|id| self.grads.get(&id))
    }

    pub fn by_id(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &Tensor)> {
        self.grads.iter()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Registers `t` as a leaf on this tape and returns the attached copy.
    pub fn leaf(&self, t: &Tensor) -> Tensor {
        self.push(Op::Leaf, t.shape().to_vec(), t.shared_values())
    }

    fn push(&self, op: Op, shape: Vec<usize>, values: Arc<Vec<f64>>) -> Tensor {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node {
            op,
            shape: shape.clone(),
            values: Arc::clone(&values),
        });
        Tensor::from_parts(shape, values, Some(NodeId { tape: self.id, index }))
    }

    fn input(&self, t: &Tensor) -> Result<Input> {
        let node = match t.node_id() {
            Some(id) if id.tape != self.id => {
                return Err(Error::Tape(format!(
                    "tensor belongs to tape {} but was used on tape {}",
                    id.tape, self.id
                )))
            }
            Some(id) => Some(id.index),
            None => None,
        };
        Ok(Input {
            node,
            shape: t.shape().to_vec(),
            values: t.shared_values(),
        })
    }

    /// Records `op` if any input is attached, otherwise returns a detached result.
    fn emit(&self, op: Op, shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        let attached = op.inputs().iter().any(|i| i.node.is_some());
        let values = Arc::new(values);
        if attached {
            self.push(op, shape, values)
        } else {
            Tensor::from_parts(shape, values, None)
        }
    }

    // ---------------------------------------------------------------
    // elementwise

    pub fn elementwise(&self, op: ElementwiseOp, a: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
        match (op.is_binary(), b) {
            (true, Some(b)) => self.binary(op, a, b),
            (false, None) => self.unary(op, a),
            (true, None) => Err(Error::shape(format!("{op:?} needs two operands"))),
            (false, Some(_)) => Err(Error::shape(format!("{op:?} takes one operand"))),
        }
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(ElementwiseOp::Add, a, b)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(ElementwiseOp::Sub, a, b)
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(ElementwiseOp::Mul, a, b)
    }

    pub fn div(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(ElementwiseOp::Div, a, b)
    }

    pub fn neg(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(ElementwiseOp::Neg, a)
    }

    pub fn abs(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(ElementwiseOp::Abs, a)
    }

    pub fn log(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(ElementwiseOp::Log, a)
    }

    pub fn exp(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(ElementwiseOp::Exp, a)
    }

    pub fn sqrt(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(ElementwiseOp::Sqrt, a)
    }

    pub fn square(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(ElementwiseOp::Square, a)
    }

    fn binary(&self, op: ElementwiseOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let out_shape = broadcast_shape(a.shape(), b.shape())?;
        let (av, bv) = (a.values(), b.values());
        let f: fn(f64, f64) -> f64 = match op {
            ElementwiseOp::Add => |x, y| x + y,
            ElementwiseOp::Sub => |x, y| x - y,
            ElementwiseOp::Mul => |x, y| x * y,
            ElementwiseOp::Div => |x, y| x / y,
            _ => unreachable!(),
        };
        if op == ElementwiseOp::Div && bv.contains(&0.0) {
            return Err(Error::domain("division by zero"));
        }
        let values: Vec<f64> = if a.shape() == b.shape() {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ia = broadcast_index(a.shape(), &out_shape);
            let ib = broadcast_index(b.shape(), &out_shape);
            ia.iter().zip(&ib).map(|(&i, &j)| f(av[i], bv[j])).collect()
        };
        let (ia, ib) = (self.input(a)?, self.input(b)?);
        let op = match op {
            ElementwiseOp::Add => Op::Add(ia, ib),
            ElementwiseOp::Sub => Op::Sub(ia, ib),
            ElementwiseOp::Mul => Op::Mul(ia, ib),
            ElementwiseOp::Div => Op::Div(ia, ib),
            _ => unreachable!(),
        };
        Ok(self.emit(op, out_shape, values))
    }

    fn unary(&self, op: ElementwiseOp, a: &Tensor) -> Result<Tensor> {
        let v = a.values();
        let values: Vec<f64> = match op {
            ElementwiseOp::Neg => v.iter().map(|x| -x).collect(),
            ElementwiseOp::Abs => v.iter().map(|x| x.abs()).collect(),
            ElementwiseOp::Log => {
                if let Some(x) = v.iter().find(|&&x| x.is_nan() || x <= 0.0) {
                    return Err(Error::domain(format!("log of non-positive value {x}")));
                }
                v.iter().map(|x| x.ln()).collect()
            }
            ElementwiseOp::Exp => v.iter().map(|x| x.exp()).collect(),
            ElementwiseOp::Sqrt => {
                // sqrt(0) is allowed; its backward uses the zero subgradient
                if let Some(x) = v.iter().find(|&&x| x.is_nan() || x < 0.0) {
                    return Err(Error::domain(format!("sqrt of negative value {x}")));
                }
                v.iter().map(|x| x.sqrt()).collect()
            }
            ElementwiseOp::Square => v.iter().map(|x| x * x).collect(),
            _ => unreachable!(),
        };
        let input = self.input(a)?;
        let op = match op {
            ElementwiseOp::Neg => Op::Neg(input),
            ElementwiseOp::Abs => Op::Abs(input),
            ElementwiseOp::Log => Op::Log(input),
            ElementwiseOp::Exp => Op::Exp(input),
            ElementwiseOp::Sqrt => Op::Sqrt(input),
            ElementwiseOp::Square => Op::Square(input),
            _ => unreachable!(),
        };
        Ok(self.emit(op, a.shape().to_vec(), values))
    }

    /// Multiplies by a constant. No gradient flows into `k`.
    pub fn scale(&self, a: &Tensor, k: f64) -> Result<Tensor> {
        let values = a.values().iter().map(|x| x * k).collect();
        Ok(self.emit(Op::Scale(self.input(a)?, k), a.shape().to_vec(), values))
    }

    /// Adds a constant to every element.
    pub fn add_scalar(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        let values = a.values().iter().map(|x| x + c).collect();
        Ok(self.emit(Op::AddScalar(self.input(a)?), a.shape().to_vec(), values))
    }

    // ---------------------------------------------------------------
    // reductions

    /// Sum or mean over one axis or over everything.
    ///
    /// With `keepdim` the reduced axis stays as size 1; reducing everything
    /// yields a rank-0 tensor unless `keepdim` keeps every axis at size 1.
    pub fn reduce(&self, op: ReduceOp, a: &Tensor, axis: Axis, keepdim: bool) -> Result<Tensor> {
        let v = a.values();
        let (shape, values) = match axis {
            Axis::All => {
                let s: f64 = v.iter().sum();
                let val = match op {
                    ReduceOp::Sum => s,
                    ReduceOp::Mean => s / v.len() as f64,
                };
                let shape = if keepdim { vec![1; a.rank()] } else { vec![] };
                (shape, vec![val])
            }
            Axis::Dim(d) => {
                check_axis(a.shape(), d)?;
                let (outer, len, inner) = axis_split(a.shape(), d);
                let mut out = vec![0.0; outer * inner];
                if inner == 1 {
                    for (t, row) in out.iter_mut().zip(v.chunks_exact(len.max(1))) {
                        *t = row.iter().fold(0.0, |acc, &x| acc + x);
                    }
                } else {
                    for o in 0..outer {
                        for j in 0..len {
                            let base = (o * len + j) * inner;
                            let dst = &mut out[o * inner..(o + 1) * inner];
                            for (t, &x) in dst.iter_mut().zip(&v[base..base + inner]) {
                                *t += x;
                            }
                        }
                    }
                }
                if op == ReduceOp::Mean {
                    let inv = 1.0 / len as f64;
                    out.iter_mut().for_each(|x| *x *= inv);
                }
                let mut shape = a.shape().to_vec();
                if keepdim {
                    shape[d] = 1;
                } else {
                    shape.remove(d);
                }
                (shape, out)
            }
        };
        let input = self.input(a)?;
        Ok(self.emit(Op::Reduce { input, op, axis }, shape, values))
    }

    pub fn sum(&self, a: &Tensor, axis: Axis, keepdim: bool) -> Result<Tensor> {
        self.reduce(ReduceOp::Sum, a, axis, keepdim)
    }

    pub fn mean(&self, a: &Tensor, axis: Axis, keepdim: bool) -> Result<Tensor> {
        self.reduce(ReduceOp::Mean, a, axis, keepdim)
    }

    pub fn sum_all(&self, a: &Tensor) -> Result<Tensor> {
        self.reduce(ReduceOp::Sum, a, Axis::All, false)
    }

    pub fn mean_all(&self, a: &Tensor) -> Result<Tensor> {
        self.reduce(ReduceOp::Mean, a, Axis::All, false)
    }

    // ---------------------------------------------------------------
    // linear algebra

    /// `[m, k] · [k, n] -> [m, n]`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.rank() != 2 || b.rank() != 2 {
            return Err(Error::shape(format!(
                "matmul expects rank-2 operands, got {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        self.matmul_impl(a, b, 1, a.shape()[0], a.shape()[1], b.shape()[0], b.shape()[1])
    }

    /// Batched product `[g, m, k] · [g, k, n] -> [g, m, n]`.
    pub fn bmm(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] {
            return Err(Error::shape(format!(
                "bmm expects [g,m,k]·[g,k,n], got {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let s = a.shape();
        self.matmul_impl(a, b, s[0], s[1], s[2], b.shape()[1], b.shape()[2])
    }

    #[allow(clippy::too_many_arguments)]
    fn matmul_impl(
        &self,
        a: &Tensor,
        b: &Tensor,
        batch: usize,
        m: usize,
        k: usize,
        kb: usize,
        n: usize,
    ) -> Result<Tensor> {
        if k != kb {
            return Err(Error::shape(format!(
                "inner dimensions differ: {:?} · {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mut out = vec![0.0; batch * m * n];
        for g in 0..batch {
            kernels::gemm(
                &a.values()[g * m * k..(g + 1) * m * k],
                &b.values()[g * k * n..(g + 1) * k * n],
                &mut out[g * m * n..(g + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let shape = if batch == 1 && a.rank() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        let op = Op::Matmul {
            a: self.input(a)?,
            b: self.input(b)?,
            batch,
            m,
            k,
            n,
        };
        Ok(self.emit(op, shape, out))
    }

    // ---------------------------------------------------------------
    // softmax

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, a: &Tensor, axis: usize) -> Result<Tensor> {
        let values = softmax_values(a, axis, false)?;
        let input = self.input(a)?;
        Ok(self.emit(Op::Softmax { input, axis }, a.shape().to_vec(), values))
    }

    /// `log(softmax(a))` along `axis`, via `a - max - log Σ exp(a - max)`.
    pub fn log_softmax(&self, a: &Tensor, axis: usize) -> Result<Tensor> {
        let values = softmax_values(a, axis, true)?;
        let input = self.input(a)?;
        Ok(self.emit(Op::LogSoftmax { input, axis }, a.shape().to_vec(), values))
    }

    // ---------------------------------------------------------------
    // layout

    pub fn reshape(&self, a: &Tensor, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != a.len() || shape.contains(&0) {
            return Err(Error::shape(format!("cannot reshape {:?} into {shape:?}", a.shape())));
        }
        let input = self.input(a)?;
        let attached = input.node.is_some();
        let values = a.shared_values();
        if attached {
            Ok(self.push(Op::Reshape(input), shape, values))
        } else {
            Ok(Tensor::from_parts(shape, values, None))
        }
    }

    /// Swaps two axes.
    pub fn transpose(&self, a: &Tensor, d0: usize, d1: usize) -> Result<Tensor> {
        check_axis(a.shape(), d0)?;
        check_axis(a.shape(), d1)?;
        let mut shape = a.shape().to_vec();
        shape.swap(d0, d1);
        let values = permute_values(a.values(), a.shape(), d0, d1);
        let input = self.input(a)?;
        Ok(self.emit(Op::Transpose { input, dims: (d0, d1) }, shape, values))
    }

    /// Overlapping windows over the last axis: `[.., T] -> [.., count, patch]`
    /// with element `(i, j)` taken from position `i * stride + j`.
    pub fn unfold(&self, a: &Tensor, patch: usize, stride: usize) -> Result<Tensor> {
        let len = *a.shape().last().ok_or_else(|| Error::shape("unfold of a scalar"))?;
        if patch == 0 || stride == 0 || patch > len {
            return Err(Error::shape(format!(
                "unfold with patch {patch}, stride {stride} over length {len}"
            )));
        }
        let count = (len - patch) / stride + 1;
        let rows = a.len() / len;
        let v = a.values();
        let mut out = Vec::with_capacity(rows * count * patch);
        for r in 0..rows {
            let row = &v[r * len..(r + 1) * len];
            for i in 0..count {
                out.extend_from_slice(&row[i * stride..i * stride + patch]);
            }
        }
        let mut shape = a.shape()[..a.rank() - 1].to_vec();
        shape.push(count);
        shape.push(patch);
        let input = self.input(a)?;
        Ok(self.emit(
            Op::Unfold {
                input,
                patch,
                stride,
                count,
            },
            shape,
            out,
        ))
    }

    /// Centered moving average over the last axis with replicate padding of
    /// `(kernel - 1) / 2` on both ends, so the length is preserved.
    pub fn moving_average(&self, a: &Tensor, kernel: usize) -> Result<Tensor> {
        if kernel == 0 || kernel.is_multiple_of(2) {
            return Err(Error::config(format!(
                "moving average kernel must be odd, got {kernel}"
            )));
        }
        let len = *a
            .shape()
            .last()
            .ok_or_else(|| Error::shape("moving average of a scalar"))?;
        let half = (kernel - 1) / 2;
        let rows = a.len() / len;
        let v = a.values();
        let mut out = vec![0.0; a.len()];
        let inv = 1.0 / kernel as f64;
        for r in 0..rows {
            let row = &v[r * len..(r + 1) * len];
            let dst = &mut out[r * len..(r + 1) * len];
            for (t, d) in dst.iter_mut().enumerate() {
                let mut s = 0.0;
                for o in 0..kernel {
                    let idx = (t + o).saturating_sub(half).min(len - 1);
                    s += row[idx];
                }
                *d = s * inv;
            }
        }
        let input = self.input(a)?;
        Ok(self.emit(Op::MovingAverage { input, kernel }, a.shape().to_vec(), out))
    }

    // ---------------------------------------------------------------
    // reverse pass

    /// Reverse-mode gradients of the scalar `loss` with respect to `wrt`.
    ///
    /// Only nodes on a path from a `wrt` tensor to `loss` are visited, so the
    /// same forward graph can be differentiated several times with different
    /// targets. Gradient buffers are fresh for every call and accumulate
    /// additively across shared subgraphs. A `wrt` tensor the loss does not
    /// depend on gets a zero gradient.
    pub fn backward(&self, loss: &Tensor, wrt: &[&Tensor]) -> Result<Gradients> {
        if loss.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let loss_id = loss
            .node_id()
            .ok_or_else(|| Error::Tape("loss is not attached to a tape".into()))?;
        if loss_id.tape != self.id {
            return Err(Error::Tape("loss belongs to another tape".into()));
        }
        let nodes = self.nodes.borrow();
        let mut targets = Vec::with_capacity(wrt.len());
        for t in wrt {
            match t.node_id() {
                Some(id) if id.tape == self.id => targets.push(id),
                Some(_) => return Err(Error::Tape("wrt tensor belongs to another tape".into())),
                None => return Err(Error::Tape("wrt tensor is detached".into())),
            }
        }

        let end = loss_id.index + 1;
        let mut needs = vec![false; end];
        for id in &targets {
            if id.index < end {
                needs[id.index] = true;
            }
        }
        for i in 0..end {
            if !needs[i] {
                needs[i] = nodes[i]
                    .op
                    .inputs()
                    .iter()
                    .any(|inp| inp.node.is_some_and(|j| needs[j]));
            }
        }

        let mut grads: Vec<Option<Vec<f64>>> = (0..end).map(|_| None).collect();
        if needs[loss_id.index] {
            grads[loss_id.index] = Some(vec![1.0]);
        }
        for i in (0..end).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            propagate(node, &g, &needs, &mut grads);
            // keep the buffer if this node itself is a target
            if targets.iter().any(|t| t.index == i) {
                grads[i] = Some(g);
            }
        }

        let mut out = HashMap::with_capacity(targets.len());
        for id in targets {
            let shape = nodes[id.index].shape.clone();
            let values = match grads.get(id.index).and_then(|g| g.clone()) {
                Some(g) => g,
                None => vec![0.0; nodes[id.index].values.len()],
            };
            out.insert(id, Tensor::from_parts(shape, Arc::new(values), None));
        }
        Ok(Gradients { grads: out })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], index: usize, contribution: Vec<f64>) {
    match &mut grads[index] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

fn wants(input: &Input, needs: &[bool]) -> Option<usize> {
    input.node.filter(|&j| needs[j])
}

/// Sums a gradient of `out_shape` down to a broadcast source of `in_shape`.
fn unbroadcast(g: &[f64], in_shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    if in_shape == out_shape {
        return g.to_vec();
    }
    let n: usize = in_shape.iter().product();
    let map = broadcast_index(in_shape, out_shape);
    let mut out = vec![0.0; n];
    for (gi, &src) in g.iter().zip(&map) {
        out[src] += gi;
    }
    out
}

/// Values of `input` expanded to `out_shape`.
fn expand(input: &Input, out_shape: &[usize]) -> Vec<f64> {
    if input.shape == out_shape {
        return input.values.as_ref().clone();
    }
    broadcast_index(&input.shape, out_shape)
        .into_iter()
        .map(|i| input.values[i])
        .collect()
}

fn propagate(node: &Node, g: &[f64], needs: &[bool], grads: &mut [Option<Vec<f64>>]) {
    let out_shape = &node.shape;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if let Some(j) = wants(a, needs) {
                accumulate(grads, j, unbroadcast(g, &a.shape, out_shape));
            }
            if let Some(j) = wants(b, needs) {
                accumulate(grads, j, unbroadcast(g, &b.shape, out_shape));
            }
        }
        Op::Sub(a, b) => {
            if let Some(j) = wants(a, needs) {
                accumulate(grads, j, unbroadcast(g, &a.shape, out_shape));
            }
            if let Some(j) = wants(b, needs) {
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                accumulate(grads, j, unbroadcast(&neg, &b.shape, out_shape));
            }
        }
        Op::Mul(a, b) => {
            if let Some(j) = wants(a, needs) {
                let bv = expand(b, out_shape);
                let ga: Vec<f64> = g.iter().zip(&bv).map(|(x, y)| x * y).collect();
                accumulate(grads, j, unbroadcast(&ga, &a.shape, out_shape));
            }
            if let Some(j) = wants(b, needs) {
                let av = expand(a, out_shape);
                let gb: Vec<f64> = g.iter().zip(&av).map(|(x, y)| x * y).collect();
                accumulate(grads, j, unbroadcast(&gb, &b.shape, out_shape));
            }
        }
        Op::Div(a, b) => {
            let bv = expand(b, out_shape);
            if let Some(j) = wants(a, needs) {
                let ga: Vec<f64> = g.iter().zip(&bv).map(|(x, y)| x / y).collect();
                accumulate(grads, j, unbroadcast(&ga, &a.shape, out_shape));
            }
            if let Some(j) = wants(b, needs) {
                let av = expand(a, out_shape);
                let gb: Vec<f64> = g
                    .iter()
                    .zip(av.iter().zip(&bv))
                    .map(|(x, (p, q))| -x * p / (q * q))
                    .collect();
                accumulate(grads, j, unbroadcast(&gb, &b.shape, out_shape));
            }
        }
        Op::Neg(x) => {
            if let Some(j) = wants(x, needs) {
                accumulate(grads, j, g.iter().map(|v| -v).collect());
            }
        }
        Op::Abs(x) => {
            if let Some(j) = wants(x, needs) {
                // zero subgradient at 0
                let gx = g
                    .iter()
                    .zip(x.values.iter())
                    .map(|(gi, &xi)| {
                        if xi > 0.0 {
                            *gi
                        } else if xi < 0.0 {
                            -gi
                        } else {
                            0.0
                        }
                    })
                    .collect();
                accumulate(grads, j, gx);
            }
        }
        Op::Log(x) => {
            if let Some(j) = wants(x, needs) {
                accumulate(grads, j, g.iter().zip(x.values.iter()).map(|(a, b)| a / b).collect());
            }
        }
        Op::Exp(x) => {
            if let Some(j) = wants(x, needs) {
                let out = &node.values;
                accumulate(grads, j, g.iter().zip(out.iter()).map(|(a, b)| a * b).collect());
            }
        }
        Op::Sqrt(x) => {
            if let Some(j) = wants(x, needs) {
                let out = &node.values;
                let gx = g
                    .iter()
                    .zip(out.iter())
                    .map(|(a, &s)| if s > 0.0 { a / (2.0 * s) } else { 0.0 })
                    .collect();
                accumulate(grads, j, gx);
            }
        }
        Op::Square(x) => {
            if let Some(j) = wants(x, needs) {
                accumulate(
                    grads,
                    j,
                    g.iter().zip(x.values.iter()).map(|(a, b)| 2.0 * a * b).collect(),
                );
            }
        }
        Op::Scale(x, k) => {
            if let Some(j) = wants(x, needs) {
                accumulate(grads, j, g.iter().map(|v| v * k).collect());
            }
        }
        Op::AddScalar(x) | Op::Reshape(x) => {
            if let Some(j) = wants(x, needs) {
                accumulate(grads, j, g.to_vec());
            }
        }
        Op::Reduce { input, op, axis } => {
            if let Some(j) = wants(input, needs) {
                let n_in = input.values.len();
                let gx = match axis {
                    Axis::All => {
                        let scale = match op {
                            ReduceOp::Sum => 1.0,
                            ReduceOp::Mean => 1.0 / n_in as f64,
                        };
                        vec![g[0] * scale; n_in]
                    }
                    Axis::Dim(d) => {
                        let (outer, len, inner) = axis_split(&input.shape, *d);
                        let scale = match op {
                            ReduceOp::Sum => 1.0,
                            ReduceOp::Mean => 1.0 / len as f64,
                        };
                        let mut gx = vec![0.0; n_in];
                        if inner == 1 {
                            for (row, s) in gx.chunks_exact_mut(len.max(1)).zip(g) {
                                row.fill(s * scale);
                            }
                            accumulate(grads, j, gx);
                            return;
                        }
                        for o in 0..outer {
                            let src = &g[o * inner..(o + 1) * inner];
                            for l in 0..len {
                                let base = (o * len + l) * inner;
                                for (dst, s) in gx[base..base + inner].iter_mut().zip(src) {
                                    *dst = s * scale;
                                }
                            }
                        }
                        gx
                    }
                };
                accumulate(grads, j, gx);
            }
        }
        Op::Matmul { a, b, batch, m, k, n } => {
            let (batch, m, k, n) = (*batch, *m, *k, *n);
            if let Some(j) = wants(a, needs) {
                let mut ga = vec![0.0; batch * m * k];
                for t in 0..batch {
                    kernels::gemm_a_bt(
                        &g[t * m * n..(t + 1) * m * n],
                        &b.values[t * k * n..(t + 1) * k * n],
                        &mut ga[t * m * k..(t + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                }
                accumulate(grads, j, ga);
            }
            if let Some(j) = wants(b, needs) {
                let mut gb = vec![0.0; batch * k * n];
                for t in 0..batch {
                    kernels::gemm_at_b(
                        &a.values[t * m * k..(t + 1) * m * k],
                        &g[t * m * n..(t + 1) * m * n],
                        &mut gb[t * k * n..(t + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
                accumulate(grads, j, gb);
            }
        }
        Op::Softmax { input, axis } => {
            if let Some(j) = wants(input, needs) {
                let s = &node.values;
                let (outer, len, inner) = axis_split(&input.shape, *axis);
                let mut gx = vec![0.0; s.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let dot: f64 = (0..len).map(|l| g[idx(l)] * s[idx(l)]).sum();
                        for l in 0..len {
                            gx[idx(l)] = s[idx(l)] * (g[idx(l)] - dot);
                        }
                    }
                }
                accumulate(grads, j, gx);
            }
        }
        Op::LogSoftmax { input, axis } => {
            if let Some(j) = wants(input, needs) {
                let ls = &node.values;
                let (outer, len, inner) = axis_split(&input.shape, *axis);
                let mut gx = vec![0.0; ls.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let total: f64 = (0..len).map(|l| g[idx(l)]).sum();
                        for l in 0..len {
                            gx[idx(l)] = g[idx(l)] - ls[idx(l)].exp() * total;
                        }
                    }
                }
                accumulate(grads, j, gx);
            }
        }
        Op::Transpose { input, dims } => {
            if let Some(j) = wants(input, needs) {
                accumulate(grads, j, permute_values(g, out_shape, dims.0, dims.1));
            }
        }
        Op::Unfold {
            input,
            patch,
            stride,
            count,
        } => {
            if let Some(j) = wants(input, needs) {
                let len = *input.shape.last().unwrap();
                let rows = input.values.len() / len;
                let mut gx = vec![0.0; input.values.len()];
                for r in 0..rows {
                    for i in 0..*count {
                        let src = &g[(r * count + i) * patch..(r * count + i + 1) * patch];
                        let dst = &mut gx[r * len + i * stride..r * len + i * stride + patch];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                accumulate(grads, j, gx);
            }
        }
        Op::MovingAverage { input, kernel } => {
            if let Some(j) = wants(input, needs) {
                let len = *input.shape.last().unwrap();
                let half = (kernel - 1) / 2;
                let rows = input.values.len() / len;
                let inv = 1.0 / *kernel as f64;
                let mut gx = vec![0.0; input.values.len()];
                for r in 0..rows {
                    for t in 0..len {
                        let gt = g[r * len + t] * inv;
                        for o in 0..*kernel {
                            let idx = (t + o).saturating_sub(half).min(len - 1);
                            gx[r * len + idx] += gt;
                        }
                    }
                }
                accumulate(grads, j, gx);
            }
        }
    }
}

fn softmax_values(a: &Tensor, axis: usize, log: bool) -> Result<Vec<f64>> {
    check_axis(a.shape(), axis)?;
    let v = a.values();
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::domain(format!("softmax input is not finite: {x}")));
    }
    let (outer, len, inner) = axis_split(a.shape(), axis);
    let mut out = vec![0.0; v.len()];
    if inner == 1 && len > 0 {
        for (dst, row) in out.chunks_exact_mut(len).zip(v.chunks_exact(len)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            if log {
                let lz = z.ln();
                for (d, x) in dst.iter_mut().zip(row) {
                    *d = x - max - lz;
                }
            } else {
                for (d, x) in dst.iter_mut().zip(row) {
                    *d = (x - max).exp() / z;
                }
            }
        }
        return Ok(out);
    }
    for o in 0..outer {
        for i in 0..inner {
            let idx = |l: usize| (o * len + l) * inner + i;
            let max = (0..len).map(|l| v[idx(l)]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..len).map(|l| (v[idx(l)] - max).exp()).sum();
            if log {
                let lz = z.ln();
                for l in 0..len {
                    out[idx(l)] = v[idx(l)] - max - lz;
                }
            } else {
                for l in 0..len {
                    out[idx(l)] = (v[idx(l)] - max).exp() / z;
                }
            }
        }
    }
    Ok(out)
}

/// Values of a tensor with shape `shape` after swapping axes `d0` and `d1`.
fn permute_values(v: &[f64], shape: &[usize], d0: usize, d1: usize) -> Vec<f64> {
    if d0 == d1 {
        return v.to_vec();
    }
    let mut out_shape = shape.to_vec();
    out_shape.swap(d0, d1);
    let in_strides = strides(shape);
    let mut src_strides = in_strides.clone();
    src_strides.swap(d0, d1);
    let rank = shape.len();
    let mut out = Vec::with_capacity(v.len());
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..v.len() {
        out.push(v[src]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    out
}
