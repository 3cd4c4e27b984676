use std::cell::{Cell, RefCell};

use super::{AdError, AdResult, Tensor};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) u32);

#[derive(Debug, Clone)]
enum Op {
    Leaf { requires_grad: bool },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    AddC(NodeId),
    MulC(NodeId, f64),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Sum(NodeId, Option<usize>),
    Mean(NodeId, Option<usize>),
    Concat(Vec<NodeId>, usize),
    Slice { input: NodeId, axis: usize, start: usize },
    Exp(NodeId),
    Log(NodeId),
    Sqrt(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Sigmoid(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Atan2 { y: NodeId, x: NodeId },
    Softmax { input: NodeId, axis: usize },
    Clamp { input: NodeId, lo: f64, hi: f64 },
    MaxPair(NodeId, NodeId),
    MinPair(NodeId, NodeId),
    MaxAxis0(NodeId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
}

/// A reverse-mode tape. Nodes are evaluated eagerly at creation; creation
/// order is the topological order used by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    step_marks: Cell<usize>,
}

/// Index mapping for limited 2D broadcasting: an operand of shape
/// `[ar, ac]` participates in an output of shape `[or, oc]` iff each of its
/// axes is either equal to the output axis or 1.
fn bc_strides(shape: [usize; 2], out: [usize; 2]) -> Option<(usize, usize)> {
    let sr = if shape[0] == out[0] {
        shape[1]
    } else if shape[0] == 1 {
        0
    } else {
        return None;
    };
    let sc = if shape[1] == out[1] {
        1
    } else if shape[1] == 1 {
        0
    } else {
        return None;
    };
    Some((sr, sc))
}

fn bc_out_shape(a: [usize; 2], b: [usize; 2]) -> Option<[usize; 2]> {
    let r = if a[0] == b[0] || b[0] == 1 {
        a[0].max(b[0])
    } else if a[0] == 1 {
        b[0]
    } else {
        return None;
    };
    let c = if a[1] == b[1] || b[1] == 1 {
        a[1].max(b[1])
    } else if a[1] == 1 {
        b[1]
    } else {
        return None;
    };
    Some([r, c])
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Simulator step boundary marker. Open-loop training never marks steps;
    /// closed-loop rollouts mark one per simulated transition.
    pub fn mark_step(&self) {
        self.step_marks.set(self.step_marks.get() + 1);
    }

    pub fn steps_marked(&self) -> usize {
        self.step_marks.get()
    }

    fn push(&self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len() as u32;
        nodes.push(Node { op, value, grad: None, needs_grad });
        NodeId(id)
    }


    /// Insert a tensor that does not require gradients.
    pub fn constant(&self, t: Tensor) -> NodeId {
        self.push(Op::Leaf { requires_grad: false }, t, false)
    }

    /// Insert a differentiable leaf (a parameter or probe input).
    pub fn leaf(&self, t: Tensor) -> NodeId {
        self.push(Op::Leaf { requires_grad: true }, t, true)
    }

    pub fn shape(&self, id: NodeId) -> [usize; 2] {
        self.nodes.borrow()[id.0 as usize].value.shape()
    }

    pub fn with_value<R>(&self, id: NodeId, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id.0 as usize].value)
    }

    pub fn value(&self, id: NodeId) -> Tensor {
        self.nodes.borrow()[id.0 as usize].value.clone()
    }

    /// Forward value of a 1x1 node.
    pub fn item(&self, id: NodeId) -> f64 {
        self.nodes.borrow()[id.0 as usize].value.item()
    }

    pub fn all_finite(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id.0 as usize].value.all_finite()
    }

    /// Gradient of the last backward pass, if this node received one.
    pub fn grad(&self, id: NodeId) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let n = &nodes[id.0 as usize];
        n.grad
            .as_ref()
            .map(|g| Tensor { shape: n.value.shape(), data: g.clone() })
    }

    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    // ---- elementwise binary ops ------------------------------------------

    fn binary(
        &self,
        a: NodeId,
        b: NodeId,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(NodeId, NodeId) -> Op,
    ) -> AdResult<NodeId> {
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0 as usize].value;
            let tb = &nodes[b.0 as usize].value;
            let out = bc_out_shape(ta.shape(), tb.shape()).ok_or_else(|| {
                AdError::Shape(format!("{name}: {:?} vs {:?}", ta.shape(), tb.shape()))
            })?;
            let (ar, ac) = bc_strides(ta.shape(), out).unwrap();
            let (br, bc) = bc_strides(tb.shape(), out).unwrap();
            let mut data = Vec::with_capacity(out[0] * out[1]);
            for i in 0..out[0] {
                for j in 0..out[1] {
                    data.push(f(ta.data[i * ar + j * ac], tb.data[i * br + j * bc]));
                }
            }
            (
                Tensor { shape: out, data },
                nodes[a.0 as usize].needs_grad || nodes[b.0 as usize].needs_grad,
            )
        };
        Ok(self.push(make(a, b), value, needs))
    }

    pub fn add(&self, a: NodeId, b: NodeId) -> AdResult<NodeId> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, a: NodeId, b: NodeId) -> AdResult<NodeId> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, a: NodeId, b: NodeId) -> AdResult<NodeId> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn div(&self, a: NodeId, b: NodeId) -> AdResult<NodeId> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div)
    }

    /// Elementwise max; the first argument wins ties (and takes the gradient).
    pub fn max_pair(&self, a: NodeId, b: NodeId) -> AdResult<NodeId> {
        self.binary(a, b, "max", |x, y| if x >= y { x } else { y }, Op::MaxPair)
    }

    /// Elementwise min; the first argument wins ties.
    pub fn min_pair(&self, a: NodeId, b: NodeId) -> AdResult<NodeId> {
        self.binary(a, b, "min", |x, y| if x <= y { x } else { y }, Op::MinPair)
    }

    /// Elementwise atan2(y, x); shapes must match exactly.
    pub fn atan2(&self, y: NodeId, x: NodeId) -> AdResult<NodeId> {
        {
            let nodes = self.nodes.borrow();
            let sy = nodes[y.0 as usize].value.shape();
            let sx = nodes[x.0 as usize].value.shape();
            if sy != sx {
                return Err(AdError::Shape(format!("atan2: {sy:?} vs {sx:?}")));
            }
        }
        self.binary(y, x, "atan2", f64::atan2, |y, x| Op::Atan2 { y, x })
    }

    // ---- unary ops --------------------------------------------------------

    fn unary(
        &self,
        a: NodeId,
        f: impl Fn(f64) -> f64,
        make: impl Fn(NodeId) -> Op,
    ) -> NodeId {
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0 as usize].value;
            (
                Tensor { shape: ta.shape(), data: ta.data.iter().map(|&v| f(v)).collect() },
                nodes[a.0 as usize].needs_grad,
            )
        };
        self.push(make(a), value, needs)
    }

    pub fn neg(&self, a: NodeId) -> NodeId {
        self.unary(a, |v| -v, Op::Neg)
    }

    pub fn add_c(&self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, |v| v + c, Op::AddC)
    }

    pub fn mul_c(&self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, |v| v * c, |n| Op::MulC(n, c))
    }

    pub fn exp(&self, a: NodeId) -> NodeId {
        self.unary(a, f64::exp, Op::Exp)
    }

    pub fn log(&self, a: NodeId) -> AdResult<NodeId> {
        {
            let nodes = self.nodes.borrow();
            if nodes[a.0 as usize].value.data.iter().any(|&v| v <= 0.0) {
                return Err(AdError::Domain("log of non-positive value".into()));
            }
        }
        Ok(self.unary(a, f64::ln, Op::Log))
    }

    pub fn sqrt(&self, a: NodeId) -> AdResult<NodeId> {
        {
            let nodes = self.nodes.borrow();
            if nodes[a.0 as usize].value.data.iter().any(|&v| v < 0.0) {
                return Err(AdError::Domain("sqrt of negative value".into()));
            }
        }
        Ok(self.unary(a, f64::sqrt, Op::Sqrt))
    }

    pub fn tanh(&self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh)
    }

    /// relu'(0) = 0 by convention.
    pub fn relu(&self, a: NodeId) -> NodeId {
        self.unary(a, |v| v.max(0.0), Op::Relu)
    }

    pub fn softplus(&self, a: NodeId) -> NodeId {
        self.unary(a, |v| v.max(0.0) + (-v.abs()).exp().ln_1p(), Op::Softplus)
    }

    pub fn sigmoid(&self, a: NodeId) -> NodeId {
        self.unary(a, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid)
    }

    pub fn sin(&self, a: NodeId) -> NodeId {
        self.unary(a, f64::sin, Op::Sin)
    }

    pub fn cos(&self, a: NodeId) -> NodeId {
        self.unary(a, f64::cos, Op::Cos)
    }

    /// Saturating clamp; the gradient is zero at and beyond the boundaries.
    pub fn clamp(&self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(a, |v| v.clamp(lo, hi), |n| Op::Clamp { input: n, lo, hi })
    }

    // ---- linear algebra ----------------------------------------------------

    pub fn matmul(&self, a: NodeId, b: NodeId) -> AdResult<NodeId> {
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0 as usize].value;
            let tb = &nodes[b.0 as usize].value;
            if ta.cols() != tb.rows() {
                return Err(AdError::Shape(format!(
                    "matmul: {:?} x {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
            (
                matmul_nn(ta, tb),
                nodes[a.0 as usize].needs_grad || nodes[b.0 as usize].needs_grad,
            )
        };
        Ok(self.push(Op::Matmul(a, b), value, needs))
    }

    pub fn transpose(&self, a: NodeId) -> NodeId {
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0 as usize].value;
            let (r, c) = (ta.rows(), ta.cols());
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    data[j * r + i] = ta.data[i * c + j];
                }
            }
            (Tensor { shape: [c, r], data }, nodes[a.0 as usize].needs_grad)
        };
        self.push(Op::Transpose(a), value, needs)
    }

    // ---- reductions --------------------------------------------------------

    fn reduce(
        &self,
        a: NodeId,
        axis: Option<usize>,
        mean: bool,
        make: impl Fn(NodeId, Option<usize>) -> Op,
    ) -> AdResult<NodeId> {
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0 as usize].value;
            let (r, c) = (ta.rows(), ta.cols());
            let value = match axis {
                None => {
                    let s: f64 = ta.data.iter().sum();
                    Tensor::scalar(if mean { s / ta.len() as f64 } else { s })
                }
                Some(0) => {
                    let mut out = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            out[j] += ta.data[i * c + j];
                        }
                    }
                    if mean {
                        out.iter_mut().for_each(|v| *v /= r as f64);
                    }
                    Tensor { shape: [1, c], data: out }
                }
                Some(1) => {
                    let mut out = vec![0.0; r];
                    for i in 0..r {
                        out[i] = ta.data[i * c..(i + 1) * c].iter().sum();
                    }
                    if mean {
                        out.iter_mut().for_each(|v| *v /= c as f64);
                    }
                    Tensor { shape: [r, 1], data: out }
                }
                Some(ax) => return Err(AdError::Shape(format!("reduce axis {ax} out of range"))),
            };
            (value, nodes[a.0 as usize].needs_grad)
        };
        Ok(self.push(make(a, axis), value, needs))
    }

    pub fn sum(&self, a: NodeId) -> NodeId {
        self.reduce(a, None, false, Op::Sum).expect("axis is valid")
    }

    pub fn sum_axis(&self, a: NodeId, axis: usize) -> AdResult<NodeId> {
        self.reduce(a, Some(axis), false, Op::Sum)
    }

    pub fn mean(&self, a: NodeId) -> NodeId {
        self.reduce(a, None, true, Op::Mean).expect("axis is valid")
    }

    pub fn mean_axis(&self, a: NodeId, axis: usize) -> AdResult<NodeId> {
        self.reduce(a, Some(axis), true, Op::Mean)
    }

    /// Column-wise max over rows; ties resolve to the lowest row index.
    pub fn max_axis0(&self, a: NodeId) -> NodeId {
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0 as usize].value;
            let (r, c) = (ta.rows(), ta.cols());
            let mut out = ta.data[0..c].to_vec();
            for i in 1..r {
                for j in 0..c {
                    if ta.data[i * c + j] > out[j] {
                        out[j] = ta.data[i * c + j];
                    }
                }
            }
            (Tensor { shape: [1, c], data: out }, nodes[a.0 as usize].needs_grad)
        };
        self.push(Op::MaxAxis0(a), value, needs)
    }

    // ---- structure ----------------------------------------------------------

    pub fn concat(&self, parts: &[NodeId], axis: usize) -> AdResult<NodeId> {
        if parts.is_empty() {
            return Err(AdError::Contract("concat of zero tensors".into()));
        }
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let first = nodes[parts[0].0 as usize].value.shape();
            let mut needs = false;
            let value = match axis {
                0 => {
                    let c = first[1];
                    let mut data = Vec::new();
                    let mut rows = 0;
                    for p in parts {
                        let t = &nodes[p.0 as usize].value;
                        if t.cols() != c {
                            return Err(AdError::Shape(format!(
                                "concat axis 0: cols {} vs {}",
                                t.cols(),
                                c
                            )));
                        }
                        rows += t.rows();
                        data.extend_from_slice(&t.data);
                        needs |= nodes[p.0 as usize].needs_grad;
                    }
                    Tensor { shape: [rows, c], data }
                }
                1 => {
                    let r = first[0];
                    let mut cols = 0;
                    for p in parts {
                        let t = &nodes[p.0 as usize].value;
                        if t.rows() != r {
                            return Err(AdError::Shape(format!(
                                "concat axis 1: rows {} vs {}",
                                t.rows(),
                                r
                            )));
                        }
                        cols += t.cols();
                        needs |= nodes[p.0 as usize].needs_grad;
                    }
                    let mut data = Vec::with_capacity(r * cols);
                    for i in 0..r {
                        for p in parts {
                            let t = &nodes[p.0 as usize].value;
                            data.extend_from_slice(&t.data[i * t.cols()..(i + 1) * t.cols()]);
                        }
                    }
                    Tensor { shape: [r, cols], data }
                }
                ax => return Err(AdError::Shape(format!("concat axis {ax} out of range"))),
            };
            (value, needs)
        };
        Ok(self.push(Op::Concat(parts.to_vec(), axis), value, needs))
    }

    pub fn slice(&self, a: NodeId, axis: usize, start: usize, end: usize) -> AdResult<NodeId> {
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0 as usize].value;
            let (r, c) = (ta.rows(), ta.cols());
            let bound = if axis == 0 { r } else { c };
            if axis > 1 || start >= end || end > bound {
                return Err(AdError::Shape(format!(
                    "slice axis {axis} range {start}..{end} of {:?}",
                    ta.shape()
                )));
            }
            let value = if axis == 0 {
                Tensor {
                    shape: [end - start, c],
                    data: ta.data[start * c..end * c].to_vec(),
                }
            } else {
                let mut data = Vec::with_capacity(r * (end - start));
                for i in 0..r {
                    data.extend_from_slice(&ta.data[i * c + start..i * c + end]);
                }
                Tensor { shape: [r, end - start], data }
            };
            (value, nodes[a.0 as usize].needs_grad)
        };
        Ok(self.push(Op::Slice { input: a, axis, start }, value, needs))
    }

    pub fn softmax(&self, a: NodeId, axis: usize) -> AdResult<NodeId> {
        if axis > 1 {
            return Err(AdError::Shape(format!("softmax axis {axis} out of range")));
        }
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0 as usize].value;
            (softmax_forward(ta, axis), nodes[a.0 as usize].needs_grad)
        };
        Ok(self.push(Op::Softmax { input: a, axis }, value, needs))
    }

    // ---- backward -----------------------------------------------------------

    /// Reverse pass from a scalar root. Gradients of `requires_grad` leaves
    /// accumulate across calls; other nodes are overwritten. `zero_grad`
    /// followed by `backward` reproduces identical gradients.
    pub fn backward(&self, root: NodeId) -> AdResult<()> {
        let mut grads: Vec<Option<Vec<f64>>>;
        {
            let nodes = self.nodes.borrow();
            let r = root.0 as usize;
            if nodes[r].value.len() != 1 {
                return Err(AdError::Contract(format!(
                    "backward root must be a scalar, got shape {:?}",
                    nodes[r].value.shape()
                )));
            }
            grads = vec![None; r + 1];
            grads[r] = Some(vec![1.0]);
            for i in (0..=r).rev() {
                if grads[i].is_none() || !nodes[i].needs_grad {
                    continue;
                }
                let (lower, upper) = grads.split_at_mut(i);
                let g = upper[0].as_ref().expect("checked above");
                backprop_node(&nodes, i, g, lower);
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        for (i, slot) in grads.into_iter().enumerate() {
            let Some(g) = slot else { continue };
            let node = &mut nodes[i];
            let is_acc_leaf =
                matches!(node.op, Op::Leaf { requires_grad: true });
            match (&mut node.grad, is_acc_leaf) {
                (Some(existing), true) => {
                    for (e, v) in existing.iter_mut().zip(&g) {
                        *e += v;
                    }
                }
                (slot, _) => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn matmul_nn(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for kk in 0..k {
            let av = a.data[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[kk * n..(kk + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor { shape: [m, n], data: out }
}

fn softmax_forward(t: &Tensor, axis: usize) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    let mut data = vec![0.0; r * c];
    if axis == 1 {
        for i in 0..r {
            let row = &t.data[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for j in 0..c {
                let e = (row[j] - m).exp();
                data[i * c + j] = e;
                s += e;
            }
            for j in 0..c {
                data[i * c + j] /= s;
            }
        }
    } else {
        for j in 0..c {
            let mut m = f64::NEG_INFINITY;
            for i in 0..r {
                m = m.max(t.data[i * c + j]);
            }
            let mut s = 0.0;
            for i in 0..r {
                let e = (t.data[i * c + j] - m).exp();
                data[i * c + j] = e;
                s += e;
            }
            for i in 0..r {
                data[i * c + j] /= s;
            }
        }
    }
    Tensor { shape: [r, c], data }
}

/// Accumulate `per_out(out_index) * upstream[out_index]` into the gradient of
/// an input with broadcast shape `in_shape`.
fn acc_bc(
    slot: &mut Option<Vec<f64>>,
    in_shape: [usize; 2],
    out_shape: [usize; 2],
    upstream: &[f64],
    local: impl Fn(usize) -> f64,
) {
    let g = slot.get_or_insert_with(|| vec![0.0; in_shape[0] * in_shape[1]]);
    let (sr, sc) = bc_strides(in_shape, out_shape).expect("validated at construction");
    let oc = out_shape[1];
    for i in 0..out_shape[0] {
        for j in 0..oc {
            let o = i * oc + j;
            g[i * sr + j * sc] += local(o) * upstream[o];
        }
    }
}

fn acc_same(slot: &mut Option<Vec<f64>>, len: usize, f: impl Fn(usize) -> f64) {
    let g = slot.get_or_insert_with(|| vec![0.0; len]);
    for (k, gv) in g.iter_mut().enumerate() {
        *gv += f(k);
    }
}

#[allow(clippy::too_many_lines)]
fn backprop_node(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out_shape = nodes[i].value.shape();
    let val = |id: NodeId| -> &Tensor { &nodes[id.0 as usize].value };
    let live = |id: NodeId| nodes[id.0 as usize].needs_grad;
    match &nodes[i].op {
        Op::Leaf { .. } => {}
        Op::Add(a, b) => {
            if live(*a) {
                acc_bc(&mut grads[a.0 as usize], val(*a).shape(), out_shape, g, |_| 1.0);
            }
            if live(*b) {
                acc_bc(&mut grads[b.0 as usize], val(*b).shape(), out_shape, g, |_| 1.0);
            }
        }
        Op::Sub(a, b) => {
            if live(*a) {
                acc_bc(&mut grads[a.0 as usize], val(*a).shape(), out_shape, g, |_| 1.0);
            }
            if live(*b) {
                acc_bc(&mut grads[b.0 as usize], val(*b).shape(), out_shape, g, |_| -1.0);
            }
        }
        Op::Mul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (asr, asc) = bc_strides(ta.shape(), out_shape).unwrap();
            let (bsr, bsc) = bc_strides(tb.shape(), out_shape).unwrap();
            let oc = out_shape[1];
            if live(*a) {
                acc_bc(&mut grads[a.0 as usize], ta.shape(), out_shape, g, |o| {
                    let (r, c) = (o / oc, o % oc);
                    tb.data[r * bsr + c * bsc]
                });
            }
            if live(*b) {
                acc_bc(&mut grads[b.0 as usize], tb.shape(), out_shape, g, |o| {
                    let (r, c) = (o / oc, o % oc);
                    ta.data[r * asr + c * asc]
                });
            }
        }
        Op::Div(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (asr, asc) = bc_strides(ta.shape(), out_shape).unwrap();
            let (bsr, bsc) = bc_strides(tb.shape(), out_shape).unwrap();
            let oc = out_shape[1];
            if live(*a) {
                acc_bc(&mut grads[a.0 as usize], ta.shape(), out_shape, g, |o| {
                    let (r, c) = (o / oc, o % oc);
                    1.0 / tb.data[r * bsr + c * bsc]
                });
            }
            if live(*b) {
                acc_bc(&mut grads[b.0 as usize], tb.shape(), out_shape, g, |o| {
                    let (r, c) = (o / oc, o % oc);
                    let bv = tb.data[r * bsr + c * bsc];
                    -ta.data[r * asr + c * asc] / (bv * bv)
                });
            }
        }
        Op::MaxPair(a, b) | Op::MinPair(a, b) => {
            let is_max = matches!(nodes[i].op, Op::MaxPair(..));
            let (ta, tb) = (val(*a), val(*b));
            let (asr, asc) = bc_strides(ta.shape(), out_shape).unwrap();
            let (bsr, bsc) = bc_strides(tb.shape(), out_shape).unwrap();
            let oc = out_shape[1];
            let a_wins = move |o: usize| {
                let (r, c) = (o / oc, o % oc);
                let (x, y) = (ta.data[r * asr + c * asc], tb.data[r * bsr + c * bsc]);
                if is_max {
                    x >= y
                } else {
                    x <= y
                }
            };
            if live(*a) {
                acc_bc(&mut grads[a.0 as usize], ta.shape(), out_shape, g, |o| {
                    if a_wins(o) {
                        1.0
                    } else {
                        0.0
                    }
                });
            }
            if live(*b) {
                acc_bc(&mut grads[b.0 as usize], tb.shape(), out_shape, g, |o| {
                    if a_wins(o) {
                        0.0
                    } else {
                        1.0
                    }
                });
            }
        }
        Op::Atan2 { y, x } => {
            let (ty, tx) = (val(*y), val(*x));
            if live(*y) {
                acc_bc(&mut grads[y.0 as usize], ty.shape(), out_shape, g, |o| {
                    let d = tx.data[o] * tx.data[o] + ty.data[o] * ty.data[o];
                    tx.data[o] / d
                });
            }
            if live(*x) {
                acc_bc(&mut grads[x.0 as usize], tx.shape(), out_shape, g, |o| {
                    let d = tx.data[o] * tx.data[o] + ty.data[o] * ty.data[o];
                    -ty.data[o] / d
                });
            }
        }
        Op::Neg(a) => {
            if live(*a) {
                acc_same(&mut grads[a.0 as usize], g.len(), |k| -g[k]);
            }
        }
        Op::AddC(a) => {
            if live(*a) {
                acc_same(&mut grads[a.0 as usize], g.len(), |k| g[k]);
            }
        }
        Op::MulC(a, c) => {
            if live(*a) {
                acc_same(&mut grads[a.0 as usize], g.len(), |k| c * g[k]);
            }
        }
        Op::Exp(a) => {
            let out = &nodes[i].value;
            if live(*a) {
                acc_same(&mut grads[a.0 as usize], g.len(), |k| out.data[k] * g[k]);
            }
        }
        Op::Log(a) => {
            let ta = val(*a);
            if live(*a) {
                acc_same(&mut grads[a.0 as usize], g.len(), |k| g[k] / ta.data[k]);
            }
        }
        Op::Sqrt(a) => {
            let out = &nodes[i].value;
            if live(*a) {
                acc_same(&mut grads[a.0 as usize], g.len(), |k| g[k] / (2.0 * out.data[k]));
            }
        }
        Op::Tanh(a) => {
            let out = &nodes[i].value;
            if live(*a) {
                acc_same(&mut grads[a.0 as usize], g.len(), |k| {
                    (1.0 - out.data[k] * out.data[k]) * g[k]
                });
            }
        }
        Op::Relu(a) => {
            let ta = val(*a);
            if live(*a) {
                acc_same(&mut grads[a.0 as usize], g.len(), |k| {
                    if ta.data[k] > 0.0 {
                        g[k]
                    } else {
                        0.0
                    }
                });
            }
        }
        Op::Softplus(a) => {
            let ta = val(*a);
            if live(*a) {
                acc_same(&mut grads[a.0 as usize], g.len(), |k| {
                    g[k] / (1.0 + (-ta.data[k]).exp())
                });
            }
        }
        Op::Sigmoid(a) => {
            let out = &nodes[i].value;
            if live(*a) {
                acc_same(&mut grads[a.0 as usize], g.len(), |k| {
                    out.data[k] * (1.0 - out.data[k]) * g[k]
                });
            }
        }
        Op::Sin(a) => {
            let ta = val(*a);
            if live(*a) {
                acc_same(&mut grads[a.0 as usize], g.len(), |k| ta.data[k].cos() * g[k]);
            }
        }
        Op::Cos(a) => {
            let ta = val(*a);
            if live(*a) {
                acc_same(&mut grads[a.0 as usize], g.len(), |k| -ta.data[k].sin() * g[k]);
            }
        }
        Op::Clamp { input, lo, hi } => {
            let ta = val(*input);
            if live(*input) {
                acc_same(&mut grads[input.0 as usize], g.len(), |k| {
                    if ta.data[k] > *lo && ta.data[k] < *hi {
                        g[k]
                    } else {
                        0.0
                    }
                });
            }
        }
        Op::Matmul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
            if live(*a) {
                // dA = dC @ B^T
                let ga = grads[a.0 as usize].get_or_insert_with(|| vec![0.0; m * k]);
                for i2 in 0..m {
                    for j in 0..n {
                        let gv = g[i2 * n + j];
                        if gv == 0.0 {
                            continue;
                        }
                        for kk in 0..k {
                            ga[i2 * k + kk] += gv * tb.data[kk * n + j];
                        }
                    }
                }
            }
            if live(*b) {
                // dB = A^T @ dC
                let gb = grads[b.0 as usize].get_or_insert_with(|| vec![0.0; k * n]);
                for i2 in 0..m {
                    for kk in 0..k {
                        let av = ta.data[i2 * k + kk];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            gb[kk * n + j] += av * g[i2 * n + j];
                        }
                    }
                }
            }
        }
        Op::Transpose(a) => {
            let ta = val(*a);
            let (r, c) = (ta.rows(), ta.cols());
            if live(*a) {
                let ga = grads[a.0 as usize].get_or_insert_with(|| vec![0.0; r * c]);
                for i2 in 0..r {
                    for j in 0..c {
                        ga[i2 * c + j] += g[j * r + i2];
                    }
                }
            }
        }
        Op::Sum(a, axis) | Op::Mean(a, axis) => {
            let ta = val(*a);
            let (r, c) = (ta.rows(), ta.cols());
            let scale = if matches!(nodes[i].op, Op::Mean(..)) {
                match axis {
                    None => 1.0 / (r * c) as f64,
                    Some(0) => 1.0 / r as f64,
                    Some(_) => 1.0 / c as f64,
                }
            } else {
                1.0
            };
            if live(*a) {
                acc_same(&mut grads[a.0 as usize], r * c, |k| {
                    let up = match axis {
                        None => g[0],
                        Some(0) => g[k % c],
                        Some(_) => g[k / c],
                    };
                    up * scale
                });
            }
        }
        Op::MaxAxis0(a) => {
            let ta = val(*a);
            let (r, c) = (ta.rows(), ta.cols());
            if live(*a) {
                let ga = grads[a.0 as usize].get_or_insert_with(|| vec![0.0; r * c]);
                for j in 0..c {
                    let mut best = 0;
                    for i2 in 1..r {
                        if ta.data[i2 * c + j] > ta.data[best * c + j] {
                            best = i2;
                        }
                    }
                    ga[best * c + j] += g[j];
                }
            }
        }
        Op::Concat(parts, axis) => {
            let oc = out_shape[1];
            if *axis == 0 {
                let mut row0 = 0;
                for p in parts {
                    let t = val(*p);
                    let (r, c) = (t.rows(), t.cols());
                    if live(*p) {
                        let gp = grads[p.0 as usize].get_or_insert_with(|| vec![0.0; r * c]);
                        for (k, gv) in gp.iter_mut().enumerate() {
                            *gv += g[row0 * c + k];
                        }
                    }
                    row0 += r;
                }
            } else {
                let mut col0 = 0;
                for p in parts {
                    let t = val(*p);
                    let (r, c) = (t.rows(), t.cols());
                    if live(*p) {
                        let gp = grads[p.0 as usize].get_or_insert_with(|| vec![0.0; r * c]);
                        for i2 in 0..r {
                            for j in 0..c {
                                gp[i2 * c + j] += g[i2 * oc + col0 + j];
                            }
                        }
                    }
                    col0 += c;
                }
            }
        }
        Op::Slice { input, axis, start } => {
            let ta = val(*input);
            let (r, c) = (ta.rows(), ta.cols());
            if live(*input) {
                let gi = grads[input.0 as usize].get_or_insert_with(|| vec![0.0; r * c]);
                let (or, ocs) = (out_shape[0], out_shape[1]);
                for i2 in 0..or {
                    for j in 0..ocs {
                        let (si, sj) = if *axis == 0 {
                            (start + i2, j)
                        } else {
                            (i2, start + j)
                        };
                        gi[si * c + sj] += g[i2 * ocs + j];
                    }
                }
            }
        }
        Op::Softmax { input, axis } => {
            let out = &nodes[i].value;
            let (r, c) = (out.rows(), out.cols());
            if live(*input) {
                let gi = grads[input.0 as usize].get_or_insert_with(|| vec![0.0; r * c]);
                if *axis == 1 {
                    for i2 in 0..r {
                        let y = &out.data[i2 * c..(i2 + 1) * c];
                        let gy = &g[i2 * c..(i2 + 1) * c];
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gi[i2 * c + j] += y[j] * (gy[j] - dot);
                        }
                    }
                } else {
                    for j in 0..c {
                        let mut dot = 0.0;
                        for i2 in 0..r {
                            dot += out.data[i2 * c + j] * g[i2 * c + j];
                        }
                        for i2 in 0..r {
                            gi[i2 * c + j] += out.data[i2 * c + j] * (g[i2 * c + j] - dot);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf_row(g: &Graph, v: &[f64]) -> NodeId {
        g.leaf(Tensor::row(v.to_vec()))
    }

    #[test]
    fn matmul_identity() {
        let g = Graph::new();
        let a = g.constant(Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let i = g.constant(Tensor::eye(2));
        let c = g.matmul(a, i).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn softmax_symmetry() {
        let g = Graph::new();
        let x = g.constant(Tensor::row(vec![0.0, 0.0]));
        let y = g.softmax(x, 1).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn clamp_saturates() {
        let g = Graph::new();
        let x = g.constant(Tensor::scalar(12.3));
        let y = g.clamp(x, 0.0, 10.0);
        assert_eq!(g.item(y), 10.0);
    }

    #[test]
    fn square_gradient() {
        let g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        let g = Graph::new();
        let x = leaf_row(&g, &[0.3, -1.2, 2.0]);
        let s = g.softmax(x, 1).unwrap();
        let l = g.sum(s);
        g.backward(l).unwrap();
        for v in g.grad(x).unwrap().data() {
            assert!(v.abs() < 1e-12, "grad {v}");
        }
    }

    #[test]
    fn clamp_gradient_beyond_boundary_is_zero() {
        let g = Graph::new();
        let x = g.leaf(Tensor::scalar(12.0));
        let y = g.clamp(x, 0.0, 10.0);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 0.0);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let g = Graph::new();
        let x = leaf_row(&g, &[1.0, 2.0]);
        assert!(matches!(g.backward(x), Err(AdError::Contract(_))));
    }

    #[test]
    fn branch_gradients_accumulate() {
        // L = x*x + 3x used in two branches: dL/dx = 2x + 3.
        let g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let sq = g.mul(x, x).unwrap();
        let tr = g.mul_c(x, 3.0);
        let l = g.add(sq, tr).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 7.0);

        // Single-branch runs for comparison.
        let g2 = Graph::new();
        let x2 = g2.leaf(Tensor::scalar(2.0));
        let sq2 = g2.mul(x2, x2).unwrap();
        g2.backward(sq2).unwrap();
        let g3 = Graph::new();
        let x3 = g3.leaf(Tensor::scalar(2.0));
        let tr3 = g3.mul_c(x3, 3.0);
        g3.backward(tr3).unwrap();
        assert_eq!(
            g2.grad(x2).unwrap().item() + g3.grad(x3).unwrap().item(),
            7.0
        );
    }

    #[test]
    fn repeated_backward_after_zero_grad_is_identical() {
        let g = Graph::new();
        let x = leaf_row(&g, &[0.5, -1.5, 2.5]);
        let e = g.exp(x);
        let l = g.sum(e);
        g.backward(l).unwrap();
        let first = g.grad(x).unwrap();
        g.zero_grad();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), first);
    }

    #[test]
    fn leaf_gradients_accumulate_across_backward_calls() {
        let g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 12.0);
    }

    #[test]
    fn log_of_negative_is_domain_error() {
        let g = Graph::new();
        let x = g.constant(Tensor::scalar(-1.0));
        assert!(matches!(g.log(x), Err(AdError::Domain(_))));
        assert!(matches!(g.sqrt(x), Err(AdError::Domain(_))));
    }

    #[test]
    fn shape_mismatch_is_shape_error() {
        let g = Graph::new();
        let a = g.constant(Tensor::row(vec![1.0, 2.0]));
        let b = g.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        assert!(matches!(g.add(a, b), Err(AdError::Shape(_))));
        let m = g.constant(Tensor::zeros(3, 2));
        assert!(matches!(g.matmul(a, m), Err(AdError::Shape(_))));
    }

    #[test]
    fn row_and_col_broadcast() {
        let g = Graph::new();
        let m = g.constant(Tensor::new(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let row = g.constant(Tensor::row(vec![10., 20., 30.]));
        let s = g.add(m, row).unwrap();
        assert_eq!(g.value(s).data(), &[11., 22., 33., 14., 25., 36.]);
        let col = g.constant(Tensor::new(2, 1, vec![100., 200.]).unwrap());
        let s2 = g.add(m, col).unwrap();
        assert_eq!(g.value(s2).data(), &[101., 102., 103., 204., 205., 206.]);
    }

    #[test]
    fn max_pair_first_argument_wins_ties() {
        let g = Graph::new();
        let a = g.leaf(Tensor::scalar(1.0));
        let b = g.leaf(Tensor::scalar(1.0));
        let m = g.max_pair(a, b).unwrap();
        g.backward(m).unwrap();
        assert_eq!(g.grad(a).unwrap().item(), 1.0);
        assert_eq!(g.grad(b).unwrap().item(), 0.0);
    }

    #[test]
    fn determinism_bitwise() {
        let run = || {
            let g = Graph::new();
            let x = leaf_row(&g, &[0.1, 0.7, -0.3, 1.9]);
            let w = g.constant(Tensor::new(4, 4, (0..16).map(|i| (i as f64) * 0.13 - 1.0).collect()).unwrap());
            let h = g.matmul(x, w).unwrap();
            let t = g.tanh(h);
            let s = g.softmax(t, 1).unwrap();
            let l = g.mean(s);
            g.backward(l).unwrap();
            (g.value(l).item(), g.grad(x).unwrap().data().to_vec())
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1.to_bits(), v2.to_bits());
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
