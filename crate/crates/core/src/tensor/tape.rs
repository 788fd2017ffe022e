use std::cell::{Cell, RefCell};

use super::{axis_split, Tensor};
use crate::error::{Error, Result};

/// Recorded operation. Parents are node indices, always smaller than the
/// index of the node holding the op, so the graph is acyclic by construction.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Matmul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Narrow { src: usize, axis: usize, start: usize },
    GatherRows { src: usize, index: Vec<usize> },
    Sum { src: usize, axis: usize },
    SumAll(usize),
    Mean { src: usize, axis: usize },
    MeanAll(usize),
    Exp(usize),
    Log(usize),
    Relu(usize),
    Tanh(usize),
    Sqrt(usize),
    Sigmoid(usize),
    Softplus(usize),
    Abs(usize),
    ClampMin { src: usize, min: f64 },
    Huber { src: usize, delta: f64 },
    Softmax { src: usize, axis: usize },
    SqDistRows(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records one forward pass for a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// d loss / d var. Unreachable values get a zero tensor of their shape.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match &self.grads[var.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.id]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// Leaf with no gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, kernel: &'static str) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(Error::Numeric { kernel });
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents(&op).iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let first = nodes[parts[0].id].value.shape().to_vec();
            if axis >= first.len() {
                return Err(Error::dim("concat", &first, &[axis]));
            }
            let mut out_shape = first.clone();
            out_shape[axis] = 0;
            for p in parts {
                let s = nodes[p.id].value.shape();
                let compatible = s.len() == first.len()
                    && s.iter()
                        .zip(&first)
                        .enumerate()
                        .all(|(i, (a, b))| i == axis || a == b);
                if !compatible {
                    return Err(Error::dim("concat", &first, s));
                }
                out_shape[axis] += s[axis];
            }
            let (outer, total, inner) = axis_split(&out_shape, axis);
            let mut data = vec![0.0; outer * total * inner];
            let mut offset = 0;
            for p in parts {
                let v = &nodes[p.id].value;
                let ext = v.shape()[axis];
                for o in 0..outer {
                    let src = &v.data()[o * ext * inner..(o + 1) * ext * inner];
                    let dst = o * total * inner + offset * inner;
                    data[dst..dst + ext * inner].copy_from_slice(src);
                }
                offset += ext;
            }
            Tensor::new(out_shape, data)?
        };
        self.push(
            value,
            Op::Concat {
                parts: parts.iter().map(|p| p.id).collect(),
                axis,
            },
            "concat",
        )
    }

    /// Reverse sweep from a scalar loss. A tape can be swept once.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if self.consumed.get() {
            return Err(Error::State("backward already run on this tape".into()));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Err(Error::Contract("loss does not depend on any tracked value".into()));
        }
        self.consumed.set(true);

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            propagate(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.filter(|_| nodes[id].requires_grad)
                    .map(|g| Tensor::new(nodes[id].value.shape().to_vec(), g).expect("grad shape"))
            })
            .chain(std::iter::repeat_with(|| None))
            .take(nodes.len())
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

fn parents(op: &Op) -> Vec<usize> {
    use Op::*;
    match op {
        Leaf => vec![],
        Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Matmul(a, b) | SqDistRows(a, b) => {
            vec![*a, *b]
        }
        Concat { parts, .. } => parts.clone(),
        Scale(a, _) | AddScalar(a) | Transpose(a) | Reshape(a) | SumAll(a) | MeanAll(a)
        | Exp(a) | Log(a) | Relu(a) | Tanh(a) | Sqrt(a) | Sigmoid(a) | Softplus(a) | Abs(a) => {
            vec![*a]
        }
        Narrow { src, .. }
        | GatherRows { src, .. }
        | Sum { src, .. }
        | Mean { src, .. }
        | ClampMin { src, .. }
        | Huber { src, .. }
        | Softmax { src, .. } => vec![*src],
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, contrib: Vec<f64>) {
    match &mut grads[id] {
        Some(g) => g.iter_mut().zip(contrib).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(contrib),
    }
}

/// Sums `g` down to one element when `target` was broadcast as a scalar.
fn unbroadcast(g: &[f64], target_len: usize) -> Vec<f64> {
    if target_len == g.len() {
        g.to_vec()
    } else {
        vec![g.iter().sum()]
    }
}

fn elementwise_grad(g: &[f64], f: impl Fn(usize) -> f64) -> Vec<f64> {
    g.iter().enumerate().map(|(i, gi)| gi * f(i)).collect()
}

fn propagate(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    let needs = |i: usize| nodes[i].requires_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, unbroadcast(g, val(*a).numel()));
            }
            if needs(*b) {
                accumulate(grads, *b, unbroadcast(g, val(*b).numel()));
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, unbroadcast(g, val(*a).numel()));
            }
            if needs(*b) {
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                accumulate(grads, *b, unbroadcast(&neg, val(*b).numel()));
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a).data(), val(*b).data());
            let pick = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
            if needs(*a) {
                let c = elementwise_grad(g, |i| pick(vb, i));
                accumulate(grads, *a, unbroadcast(&c, va.len()));
            }
            if needs(*b) {
                let c = elementwise_grad(g, |i| pick(va, i));
                accumulate(grads, *b, unbroadcast(&c, vb.len()));
            }
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(*a).data(), val(*b).data());
            let pick = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
            if needs(*a) {
                let c = elementwise_grad(g, |i| 1.0 / pick(vb, i));
                accumulate(grads, *a, unbroadcast(&c, va.len()));
            }
            if needs(*b) {
                let c = elementwise_grad(g, |i| {
                    let d = pick(vb, i);
                    -pick(va, i) / (d * d)
                });
                accumulate(grads, *b, unbroadcast(&c, vb.len()));
            }
        }
        Op::Scale(a, c) => accumulate(grads, *a, g.iter().map(|x| x * c).collect()),
        Op::AddScalar(a) => accumulate(grads, *a, g.to_vec()),
        Op::Matmul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
            if needs(*a) {
                // dA = G · Bᵀ
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &vb.data()[p * n..(p + 1) * n];
                        da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                accumulate(grads, *a, da);
            }
            if needs(*b) {
                // dB = Aᵀ · G
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = va.data()[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        let dst = &mut db[p * n..(p + 1) * n];
                        dst.iter_mut().zip(grow).for_each(|(d, x)| *d += aip * x);
                    }
                }
                accumulate(grads, *b, db);
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (out.shape()[0], out.shape()[1]);
            accumulate(grads, *a, transpose_data(g, r, c));
        }
        Op::Reshape(a) => accumulate(grads, *a, g.to_vec()),
        Op::Concat { parts, axis } => {
            let (outer, total, inner) = axis_split(out.shape(), *axis);
            let mut offset = 0;
            for &p in parts {
                let ext = val(p).shape()[*axis];
                if needs(p) {
                    let mut c = Vec::with_capacity(outer * ext * inner);
                    for o in 0..outer {
                        let start = o * total * inner + offset * inner;
                        c.extend_from_slice(&g[start..start + ext * inner]);
                    }
                    accumulate(grads, p, c);
                }
                offset += ext;
            }
        }
        Op::Narrow { src, axis, start } => {
            let (outer, total, inner) = axis_split(val(*src).shape(), *axis);
            let len = out.shape()[*axis];
            let mut c = vec![0.0; outer * total * inner];
            for o in 0..outer {
                let dst = o * total * inner + start * inner;
                c[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            accumulate(grads, *src, c);
        }
        Op::GatherRows { src, index } => {
            let cols = out.shape()[1];
            let mut c = vec![0.0; val(*src).numel()];
            for (r, &i) in index.iter().enumerate() {
                let dst = &mut c[i * cols..(i + 1) * cols];
                dst.iter_mut()
                    .zip(&g[r * cols..(r + 1) * cols])
                    .for_each(|(d, x)| *d += x);
            }
            accumulate(grads, *src, c);
        }
        Op::Sum { src, axis } | Op::Mean { src, axis } => {
            let (outer, ext, inner) = axis_split(val(*src).shape(), *axis);
            let scale = if matches!(nodes[id].op, Op::Mean { .. }) {
                1.0 / ext as f64
            } else {
                1.0
            };
            let mut c = vec![0.0; outer * ext * inner];
            for o in 0..outer {
                for e in 0..ext {
                    for i in 0..inner {
                        c[(o * ext + e) * inner + i] = g[o * inner + i] * scale;
                    }
                }
            }
            accumulate(grads, *src, c);
        }
        Op::SumAll(a) => accumulate(grads, *a, vec![g[0]; val(*a).numel()]),
        Op::MeanAll(a) => {
            let n = val(*a).numel();
            accumulate(grads, *a, vec![g[0] / n as f64; n]);
        }
        Op::Exp(a) => accumulate(grads, *a, elementwise_grad(g, |i| out.data()[i])),
        Op::Log(a) => {
            let x = val(*a).data();
            accumulate(grads, *a, elementwise_grad(g, |i| 1.0 / x[i]));
        }
        Op::Relu(a) => {
            let x = val(*a).data();
            accumulate(grads, *a, elementwise_grad(g, |i| if x[i] > 0.0 { 1.0 } else { 0.0 }));
        }
        Op::Tanh(a) => {
            let y = out.data();
            accumulate(grads, *a, elementwise_grad(g, |i| 1.0 - y[i] * y[i]));
        }
        Op::Sqrt(a) => {
            let y = out.data();
            accumulate(grads, *a, elementwise_grad(g, |i| 0.5 / y[i]));
        }
        Op::Sigmoid(a) => {
            let y = out.data();
            accumulate(grads, *a, elementwise_grad(g, |i| y[i] * (1.0 - y[i])));
        }
        Op::Softplus(a) => {
            let x = val(*a).data();
            accumulate(grads, *a, elementwise_grad(g, |i| sigmoid(x[i])));
        }
        Op::Abs(a) => {
            let x = val(*a).data();
            accumulate(grads, *a, elementwise_grad(g, |i| sign(x[i])));
        }
        Op::ClampMin { src, min } => {
            let x = val(*src).data();
            accumulate(grads, *src, elementwise_grad(g, |i| if x[i] > *min { 1.0 } else { 0.0 }));
        }
        Op::Huber { src, delta } => {
            let x = val(*src).data();
            accumulate(grads, *src, elementwise_grad(g, |i| x[i].clamp(-delta, *delta)));
        }
        Op::Softmax { src, axis } => {
            let (outer, ext, inner) = axis_split(out.shape(), *axis);
            let y = out.data();
            let mut c = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |e: usize| (o * ext + e) * inner + i;
                    let dot: f64 = (0..ext).map(|e| g[idx(e)] * y[idx(e)]).sum();
                    for e in 0..ext {
                        c[idx(e)] = y[idx(e)] * (g[idx(e)] - dot);
                    }
                }
            }
            accumulate(grads, *src, c);
        }
        Op::SqDistRows(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let cols = va.shape()[1];
            let diff: Vec<f64> = va
                .data()
                .iter()
                .zip(vb.data())
                .enumerate()
                .map(|(i, (x, y))| 2.0 * (x - y) * g[i / cols])
                .collect();
            if needs(*b) {
                accumulate(grads, *b, diff.iter().map(|x| -x).collect());
            }
            if needs(*a) {
                accumulate(grads, *a, diff);
            }
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

/// ln(1 + eˣ) without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn transpose_data(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

pub(crate) fn matmul_data(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, x)| *o += aip * x);
        }
    }
    out
}

impl<'t> Var<'t> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    /// Snapshot of the recorded value.
    pub fn value(self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn requires_grad(self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn map_value<R, F>(self, f: F) -> Result<R>
    where
        F: FnOnce(&Tensor) -> Result<R>,
    {
        let nodes = self.tape.nodes.borrow();
        f(&nodes[self.id].value)
    }

    fn unary(self, kernel: &'static str, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let value = self.map_value(|v| {
            Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect())
        })?;
        self.tape.push(value, op, kernel)
    }

    fn binary(
        self,
        rhs: Var<'t>,
        kernel: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
            if a.shape() == b.shape() {
                let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::new(a.shape().to_vec(), data)?
            } else if b.numel() == 1 {
                let y = b.item();
                Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x, y)).collect())?
            } else if a.numel() == 1 {
                let x = a.item();
                Tensor::new(b.shape().to_vec(), b.data().iter().map(|&y| f(x, y)).collect())?
            } else {
                return Err(Error::dim(kernel, a.shape(), b.shape()));
            }
        };
        self.tape.push(value, op, kernel)
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, "add", Op::Add(self.id, rhs.id), |a, b| a + b)
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, "sub", Op::Sub(self.id, rhs.id), |a, b| a - b)
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, "mul", Op::Mul(self.id, rhs.id), |a, b| a * b)
    }

    pub fn div(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, "div", Op::Div(self.id, rhs.id), |a, b| a / b)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary("scale", Op::Scale(self.id, c), |x| x * c)
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        self.unary("add_scalar", Op::AddScalar(self.id), |x| x + c)
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(Error::dim("matmul", a.shape(), b.shape()));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            Tensor::new(vec![m, n], matmul_data(a.data(), b.data(), m, k, n))?
        };
        self.tape.push(value, Op::Matmul(self.id, rhs.id), "matmul")
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(self) -> Result<Var<'t>> {
        let value = self.map_value(|v| {
            if v.rank() != 2 {
                return Err(Error::dim("transpose", v.shape(), &[2]));
            }
            let (r, c) = (v.shape()[0], v.shape()[1]);
            Tensor::new(vec![c, r], transpose_data(v.data(), r, c))
        })?;
        self.tape.push(value, Op::Transpose(self.id), "transpose")
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.map_value(|v| v.clone().reshaped(shape))?;
        self.tape.push(value, Op::Reshape(self.id), "reshape")
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let value = self.map_value(|v| {
            if axis >= v.rank() || start + len > v.shape()[axis] {
                return Err(Error::dim("narrow", v.shape(), &[axis, start, len]));
            }
            let (outer, total, inner) = axis_split(v.shape(), axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let s = o * total * inner + start * inner;
                data.extend_from_slice(&v.data()[s..s + len * inner]);
            }
            let mut shape = v.shape().to_vec();
            shape[axis] = len;
            Tensor::new(shape, data)
        })?;
        self.tape.push(
            value,
            Op::Narrow {
                src: self.id,
                axis,
                start,
            },
            "narrow",
        )
    }

    /// Splits into consecutive chunks of `sizes` along `axis`.
    pub fn split(self, axis: usize, sizes: &[usize]) -> Result<Vec<Var<'t>>> {
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &len in sizes {
            out.push(self.narrow(axis, start, len)?);
            start += len;
        }
        Ok(out)
    }

    /// Selects rows of a rank-2 tensor; indices may repeat.
    pub fn gather_rows(self, index: &[usize]) -> Result<Var<'t>> {
        let value = self.map_value(|v| {
            if v.rank() != 2 {
                return Err(Error::dim("gather_rows", v.shape(), &[2]));
            }
            let (rows, cols) = (v.shape()[0], v.shape()[1]);
            let mut data = Vec::with_capacity(index.len() * cols);
            for &i in index {
                if i >= rows {
                    return Err(Error::dim("gather_rows", v.shape(), &[i]));
                }
                data.extend_from_slice(v.row(i));
            }
            Tensor::new(vec![index.len(), cols], data)
        })?;
        self.tape.push(
            value,
            Op::GatherRows {
                src: self.id,
                index: index.to_vec(),
            },
            "gather_rows",
        )
    }

    fn reduce(self, axis: usize, mean: bool) -> Result<Var<'t>> {
        let kernel = if mean { "mean" } else { "sum" };
        let value = self.map_value(|v| {
            if axis >= v.rank() {
                return Err(Error::dim(kernel, v.shape(), &[axis]));
            }
            let (outer, ext, inner) = axis_split(v.shape(), axis);
            let mut data = vec![0.0; outer * inner];
            for o in 0..outer {
                for e in 0..ext {
                    let src = &v.data()[(o * ext + e) * inner..(o * ext + e + 1) * inner];
                    data[o * inner..(o + 1) * inner]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(d, x)| *d += x);
                }
            }
            if mean {
                data.iter_mut().for_each(|d| *d /= ext as f64);
            }
            let mut shape = v.shape().to_vec();
            shape[axis] = 1;
            Tensor::new(shape, data)
        })?;
        let op = if mean {
            Op::Mean { src: self.id, axis }
        } else {
            Op::Sum { src: self.id, axis }
        };
        self.tape.push(value, op, kernel)
    }

    /// Sum over `axis`, keeping it with extent 1.
    pub fn sum(self, axis: usize) -> Result<Var<'t>> {
        self.reduce(axis, false)
    }

    /// Mean over `axis`, keeping it with extent 1.
    pub fn mean(self, axis: usize) -> Result<Var<'t>> {
        self.reduce(axis, true)
    }

    pub fn sum_all(self) -> Result<Var<'t>> {
        let value = self.map_value(|v| Ok(Tensor::scalar(v.data().iter().sum())))?;
        self.tape.push(value, Op::SumAll(self.id), "sum_all")
    }

    pub fn mean_all(self) -> Result<Var<'t>> {
        let value = self.map_value(|v| {
            if v.numel() == 0 {
                return Err(Error::Contract("mean of an empty tensor".into()));
            }
            Ok(Tensor::scalar(v.data().iter().sum::<f64>() / v.numel() as f64))
        })?;
        self.tape.push(value, Op::MeanAll(self.id), "mean_all")
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary("exp", Op::Exp(self.id), f64::exp)
    }

    pub fn log(self) -> Result<Var<'t>> {
        if let Some(bad) = self.map_value(|v| Ok(v.data().iter().copied().find(|&x| x <= 0.0)))? {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        self.unary("log", Op::Log(self.id), f64::ln)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary("relu", Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary("tanh", Op::Tanh(self.id), f64::tanh)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        if let Some(bad) = self.map_value(|v| Ok(v.data().iter().copied().find(|&x| x < 0.0)))? {
            return Err(Error::Domain(format!("sqrt of negative value {bad}")));
        }
        self.unary("sqrt", Op::Sqrt(self.id), f64::sqrt)
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary("sigmoid", Op::Sigmoid(self.id), sigmoid)
    }

    pub fn softplus(self) -> Result<Var<'t>> {
        self.unary("softplus", Op::Softplus(self.id), softplus)
    }

    pub fn abs(self) -> Result<Var<'t>> {
        self.unary("abs", Op::Abs(self.id), f64::abs)
    }

    pub fn clamp_min(self, min: f64) -> Result<Var<'t>> {
        self.unary("clamp_min", Op::ClampMin { src: self.id, min }, |x| x.max(min))
    }

    /// Elementwise Huber penalty: x²/2 inside `[-delta, delta]`, linear outside.
    pub fn huber(self, delta: f64) -> Result<Var<'t>> {
        self.unary("huber", Op::Huber { src: self.id, delta }, |x| {
            let a = x.abs();
            if a <= delta {
                0.5 * x * x
            } else {
                delta * (a - 0.5 * delta)
            }
        })
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let value = self.map_value(|v| {
            if axis >= v.rank() {
                return Err(Error::dim("softmax", v.shape(), &[axis]));
            }
            let (outer, ext, inner) = axis_split(v.shape(), axis);
            let x = v.data();
            let mut data = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |e: usize| (o * ext + e) * inner + i;
                    let max = (0..ext).map(|e| x[idx(e)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for e in 0..ext {
                        let y = (x[idx(e)] - max).exp();
                        data[idx(e)] = y;
                        total += y;
                    }
                    for e in 0..ext {
                        data[idx(e)] /= total;
                    }
                }
            }
            Tensor::new(v.shape().to_vec(), data)
        })?;
        self.tape.push(value, Op::Softmax { src: self.id, axis }, "softmax")
    }

    /// Row-wise squared Euclidean distance of two `N×e` matrices, as `N×1`.
    pub fn sq_dist_rows(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
            if a.rank() != 2 || a.shape() != b.shape() {
                return Err(Error::dim("sq_dist_rows", a.shape(), b.shape()));
            }
            let n = a.shape()[0];
            let data = (0..n)
                .map(|r| {
                    a.row(r)
                        .iter()
                        .zip(b.row(r))
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum()
                })
                .collect();
            Tensor::new(vec![n, 1], data)?
        };
        self.tape.push(value, Op::SqDistRows(self.id, rhs.id), "sq_dist_rows")
    }
}
