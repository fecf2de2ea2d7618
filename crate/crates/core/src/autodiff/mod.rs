//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records every operation of one forward pass (define-by-run).
//! [`Tape::backward`] walks the records in reverse and returns the
//! [`Gradients`] of a scalar loss with respect to every recorded node.
//! Trainable state lives in [`Parameter`]s outside the tape; binding a
//! parameter with [`Tape::param`] lets its gradient be pulled back out.

mod adam;
mod checkpoint;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use mlp::{Activation, BoundMlp, Mlp};

use std::cell::{Ref, RefCell};
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{ArrayD, ArrayViewD, Axis, Ix2, IxDyn, Zip};

use crate::error::{GinError, Result};

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

/// Trainable array with an accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter {
    id: u64,
    name: String,
    pub value: ArrayD<f64>,
    pub grad: Option<ArrayD<f64>>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: ArrayD<f64>) -> Self {
        Parameter {
            id: NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed),
            name: name.into(),
            value,
            grad: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    /// Adds this parameter's gradient from `grads`. A parameter that was bound
    /// but never reached by the backward pass receives zeros.
    pub fn accumulate_grad(&mut self, grads: &Gradients) {
        let Some(node) = grads.bindings.iter().find(|(_, pid)| *pid == self.id).map(|(n, _)| *n) else {
            return;
        };
        let g = grads.grads[node]
            .clone()
            .unwrap_or_else(|| ArrayD::zeros(self.value.raw_dim()));
        match &mut self.grad {
            Some(acc) => *acc += &g,
            None => self.grad = Some(g),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Abs(usize),
    Softmax(usize, usize),
    SumAll(usize),
    MeanAll(usize),
    SumAxis(usize, usize),
    MeanAxis(usize, usize),
    Concat(Vec<usize>, usize),
    Slice(usize, usize, usize),
    Select(usize, usize, Vec<usize>),
    Reshape(usize),
    StraightThrough(usize),
    ScatterSym(usize, Vec<(usize, usize)>),
    SegmentSum(SegmentSum),
}

#[derive(Debug)]
struct SegmentSum {
    values: usize,
    weights: usize,
    value_idx: Vec<usize>,
    target_idx: Vec<usize>,
}

#[derive(Debug)]
struct Node {
    value: ArrayD<f64>,
    op: Op,
    requires_grad: bool,
}

/// Record of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    bindings: RefCell<Vec<(usize, u64)>>,
}

/// Handle to a recorded array.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
    bindings: Vec<(usize, u64)>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var<'_>) -> Option<&ArrayD<f64>> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var<'_>) -> ArrayD<f64> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| ArrayD::zeros(IxDyn(&v.shape())))
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for k in 0..rank {
        let da = if k + a.len() >= rank { a[k + a.len() - rank] } else { 1 };
        let db = if k + b.len() >= rank { b[k + b.len() - rank] } else { 1 };
        out[k] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Sums `grad` down to `shape`, undoing numpy-style broadcasting.
fn unbroadcast(grad: ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    if grad.shape() == shape {
        return grad;
    }
    if grad.ndim() == 2 && shape.len() == 1 && grad.shape()[1] == shape[0] {
        if let Some(gs) = grad.as_slice() {
            let c = shape[0];
            let mut out = vec![0.0; c];
            for row in gs.chunks_exact(c.max(1)) {
                out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
            }
            return ArrayD::from_shape_vec(IxDyn(shape), out).expect("sized");
        }
    }
    let mut g = grad;
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (k, &d) in shape.iter().enumerate() {
        if d == 1 && g.shape()[k] != 1 {
            g = g.sum_axis(Axis(k)).insert_axis(Axis(k));
        }
    }
    g
}

fn add_arrays(a: &ArrayD<f64>, b: &ArrayD<f64>) -> ArrayD<f64> {
    if a.ndim() == 2 && b.ndim() == 1 && a.shape()[1] == b.len() {
        if let (Some(xs), Some(bs)) = (a.as_slice(), b.as_slice()) {
            let mut out = xs.to_vec();
            for row in out.chunks_exact_mut(bs.len().max(1)) {
                row.iter_mut().zip(bs).for_each(|(o, v)| *o += v);
            }
            return ArrayD::from_shape_vec(a.raw_dim(), out).expect("sized");
        }
    }
    a + b
}

/// Rows `idx` of a contiguous rank-2 array.
fn gather_rows(a: &ArrayD<f64>, idx: &[usize]) -> Option<ArrayD<f64>> {
    if a.ndim() != 2 {
        return None;
    }
    let xs = a.as_slice()?;
    let c = a.shape()[1];
    let mut out = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        out.extend_from_slice(&xs[i * c..(i + 1) * c]);
    }
    Some(ArrayD::from_shape_vec(IxDyn(&[idx.len(), c]), out).expect("sized"))
}

fn as2(a: &ArrayD<f64>) -> ndarray::ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().expect("rank-2 array")
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_lanes(x: &ArrayD<f64>, axis: usize) -> ArrayD<f64> {
    let mut out = x.clone();
    for mut lane in out.lanes_mut(Axis(axis)) {
        let m = lane.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        lane.mapv_inplace(|v| (v - m).exp());
        let s = lane.sum();
        lane.mapv_inplace(|v| v / s);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: ArrayD<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Constant input; gradients are still computed for it on request.
    pub fn constant(&self, value: ArrayD<f64>) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that gradients flow into.
    pub fn variable(&self, value: ArrayD<f64>) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    /// Binds a parameter's current value as a trainable leaf.
    pub fn param(&self, p: &Parameter) -> Var<'_> {
        let v = self.variable(p.value.clone());
        self.bindings.borrow_mut().push((v.id, p.id));
        v
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn unary(&self, a: usize, f: impl FnOnce(&ArrayD<f64>) -> ArrayD<f64>, op: Op) -> Var<'_> {
        let value = f(&self.nodes.borrow()[a].value);
        let rg = self.needs(&[a]);
        self.push(value, op, rg)
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(GinError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(ArrayD::from_elem(nodes[loss.id].value.raw_dim(), 1.0));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut send = |target: usize, contrib: ArrayD<f64>| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(acc) => *acc += &contrib,
                    slot @ None => *slot = Some(contrib),
                }
            };
            let val = |k: usize| &nodes[k].value;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    send(*a, unbroadcast(g.clone(), val(*a).shape()));
                    send(*b, unbroadcast(g, val(*b).shape()));
                }
                Op::Sub(a, b) => {
                    send(*a, unbroadcast(g.clone(), val(*a).shape()));
                    send(*b, unbroadcast(-g, val(*b).shape()));
                }
                Op::Mul(a, b) => {
                    if nodes[*a].requires_grad {
                        send(*a, unbroadcast(&g * val(*b), val(*a).shape()));
                    }
                    if nodes[*b].requires_grad {
                        send(*b, unbroadcast(&g * val(*a), val(*b).shape()));
                    }
                }
                Op::Div(a, b) => {
                    if nodes[*a].requires_grad {
                        send(*a, unbroadcast(&g / val(*b), val(*a).shape()));
                    }
                    if nodes[*b].requires_grad {
                        let bv = val(*b);
                        let gb = -(&g * &node.value) / bv;
                        send(*b, unbroadcast(gb, bv.shape()));
                    }
                }
                Op::Neg(a) => send(*a, -g),
                Op::Scale(a, c) => send(*a, g * *c),
                Op::AddScalar(a) => send(*a, g),
                Op::MatMul(a, b) => {
                    let g2 = as2(&g);
                    if nodes[*a].requires_grad {
                        send(*a, g2.dot(&as2(val(*b)).t()).into_dyn());
                    }
                    if nodes[*b].requires_grad {
                        send(*b, as2(val(*a)).t().dot(&g2).into_dyn());
                    }
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|gv, &y| {
                        if y <= 0.0 {
                            *gv = 0.0;
                        }
                    });
                    send(*a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|gv, &y| *gv *= y * (1.0 - y));
                    send(*a, ga);
                }
                Op::Exp(a) => send(*a, g * &node.value),
                Op::Log(a) => send(*a, g / val(*a)),
                Op::Abs(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(val(*a)).for_each(|gv, &x| {
                        *gv *= if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    send(*a, ga);
                }
                Op::Softmax(a, axis) => {
                    let y = &node.value;
                    let mut ga = &g * y;
                    let dots = ga.sum_axis(Axis(*axis)).insert_axis(Axis(*axis));
                    ga = ga - &(y * &dots);
                    send(*a, ga);
                }
                Op::SumAll(a) => {
                    let s = g.first().copied().unwrap_or(0.0);
                    send(*a, ArrayD::from_elem(val(*a).raw_dim(), s));
                }
                Op::MeanAll(a) => {
                    let n = val(*a).len().max(1) as f64;
                    let s = g.first().copied().unwrap_or(0.0) / n;
                    send(*a, ArrayD::from_elem(val(*a).raw_dim(), s));
                }
                Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                    let shape = val(*a).shape().to_vec();
                    let mut ga = g
                        .insert_axis(Axis(*axis))
                        .broadcast(IxDyn(&shape))
                        .expect("reduced axis broadcasts back")
                        .to_owned();
                    if matches!(node.op, Op::MeanAxis(..)) {
                        ga /= shape[*axis] as f64;
                    }
                    send(*a, ga);
                }
                Op::Concat(parts, axis) => {
                    let mut start = 0;
                    for &p in parts {
                        let len = val(p).shape()[*axis];
                        if nodes[p].requires_grad {
                            let piece = g
                                .slice_axis(Axis(*axis), (start..start + len).into())
                                .to_owned();
                            send(p, piece);
                        }
                        start += len;
                    }
                }
                Op::Slice(a, axis, start) => {
                    let mut ga = ArrayD::zeros(val(*a).raw_dim());
                    let len = g.shape()[*axis];
                    ga.slice_axis_mut(Axis(*axis), (*start..*start + len).into())
                        .assign(&g);
                    send(*a, ga);
                }
                Op::Select(a, 0, idx) if g.ndim() == 2 && g.is_standard_layout() => {
                    let shape = val(*a).shape().to_vec();
                    let c = shape[1];
                    let mut out = vec![0.0; shape[0] * c];
                    let gs = g.as_slice().expect("standard layout");
                    for (k, &i) in idx.iter().enumerate() {
                        out[i * c..(i + 1) * c]
                            .iter_mut()
                            .zip(&gs[k * c..(k + 1) * c])
                            .for_each(|(o, v)| *o += v);
                    }
                    send(*a, ArrayD::from_shape_vec(IxDyn(&shape), out).expect("sized"));
                }
                Op::Select(a, axis, idx) => {
                    let mut ga = ArrayD::zeros(val(*a).raw_dim());
                    for (k, &i) in idx.iter().enumerate() {
                        let mut dst = ga.index_axis_mut(Axis(*axis), i);
                        dst += &g.index_axis(Axis(*axis), k);
                    }
                    send(*a, ga);
                }
                Op::Reshape(a) => {
                    let shape = val(*a).shape().to_vec();
                    let ga = g
                        .as_standard_layout()
                        .to_owned()
                        .into_shape_with_order(IxDyn(&shape))
                        .expect("reshape preserves length");
                    send(*a, ga);
                }
                Op::StraightThrough(a) => send(*a, g),
                Op::ScatterSym(a, pairs) => {
                    let g2 = as2(&g);
                    let ga: Vec<f64> = pairs.iter().map(|&(i, j)| g2[[i, j]] + g2[[j, i]]).collect();
                    send(*a, ArrayD::from_shape_vec(IxDyn(&[pairs.len()]), ga).expect("flat"));
                }
                Op::SegmentSum(seg) => {
                    let values = val(seg.values).as_standard_layout();
                    let values = values.view().into_dimensionality::<Ix2>().expect("rank-2 values");
                    let weights = val(seg.weights).as_standard_layout();
                    let g = g.as_standard_layout();
                    let width = values.ncols();
                    let gs = g.as_slice().expect("standard layout gradient");
                    if nodes[seg.values].requires_grad {
                        let mut gv = ndarray::Array2::<f64>::zeros(values.raw_dim());
                        {
                            let gvs = gv.as_slice_mut().expect("fresh array");
                            for (p, (&vi, &ti)) in seg.value_idx.iter().zip(&seg.target_idx).enumerate() {
                                let w = weights.as_slice().expect("flat weights")[p];
                                if w == 0.0 {
                                    continue;
                                }
                                let src = &gs[ti * width..(ti + 1) * width];
                                let dst = &mut gvs[vi * width..(vi + 1) * width];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += w * s;
                                }
                            }
                        }
                        send(seg.values, gv.into_dyn());
                    }
                    if nodes[seg.weights].requires_grad {
                        let vs = values.as_slice().expect("standard layout values");
                        let gw: Vec<f64> = seg
                            .value_idx
                            .iter()
                            .zip(&seg.target_idx)
                            .map(|(&vi, &ti)| {
                                let a = &vs[vi * width..(vi + 1) * width];
                                let b = &gs[ti * width..(ti + 1) * width];
                                a.iter().zip(b).map(|(x, y)| x * y).sum()
                            })
                            .collect();
                        send(
                            seg.weights,
                            ArrayD::from_shape_vec(weights.raw_dim(), gw).expect("weight shape"),
                        );
                    }
                }
            }
        }
        Ok(Gradients {
            grads,
            bindings: self.bindings.borrow().clone(),
        })
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Borrowed view of the value.
    pub fn value_ref(&self) -> Ref<'t, ArrayD<f64>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn value(&self) -> ArrayD<f64> {
        self.value_ref().clone()
    }

    /// First element; meant for scalar results.
    pub fn item(&self) -> f64 {
        self.value_ref().iter().next().copied().unwrap_or(f64::NAN)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value_ref().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        f: impl FnOnce(&ArrayD<f64>, &ArrayD<f64>) -> ArrayD<f64>,
        op: Op,
    ) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if broadcast_shape(a.shape(), b.shape()).is_none() {
                return Err(GinError::shape(name, a.shape(), b.shape()));
            }
            f(a, b)
        };
        let rg = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(value, op, rg))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", add_arrays, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", |a, b| a / b, Op::Div(self.id, other.id))
    }

    pub fn neg(self) -> Var<'t> {
        self.tape.unary(self.id, |a| -a, Op::Neg(self.id))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.tape.unary(self.id, |a| a * c, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.tape.unary(self.id, |a| a + c, Op::AddScalar(self.id))
    }

    /// Matrix product of two rank-2 arrays.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(GinError::shape("matmul", a.shape(), b.shape()));
            }
            as2(a).dot(&as2(b)).into_dyn()
        };
        let rg = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), rg))
    }

    pub fn relu(self) -> Var<'t> {
        self.tape.unary(self.id, |a| a.mapv(|v| v.max(0.0)), Op::Relu(self.id))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.tape.unary(self.id, |a| a.mapv(sigmoid), Op::Sigmoid(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self.id, |a| a.mapv(f64::exp), Op::Exp(self.id))
    }

    pub fn log(self) -> Var<'t> {
        self.tape.unary(self.id, |a| a.mapv(f64::ln), Op::Log(self.id))
    }

    pub fn abs(self) -> Var<'t> {
        self.tape.unary(self.id, |a| a.mapv(f64::abs), Op::Abs(self.id))
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let nd = self.value_ref().ndim();
        if axis >= nd {
            return Err(GinError::shape("softmax", &self.shape(), &[axis]));
        }
        Ok(self
            .tape
            .unary(self.id, |a| softmax_lanes(a, axis), Op::Softmax(self.id, axis)))
    }

    /// Sum of all elements, as a rank-0 array.
    pub fn sum(self) -> Var<'t> {
        self.tape.unary(
            self.id,
            |a| ArrayD::from_elem(IxDyn(&[]), a.sum()),
            Op::SumAll(self.id),
        )
    }

    pub fn mean(self) -> Var<'t> {
        self.tape.unary(
            self.id,
            |a| ArrayD::from_elem(IxDyn(&[]), a.sum() / a.len().max(1) as f64),
            Op::MeanAll(self.id),
        )
    }

    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        if axis >= self.value_ref().ndim() {
            return Err(GinError::shape("sum_axis", &self.shape(), &[axis]));
        }
        Ok(self
            .tape
            .unary(self.id, |a| a.sum_axis(Axis(axis)), Op::SumAxis(self.id, axis)))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(GinError::shape("mean_axis", &shape, &[axis]));
        }
        Ok(self.tape.unary(
            self.id,
            |a| a.sum_axis(Axis(axis)) / shape[axis] as f64,
            Op::MeanAxis(self.id, axis),
        ))
    }

    /// Forward value of `hard`, gradient of `self`.
    pub fn straight_through(self, hard: ArrayD<f64>) -> Result<Var<'t>> {
        if hard.shape() != self.shape().as_slice() {
            return Err(GinError::shape("straight_through", &self.shape(), hard.shape()));
        }
        let rg = self.requires_grad();
        Ok(self.tape.push(hard, Op::StraightThrough(self.id), rg))
    }

    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(GinError::shape("slice", &shape, &[axis, start, end]));
        }
        Ok(self.tape.unary(
            self.id,
            |a| a.slice_axis(Axis(axis), (start..end).into()).to_owned(),
            Op::Slice(self.id, axis, start),
        ))
    }

    /// Gathers entries along `axis` by index; indices may repeat.
    pub fn select(self, axis: usize, indices: &[usize]) -> Result<Var<'t>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(GinError::shape("select", &shape, &[axis]));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= shape[axis]) {
            return Err(GinError::shape("select", &shape, &[bad]));
        }
        Ok(self.tape.unary(
            self.id,
            |a| {
                if axis == 0 {
                    if let Some(out) = gather_rows(a, indices) {
                        return out;
                    }
                }
                a.select(Axis(axis), indices)
            },
            Op::Select(self.id, axis, indices.to_vec()),
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let cur = self.shape();
        if cur.iter().product::<usize>() != shape.iter().product::<usize>() {
            return Err(GinError::shape("reshape", &cur, shape));
        }
        Ok(self.tape.unary(
            self.id,
            |a| {
                a.as_standard_layout()
                    .to_owned()
                    .into_shape_with_order(IxDyn(shape))
                    .expect("length checked")
            },
            Op::Reshape(self.id),
        ))
    }

    /// Places a flat vector into the symmetric positions `(i, j)` and `(j, i)`
    /// of `base`, which supplies every other entry as a constant.
    pub fn scatter_symmetric(self, base: ArrayD<f64>, pairs: &[(usize, usize)]) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape != [pairs.len()] || base.ndim() != 2 || base.shape()[0] != base.shape()[1] {
            return Err(GinError::shape("scatter_symmetric", &shape, base.shape()));
        }
        let n = base.shape()[0];
        if pairs.iter().any(|&(i, j)| i >= n || j >= n) {
            return Err(GinError::shape("scatter_symmetric", &[pairs.len()], &[n]));
        }
        let value = {
            let src = self.value_ref();
            let mut out = base;
            for (k, &(i, j)) in pairs.iter().enumerate() {
                out[[i, j]] = src[[k]];
                out[[j, i]] = src[[k]];
            }
            out
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::ScatterSym(self.id, pairs.to_vec()), rg))
    }

    /// Weighted segment sum over rows of a rank-2 `self`:
    /// `out[t] = sum_{p : target_idx[p] = t} weights[p] * self[value_idx[p]]`.
    pub fn segment_sum(
        self,
        weights: Var<'t>,
        value_idx: &[usize],
        target_idx: &[usize],
        n_targets: usize,
    ) -> Result<Var<'t>> {
        let vshape = self.shape();
        let wshape = weights.shape();
        if vshape.len() != 2 || wshape != [value_idx.len()] || value_idx.len() != target_idx.len() {
            return Err(GinError::shape("segment_sum", &vshape, &wshape));
        }
        if value_idx.iter().any(|&v| v >= vshape[0]) || target_idx.iter().any(|&t| t >= n_targets) {
            return Err(GinError::shape("segment_sum", &vshape, &[n_targets]));
        }
        let width = vshape[1];
        let value = {
            let nodes = self.tape.nodes.borrow();
            let vals = nodes[self.id].value.as_standard_layout();
            let vs = vals.as_slice().expect("standard layout");
            let ws = nodes[weights.id].value.as_standard_layout();
            let ws = ws.as_slice().expect("standard layout");
            let mut out = vec![0.0; n_targets * width];
            for (p, (&vi, &ti)) in value_idx.iter().zip(target_idx).enumerate() {
                let w = ws[p];
                if w == 0.0 {
                    continue;
                }
                let src = &vs[vi * width..(vi + 1) * width];
                let dst = &mut out[ti * width..(ti + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
            ArrayD::from_shape_vec(IxDyn(&[n_targets, width]), out).expect("sized")
        };
        let rg = self.tape.needs(&[self.id, weights.id]);
        Ok(self.tape.push(
            value,
            Op::SegmentSum(SegmentSum {
                values: self.id,
                weights: weights.id,
                value_idx: value_idx.to_vec(),
                target_idx: target_idx.to_vec(),
            }),
            rg,
        ))
    }
}

/// Concatenates along `axis`; all other dimensions must agree.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| GinError::Contract("concat of zero arrays".into()))?;
    let tape = first.tape;
    let value = {
        let nodes = tape.nodes.borrow();
        let views: Vec<ArrayViewD<'_, f64>> = parts.iter().map(|p| nodes[p.id].value.view()).collect();
        let s0 = views[0].shape();
        for v in &views[1..] {
            let ok = v.ndim() == s0.len()
                && axis < s0.len()
                && v.shape().iter().zip(s0).enumerate().all(|(k, (a, b))| k == axis || a == b);
            if !ok {
                return Err(GinError::shape("concat", s0, v.shape()));
            }
        }
        if axis >= s0.len() {
            return Err(GinError::shape("concat", s0, &[axis]));
        }
        if axis == 1 && s0.len() == 2 && views.iter().all(|v| v.is_standard_layout()) {
            let rows = s0[0];
            let total: usize = views.iter().map(|v| v.shape()[1]).sum();
            let mut out = Vec::with_capacity(rows * total);
            let slices: Vec<&[f64]> = views.iter().map(|v| v.as_slice().expect("standard layout")).collect();
            for r in 0..rows {
                for (v, sl) in views.iter().zip(&slices) {
                    let c = v.shape()[1];
                    out.extend_from_slice(&sl[r * c..(r + 1) * c]);
                }
            }
            ArrayD::from_shape_vec(IxDyn(&[rows, total]), out).expect("sized")
        } else {
            ndarray::concatenate(Axis(axis), &views).map_err(|_| GinError::shape("concat", s0, &[axis]))?
        }
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let rg = tape.needs(&ids);
    Ok(tape.push(value, Op::Concat(ids, axis), rg))
}
