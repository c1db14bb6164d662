//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Node ids are
//! assigned in creation order, which is already a topological order, so the
//! backward sweep simply walks the tape from the loss towards the leaves.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::float::Float;
use crate::kernels;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// A user-defined differentiable operation.
pub trait CustomOp<T: Float> {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;

    /// Returns one gradient per input; entries whose `needs_grad` flag is
    /// false may be `None`.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs_grad: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

enum Op<T: Float> {
    Leaf,
    Param,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddScalar(usize),
    Scale(usize, T),
    ScaleSamples(usize, Vec<T>),
    Abs(usize),
    Square(usize),
    Sigmoid(usize),
    LeakyRelu(usize, T),
    ClampMin(usize, T),
    Mean(usize),
    Sum(usize),
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        pad: usize,
    },
    AvgPool2(usize),
    UpsampleNearest2(usize),
    UpsampleBilinear2(usize),
    Concat(Vec<usize>),
    Narrow {
        x: usize,
        start: usize,
    },
    ExpandChannels(usize),
    PadEdge(usize, [usize; 4]),
    Crop {
        x: usize,
        y0: usize,
        x0: usize,
    },
    Diff(usize, bool),
    Custom(Rc<dyn CustomOp<T>>, Vec<usize>),
}

struct Node<T: Float> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<ParamId, usize>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Float> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Float> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked (used for input-gradient checks).
    pub fn input(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a trainable parameter. Repeated calls with the same id
    /// return the same node so shared weights accumulate one gradient.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var {
                graph: self,
                id: node,
            };
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.params.borrow_mut().insert(id, v.id);
        v
    }

    /// Concatenation along the channel axis.
    pub fn concat(&self, parts: &[Var<'_, T>]) -> Result<Var<'_, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let [n, _, h, w] = first.shape();
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        for v in &values {
            let [vn, _, vh, vw] = v.shape();
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape(),
                    rhs: v.shape(),
                });
            }
        }
        let c: usize = values.iter().map(|v| v.channels()).sum();
        let plane = h * w;
        let mut data = Vec::with_capacity(n * c * plane);
        for i in 0..n {
            for v in &values {
                let len = v.channels() * plane;
                data.extend_from_slice(&v.data()[i * len..(i + 1) * len]);
            }
        }
        let ids: Vec<_> = parts.iter().map(|p| p.id).collect();
        let rg = self.needs(&ids);
        Ok(self.push(Tensor::from_vec([n, c, h, w], data)?, Op::Concat(ids), rg))
    }

    pub fn custom<'g>(&'g self, op: impl CustomOp<T> + 'static, inputs: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        let values: Vec<_> = inputs.iter().map(|v| v.value()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| v.as_ref()).collect();
        let out = op.forward(&refs)?;
        let ids: Vec<_> = inputs.iter().map(|v| v.id).collect();
        let rg = self.needs(&ids);
        Ok(self.push(out, Op::Custom(Rc::new(op), ids), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(root.value.shape(), T::one()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let val = |i: usize| nodes[i].value.as_ref();
            let rg = |i: usize| nodes[i].requires_grad;
            let push = |i: usize, t: Tensor<T>, grads: &mut Vec<Option<Tensor<T>>>| -> Result<()> {
                match &mut grads[i] {
                    Some(acc) => acc.add_assign(&t),
                    slot => {
                        *slot = Some(t);
                        Ok(())
                    }
                }
            };
            match &node.op {
                Op::Leaf | Op::Param => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    if rg(*a) {
                        push(*a, g.clone(), &mut grads)?;
                    }
                    if rg(*b) {
                        push(*b, g, &mut grads)?;
                    }
                }
                Op::Sub(a, b) => {
                    if rg(*a) {
                        push(*a, g.clone(), &mut grads)?;
                    }
                    if rg(*b) {
                        push(*b, g.map(|v| -v), &mut grads)?;
                    }
                }
                Op::Mul(a, b) => {
                    if rg(*a) {
                        push(*a, g.zip_map(val(*b), |gv, bv| gv * bv)?, &mut grads)?;
                    }
                    if rg(*b) {
                        push(*b, g.zip_map(val(*a), |gv, av| gv * av)?, &mut grads)?;
                    }
                }
                Op::Div(a, b) => {
                    let bv = val(*b);
                    if rg(*a) {
                        push(*a, g.zip_map(bv, |gv, d| gv / d)?, &mut grads)?;
                    }
                    if rg(*b) {
                        let t = g.zip_map(node.value.as_ref(), |gv, q| gv * q)?;
                        push(*b, t.zip_map(bv, |v, d| -v / d)?, &mut grads)?;
                    }
                }
                Op::AddScalar(a) => push(*a, g, &mut grads)?,
                Op::Scale(a, s) => {
                    let s = *s;
                    push(*a, g.map(|v| v * s), &mut grads)?
                }
                Op::ScaleSamples(a, s) => push(*a, scale_samples(&g, s), &mut grads)?,
                Op::Abs(a) => {
                    let t = g.zip_map(val(*a), |gv, x| {
                        if x > T::zero() {
                            gv
                        } else if x < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })?;
                    push(*a, t, &mut grads)?
                }
                Op::Square(a) => {
                    let two = T::of(2.0);
                    push(*a, g.zip_map(val(*a), |gv, x| two * x * gv)?, &mut grads)?
                }
                Op::Sigmoid(a) => {
                    let t = g.zip_map(node.value.as_ref(), |gv, y| gv * y * (T::one() - y))?;
                    push(*a, t, &mut grads)?
                }
                Op::LeakyRelu(a, slope) => {
                    let slope = *slope;
                    let t = g.zip_map(val(*a), |gv, x| if x > T::zero() { gv } else { gv * slope })?;
                    push(*a, t, &mut grads)?
                }
                Op::ClampMin(a, lo) => {
                    let lo = *lo;
                    let t = g.zip_map(val(*a), |gv, x| if x >= lo { gv } else { T::zero() })?;
                    push(*a, t, &mut grads)?
                }
                Op::Mean(a) => {
                    let src = val(*a);
                    let gv = g.item() / T::from_usize(src.len()).unwrap();
                    push(*a, Tensor::full(src.shape(), gv), &mut grads)?
                }
                Op::Sum(a) => push(*a, Tensor::full(val(*a).shape(), g.item()), &mut grads)?,
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let need_b = b.is_some_and(rg);
                    let cg = kernels::conv2d_backward(val(*x), val(*w), &g, *stride, *pad, (rg(*x), rg(*w), need_b))?;
                    if let Some(t) = cg.input {
                        push(*x, t, &mut grads)?;
                    }
                    if let Some(t) = cg.weight {
                        push(*w, t, &mut grads)?;
                    }
                    if let (Some(b), Some(t)) = (b, cg.bias) {
                        push(*b, t.reshape(val(*b).shape())?, &mut grads)?;
                    }
                }
                Op::AvgPool2(a) => push(*a, kernels::avg_pool2_backward(&g, val(*a).shape()), &mut grads)?,
                Op::UpsampleNearest2(a) => {
                    push(*a, kernels::upsample_nearest2_backward(&g, val(*a).shape()), &mut grads)?
                }
                Op::UpsampleBilinear2(a) => {
                    push(*a, kernels::upsample_bilinear2_backward(&g, val(*a).shape()), &mut grads)?
                }
                Op::Concat(ids) => {
                    let [n, c, h, w] = g.shape();
                    let plane = h * w;
                    let mut offset = 0;
                    for &i in ids {
                        let ci = val(i).channels();
                        if rg(i) {
                            let mut part = Vec::with_capacity(n * ci * plane);
                            for s in 0..n {
                                let base = (s * c + offset) * plane;
                                part.extend_from_slice(&g.data()[base..base + ci * plane]);
                            }
                            push(i, Tensor::from_vec([n, ci, h, w], part)?, &mut grads)?;
                        }
                        offset += ci;
                    }
                }
                Op::Narrow { x, start } => {
                    let src = val(*x).shape();
                    let [n, c, h, w] = src;
                    let len = g.channels();
                    let plane = h * w;
                    let mut t = Tensor::zeros(src);
                    for s in 0..n {
                        let dst = (s * c + start) * plane;
                        t.data_mut()[dst..dst + len * plane]
                            .copy_from_slice(&g.data()[s * len * plane..(s + 1) * len * plane]);
                    }
                    push(*x, t, &mut grads)?
                }
                Op::ExpandChannels(a) => {
                    let [n, c, h, w] = g.shape();
                    let plane = h * w;
                    let mut t = Tensor::zeros([n, 1, h, w]);
                    for s in 0..n {
                        for ch in 0..c {
                            let src = &g.data()[(s * c + ch) * plane..(s * c + ch + 1) * plane];
                            for (d, &v) in t.data_mut()[s * plane..(s + 1) * plane].iter_mut().zip(src) {
                                *d += v;
                            }
                        }
                    }
                    push(*a, t, &mut grads)?
                }
                Op::PadEdge(a, pad) => {
                    push(*a, kernels::pad_edge_backward(&g, val(*a).shape(), *pad), &mut grads)?
                }
                Op::Crop { x, y0, x0 } => {
                    push(*x, kernels::crop_backward(&g, val(*x).shape(), *y0, *x0), &mut grads)?
                }
                Op::Diff(a, horizontal) => push(*a, kernels::forward_diff_backward(&g, *horizontal), &mut grads)?,
                Op::Custom(op, ids) => {
                    let inputs: Vec<&Tensor<T>> = ids.iter().map(|&i| val(i)).collect();
                    let needs: Vec<bool> = ids.iter().map(|&i| rg(i)).collect();
                    let gs = op.backward(&inputs, node.value.as_ref(), &g, &needs)?;
                    for ((&i, gi), need) in ids.iter().zip(gs).zip(needs) {
                        if let (true, Some(gi)) = (need, gi) {
                            if gi.shape() != val(i).shape() {
                                return Err(Error::ShapeMismatch {
                                    op: op.name(),
                                    lhs: val(i).shape(),
                                    rhs: gi.shape(),
                                });
                            }
                            push(i, gi, &mut grads)?;
                        }
                    }
                }
            }
        }
        Ok(Gradients {
            grads,
            params: self.params.borrow().clone(),
        })
    }
}

fn scale_samples<T: Float>(t: &Tensor<T>, s: &[T]) -> Tensor<T> {
    let per = t.len() / t.batch();
    let mut out = t.clone();
    for (chunk, &k) in out.data_mut().chunks_mut(per).zip(s) {
        for v in chunk {
            *v *= k;
        }
    }
    out
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: HashMap<ParamId, usize>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of the loss with respect to a leaf created by
    /// [`Graph::input`] or [`Graph::param`].
    pub fn wrt(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params
            .get(&id)
            .and_then(|&node| self.grads[node].as_ref())
    }
}

macro_rules! binary {
    ($name:ident, $variant:ident, $f:expr) => {
        pub fn $name(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
            let (a, b) = (self.value(), rhs.value());
            let out = a.zip_map(&b, $f).map_err(|_| Error::ShapeMismatch {
                op: stringify!($name),
                lhs: a.shape(),
                rhs: b.shape(),
            })?;
            let rg = self.graph.needs(&[self.id, rhs.id]);
            Ok(self.graph.push(out, Op::$variant(self.id, rhs.id), rg))
        }
    };
}

impl<'g, T: Float> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.graph.nodes.borrow()[self.id].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, out: Tensor<T>, op: Op<T>) -> Var<'g, T> {
        let rg = self.requires_grad();
        self.graph.push(out, op, rg)
    }

    binary!(add, Add, |a, b| a + b);
    binary!(sub, Sub, |a, b| a - b);
    binary!(mul, Mul, |a, b| a * b);
    binary!(div, Div, |a, b| a / b);

    pub fn add_scalar(self, s: T) -> Var<'g, T> {
        let out = self.value().map(|v| v + s);
        self.unary(out, Op::AddScalar(self.id))
    }

    pub fn scale(self, s: T) -> Var<'g, T> {
        let out = self.value().map(|v| v * s);
        self.unary(out, Op::Scale(self.id, s))
    }

    /// Multiplies sample `n` of the batch by `factors[n]`.
    pub fn scale_samples(self, factors: &[T]) -> Result<Var<'g, T>> {
        let v = self.value();
        if factors.len() != v.batch() {
            return Err(Error::invalid(
                "scale_samples",
                format!("{} factors for batch of {}", factors.len(), v.batch()),
            ));
        }
        let out = scale_samples(&v, factors);
        Ok(self.unary(out, Op::ScaleSamples(self.id, factors.to_vec())))
    }

    pub fn abs(self) -> Var<'g, T> {
        let out = self.value().map(|v| v.abs());
        self.unary(out, Op::Abs(self.id))
    }

    pub fn square(self) -> Var<'g, T> {
        let out = self.value().map(|v| v * v);
        self.unary(out, Op::Square(self.id))
    }

    pub fn sigmoid(self) -> Var<'g, T> {
        let out = self.value().map(|v| T::one() / (T::one() + (-v).exp()));
        self.unary(out, Op::Sigmoid(self.id))
    }

    pub fn leaky_relu(self, slope: T) -> Var<'g, T> {
        let out = self.value().map(|v| if v > T::zero() { v } else { v * slope });
        self.unary(out, Op::LeakyRelu(self.id, slope))
    }

    pub fn clamp_min(self, lo: T) -> Var<'g, T> {
        let out = self.value().map(|v| v.max(lo));
        self.unary(out, Op::ClampMin(self.id, lo))
    }

    pub fn mean(self) -> Var<'g, T> {
        let out = Tensor::scalar(self.value().mean());
        self.unary(out, Op::Mean(self.id))
    }

    pub fn sum(self) -> Var<'g, T> {
        let out = Tensor::scalar(self.value().sum());
        self.unary(out, Op::Sum(self.id))
    }

    pub fn conv2d(self, weight: Var<'g, T>, bias: Option<Var<'g, T>>, stride: usize, pad: usize) -> Result<Var<'g, T>> {
        let (x, w) = (self.value(), weight.value());
        let b = bias.map(|b| b.value());
        let out = kernels::conv2d_forward(&x, &w, b.as_deref(), stride, pad)?;
        let mut ids = vec![self.id, weight.id];
        ids.extend(bias.map(|b| b.id));
        let rg = self.graph.needs(&ids);
        Ok(self.graph.push(
            out,
            Op::Conv2d {
                x: self.id,
                w: weight.id,
                b: bias.map(|b| b.id),
                stride,
                pad,
            },
            rg,
        ))
    }

    pub fn avg_pool2(self) -> Result<Var<'g, T>> {
        let out = kernels::avg_pool2(&self.value())?;
        Ok(self.unary(out, Op::AvgPool2(self.id)))
    }

    pub fn upsample_nearest2(self) -> Var<'g, T> {
        let out = kernels::upsample_nearest2(&self.value());
        self.unary(out, Op::UpsampleNearest2(self.id))
    }

    pub fn upsample_bilinear2(self) -> Var<'g, T> {
        let out = kernels::upsample_bilinear2(&self.value());
        self.unary(out, Op::UpsampleBilinear2(self.id))
    }

    /// Channels `start..start + len`.
    pub fn narrow(self, start: usize, len: usize) -> Result<Var<'g, T>> {
        let v = self.value();
        let [n, c, h, w] = v.shape();
        if start + len > c || len == 0 {
            return Err(Error::invalid("narrow", format!("channels {start}+{len} of {c}")));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * len * plane);
        for s in 0..n {
            let base = (s * c + start) * plane;
            data.extend_from_slice(&v.data()[base..base + len * plane]);
        }
        let out = Tensor::from_vec([n, len, h, w], data)?;
        Ok(self.unary(out, Op::Narrow { x: self.id, start }))
    }

    /// Repeats a single-channel tensor `channels` times.
    pub fn expand_channels(self, channels: usize) -> Result<Var<'g, T>> {
        let v = self.value();
        let [n, c, h, w] = v.shape();
        if c != 1 {
            return Err(Error::invalid("expand_channels", format!("expected 1 channel, got {c}")));
        }
        let out = Tensor::from_fn([n, channels, h, w], |[s, _, y, x]| v.at([s, 0, y, x]));
        Ok(self.unary(out, Op::ExpandChannels(self.id)))
    }

    /// Edge-replicating pad by `[top, bottom, left, right]`.
    pub fn pad_edge(self, pad: [usize; 4]) -> Var<'g, T> {
        let out = kernels::pad_edge(&self.value(), pad);
        self.unary(out, Op::PadEdge(self.id, pad))
    }

    pub fn crop(self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Var<'g, T>> {
        let out = kernels::crop(&self.value(), y0, x0, h, w)?;
        Ok(self.unary(out, Op::Crop { x: self.id, y0, x0 }))
    }

    /// Forward difference along the width axis, zero in the last column.
    pub fn diff_x(self) -> Var<'g, T> {
        let out = kernels::forward_diff(&self.value(), true);
        self.unary(out, Op::Diff(self.id, true))
    }

    /// Forward difference along the height axis, zero in the last row.
    pub fn diff_y(self) -> Var<'g, T> {
        let out = kernels::forward_diff(&self.value(), false);
        self.unary(out, Op::Diff(self.id, false))
    }

    /// Same value, cut from the gradient graph.
    pub fn detach(self) -> Var<'g, T> {
        self.graph.constant(self.value().as_ref().clone())
    }
}
