//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Nodes are
//! appended in evaluation order, so a reverse sweep over the node list is a
//! valid topological order for back-propagation.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::kernels::{self, ConvGeom};
use crate::params::{ParamId, ParamStore};
use crate::real::{gemm, Real};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    BiasAdd { x: usize, b: usize },
    Linear { x: usize, w: usize },
    Conv2d { x: usize, w: usize, geom: ConvGeom },
    ConvTranspose2d { x: usize, w: usize, geom: ConvGeom },
    BatchNorm { x: usize, gamma: usize, beta: usize, mean: Vec<T>, invstd: Vec<T>, batch_stats: bool },
    Relu(usize),
    LeakyRelu(usize, T),
    Tanh(usize),
    Sigmoid(usize),
    AvgPool2(usize),
    MaxPool2 { x: usize, argmax: Vec<u32> },
    GlobalAvgPool(usize),
    Reshape(usize),
    Concat1 { inputs: Vec<usize>, widths: Vec<usize> },
    Narrow0 { x: usize, start: usize },
    Gather0 { table: usize, rows: Vec<usize> },
    SumSqDiff(usize, usize),
    SumAll(usize),
    BceWithLogits { x: usize, target: Vec<T> },
    CrossEntropy { x: usize, labels: Vec<usize>, probs: Vec<T> },
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Pending replacement of a non-trainable buffer (e.g. running statistics).
#[derive(Debug, Clone)]
pub struct BufferUpdate<T> {
    pub store: u64,
    pub id: ParamId,
    pub value: Tensor<T>,
}

/// One forward/backward session.
pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    bound: RefCell<HashMap<(u64, usize), usize>>,
    frozen: RefCell<HashSet<u64>>,
    updates: RefCell<Vec<BufferUpdate<T>>>,
    grad_enabled: bool,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Real> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            bound: RefCell::new(HashMap::new()),
            frozen: RefCell::new(HashSet::new()),
            updates: RefCell::new(Vec::new()),
            grad_enabled: true,
        }
    }

    /// A graph that records values only; nothing in it requires gradients.
    pub fn no_grad() -> Self {
        Self { grad_enabled: false, ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Parameters of `store` bound after this call never require gradients.
    pub fn freeze(&self, store: &ParamStore<T>) {
        self.frozen.borrow_mut().insert(store.uid());
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let requires_grad = requires_grad && self.grad_enabled;
        let op = if requires_grad { op } else { Op::Leaf };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Arc::new(value), op, requires_grad });
        Var { graph: self, id: nodes.len() - 1 }
    }

    fn value_of(&self, id: usize) -> Arc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn req(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// A constant input.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    /// An input leaf whose gradient is wanted.
    pub fn input(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a stored parameter; repeated calls return the same node.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        let key = (store.uid(), id.index());
        if let Some(&node) = self.bound.borrow().get(&key) {
            return Var { graph: self, id: node };
        }
        let trainable = store.is_trainable(id) && !self.frozen.borrow().contains(&store.uid());
        let value = store.shared(id);
        let requires_grad = trainable && self.grad_enabled;
        let node = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node { value, op: Op::Leaf, requires_grad });
            nodes.len() - 1
        };
        self.bound.borrow_mut().insert(key, node);
        Var { graph: self, id: node }
    }

    pub fn record_buffer_update(&self, store: &ParamStore<T>, id: ParamId, value: Tensor<T>) {
        self.updates.borrow_mut().push(BufferUpdate { store: store.uid(), id, value });
    }

    /// Drains buffer updates recorded during forward passes.
    pub fn take_buffer_updates(&self) -> Vec<BufferUpdate<T>> {
        std::mem::take(&mut *self.updates.borrow_mut())
    }

    /// Concatenates rank-2 or rank-4 tensors along dimension 1.
    pub fn concat1<'g>(&'g self, parts: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        let first = match parts.first() {
            Some(p) => p.value(),
            None => return shape_err("concat1", "no inputs"),
        };
        let n = first.dim(0);
        let tail: Vec<usize> = first.shape()[2..].to_vec();
        let s: usize = tail.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        let mut values = Vec::with_capacity(parts.len());
        for p in parts {
            let v = p.value();
            if v.rank() < 2 || v.dim(0) != n || v.shape()[2..] != tail[..] {
                return shape_err("concat1", format!("{:?} vs {:?}", v.shape(), first.shape()));
            }
            widths.push(v.dim(1));
            values.push(v);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total * s);
        for b in 0..n {
            for (v, &c) in values.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[b * c * s..(b + 1) * c * s]);
            }
        }
        let mut shape = vec![n, total];
        shape.extend(tail);
        let req = parts.iter().any(|p| p.requires_grad());
        let inputs = parts.iter().map(|p| p.id).collect();
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat1 { inputs, widths }, req))
    }

    /// Back-propagates from a scalar loss.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let v = loss.value();
        if v.numel() != 1 {
            return shape_err("backward", format!("loss must be scalar, got {:?}", v.shape()));
        }
        self.backward_with(&[(loss, Tensor::full(v.shape().to_vec(), T::one()))])
    }

    /// Back-propagates from arbitrary seeds `(node, d(objective)/d(node))`.
    pub fn backward_with(&self, seeds: &[(Var<'_, T>, Tensor<T>)]) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        for (var, seed) in seeds {
            if seed.shape() != nodes[var.id].value.shape() {
                return shape_err(
                    "backward_with",
                    format!("seed {:?} for node {:?}", seed.shape(), nodes[var.id].value.shape()),
                );
            }
            accumulate(&nodes, &mut grads, var.id, seed.clone())?;
        }
        for i in (0..nodes.len()).rev() {
            if !nodes[i].requires_grad || matches!(nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            propagate(&nodes, &mut grads, i, g)?;
        }
        Ok(Gradients { grads, bound: self.bound.borrow().clone() })
    }
}

fn accumulate<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Tensor<T>>], id: usize, g: Tensor<T>) -> Result<()> {
    if !nodes[id].requires_grad {
        return Ok(());
    }
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Leading, channel and trailing sizes of a `(n, c, ...)` tensor.
fn ncs(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2..].iter().product())
}

fn propagate<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Tensor<T>>], i: usize, g: Tensor<T>) -> Result<()> {
    let val = |id: usize| -> &Tensor<T> { &nodes[id].value };
    let req = |id: usize| nodes[id].requires_grad;
    let out = &nodes[i].value;
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if req(*a) {
                accumulate(nodes, grads, *a, g.clone())?;
            }
            accumulate(nodes, grads, *b, g)?;
        }
        Op::Sub(a, b) => {
            if req(*b) {
                accumulate(nodes, grads, *b, g.map(|x| -x))?;
            }
            accumulate(nodes, grads, *a, g)?;
        }
        Op::Mul(a, b) => {
            if req(*a) {
                accumulate(nodes, grads, *a, g.zip_map(val(*b), |d, y| d * y)?)?;
            }
            if req(*b) {
                accumulate(nodes, grads, *b, g.zip_map(val(*a), |d, x| d * x)?)?;
            }
        }
        Op::Scale(a, c) => accumulate(nodes, grads, *a, g.scale(*c))?,
        Op::BiasAdd { x, b } => {
            if req(*b) {
                let (n, c, s) = ncs(g.shape());
                let mut db = vec![T::zero(); c];
                for bi in 0..n {
                    for (ch, acc) in db.iter_mut().enumerate() {
                        *acc += g.data()[(bi * c + ch) * s..(bi * c + ch + 1) * s].iter().copied().sum::<T>();
                    }
                }
                accumulate(nodes, grads, *b, Tensor::new([c], db)?)?;
            }
            accumulate(nodes, grads, *x, g)?;
        }
        Op::Linear { x, w } => {
            let (xv, wv) = (val(*x), val(*w));
            let (n, fin) = (xv.dim(0), xv.dim(1));
            let fout = wv.dim(0);
            if req(*x) {
                let mut dx = vec![T::zero(); n * fin];
                gemm(false, false, n, fin, fout, T::one(), g.data(), wv.data(), T::zero(), &mut dx);
                accumulate(nodes, grads, *x, Tensor::new([n, fin], dx)?)?;
            }
            if req(*w) {
                let mut dw = vec![T::zero(); fout * fin];
                gemm(true, false, fout, fin, n, T::one(), g.data(), xv.data(), T::zero(), &mut dw);
                accumulate(nodes, grads, *w, Tensor::new([fout, fin], dw)?)?;
            }
        }
        Op::Conv2d { x, w, geom } => {
            let (xv, wv) = (val(*x), val(*w));
            let (dx, dw) = kernels::conv2d_backward(
                geom,
                xv.dim(0),
                wv.dim(0),
                xv.data(),
                wv.data(),
                g.data(),
                req(*x),
                req(*w),
            );
            if let Some(dx) = dx {
                accumulate(nodes, grads, *x, Tensor::new(xv.shape().to_vec(), dx)?)?;
            }
            if let Some(dw) = dw {
                accumulate(nodes, grads, *w, Tensor::new(wv.shape().to_vec(), dw)?)?;
            }
        }
        Op::ConvTranspose2d { x, w, geom } => {
            let (xv, wv) = (val(*x), val(*w));
            let (dx, dw) = kernels::conv_transpose2d_backward(
                geom,
                xv.dim(0),
                xv.dim(1),
                xv.data(),
                wv.data(),
                g.data(),
                req(*x),
                req(*w),
            );
            if let Some(dx) = dx {
                accumulate(nodes, grads, *x, Tensor::new(xv.shape().to_vec(), dx)?)?;
            }
            if let Some(dw) = dw {
                accumulate(nodes, grads, *w, Tensor::new(wv.shape().to_vec(), dw)?)?;
            }
        }
        Op::BatchNorm { x, gamma, beta, mean, invstd, batch_stats } => {
            let xv = val(*x);
            let gv = val(*gamma);
            let (n, c, s) = ncs(xv.shape());
            let m = T::from_usize(n * s).unwrap();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let r = (b * c + ch) * s..(b * c + ch + 1) * s;
                    for (&dy, &xx) in g.data()[r.clone()].iter().zip(&xv.data()[r]) {
                        dbeta[ch] += dy;
                        dgamma[ch] += dy * (xx - mean[ch]) * invstd[ch];
                    }
                }
            }
            if req(*x) {
                let mut dx = vec![T::zero(); n * c * s];
                for b in 0..n {
                    for ch in 0..c {
                        let scale = gv.data()[ch] * invstd[ch];
                        let r = (b * c + ch) * s..(b * c + ch + 1) * s;
                        for ((o, &dy), &xx) in dx[r.clone()].iter_mut().zip(&g.data()[r.clone()]).zip(&xv.data()[r]) {
                            *o = if *batch_stats {
                                let xhat = (xx - mean[ch]) * invstd[ch];
                                scale * (dy - (dbeta[ch] + xhat * dgamma[ch]) / m)
                            } else {
                                scale * dy
                            };
                        }
                    }
                }
                accumulate(nodes, grads, *x, Tensor::new(xv.shape().to_vec(), dx)?)?;
            }
            if req(*gamma) {
                accumulate(nodes, grads, *gamma, Tensor::new([c], dgamma)?)?;
            }
            if req(*beta) {
                accumulate(nodes, grads, *beta, Tensor::new([c], dbeta)?)?;
            }
        }
        Op::Relu(x) => {
            let d = g.zip_map(out, |d, y| if y > T::zero() { d } else { T::zero() })?;
            accumulate(nodes, grads, *x, d)?;
        }
        Op::LeakyRelu(x, slope) => {
            let slope = *slope;
            let d = g.zip_map(val(*x), |d, v| if v > T::zero() { d } else { d * slope })?;
            accumulate(nodes, grads, *x, d)?;
        }
        Op::Tanh(x) => {
            let d = g.zip_map(out, |d, y| d * (T::one() - y * y))?;
            accumulate(nodes, grads, *x, d)?;
        }
        Op::Sigmoid(x) => {
            let d = g.zip_map(out, |d, y| d * y * (T::one() - y))?;
            accumulate(nodes, grads, *x, d)?;
        }
        Op::AvgPool2(x) => {
            let xv = val(*x);
            let (n, c, h, w) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
            let (oh, ow) = (h / 2, w / 2);
            let quarter = T::from_f64_lossy(0.25);
            let mut dx = vec![T::zero(); xv.numel()];
            for p in 0..n * c {
                for y in 0..oh {
                    for xo in 0..ow {
                        let d = g.data()[(p * oh + y) * ow + xo] * quarter;
                        for (dy, dx_) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            dx[(p * h + 2 * y + dy) * w + 2 * xo + dx_] += d;
                        }
                    }
                }
            }
            accumulate(nodes, grads, *x, Tensor::new(xv.shape().to_vec(), dx)?)?;
        }
        Op::MaxPool2 { x, argmax } => {
            let xv = val(*x);
            let mut dx = vec![T::zero(); xv.numel()];
            for (&src, &d) in argmax.iter().zip(g.data()) {
                dx[src as usize] += d;
            }
            accumulate(nodes, grads, *x, Tensor::new(xv.shape().to_vec(), dx)?)?;
        }
        Op::GlobalAvgPool(x) => {
            let xv = val(*x);
            let (n, c, s) = ncs(xv.shape());
            let inv = T::one() / T::from_usize(s).unwrap();
            let mut dx = vec![T::zero(); xv.numel()];
            for p in 0..n * c {
                let d = g.data()[p] * inv;
                dx[p * s..(p + 1) * s].fill(d);
            }
            accumulate(nodes, grads, *x, Tensor::new(xv.shape().to_vec(), dx)?)?;
        }
        Op::Reshape(x) => {
            let shape = val(*x).shape().to_vec();
            accumulate(nodes, grads, *x, g.into_reshape(shape)?)?;
        }
        Op::Concat1 { inputs, widths } => {
            let (n, total, s) = ncs(g.shape());
            let mut offset = 0;
            for (&id, &c) in inputs.iter().zip(widths) {
                if req(id) {
                    let mut d = Vec::with_capacity(n * c * s);
                    for b in 0..n {
                        let start = (b * total + offset) * s;
                        d.extend_from_slice(&g.data()[start..start + c * s]);
                    }
                    accumulate(nodes, grads, id, Tensor::new(val(id).shape().to_vec(), d)?)?;
                }
                offset += c;
            }
        }
        Op::Narrow0 { x, start } => {
            let xv = val(*x);
            let r = xv.row_len();
            let mut dx = vec![T::zero(); xv.numel()];
            dx[start * r..start * r + g.numel()].copy_from_slice(g.data());
            accumulate(nodes, grads, *x, Tensor::new(xv.shape().to_vec(), dx)?)?;
        }
        Op::Gather0 { table, rows } => {
            let tv = val(*table);
            let r = tv.row_len();
            let mut dt = vec![T::zero(); tv.numel()];
            for (k, &row) in rows.iter().enumerate() {
                for (a, &b) in dt[row * r..(row + 1) * r].iter_mut().zip(&g.data()[k * r..(k + 1) * r]) {
                    *a += b;
                }
            }
            accumulate(nodes, grads, *table, Tensor::new(tv.shape().to_vec(), dt)?)?;
        }
        Op::SumSqDiff(a, b) => {
            let two = T::from_f64_lossy(2.0) * g.item();
            let diff = val(*a).zip_map(val(*b), |x, y| (x - y) * two)?;
            if req(*b) {
                accumulate(nodes, grads, *b, diff.map(|d| -d))?;
            }
            accumulate(nodes, grads, *a, diff)?;
        }
        Op::SumAll(x) => {
            let xv = val(*x);
            accumulate(nodes, grads, *x, Tensor::full(xv.shape().to_vec(), g.item()))?;
        }
        Op::BceWithLogits { x, target } => {
            let xv = val(*x);
            let scale = g.item() / T::from_usize(xv.numel()).unwrap();
            let d = xv
                .data()
                .iter()
                .zip(target)
                .map(|(&z, &t)| (sigmoid(z) - t) * scale)
                .collect();
            accumulate(nodes, grads, *x, Tensor::new(xv.shape().to_vec(), d)?)?;
        }
        Op::CrossEntropy { x, labels, probs } => {
            let xv = val(*x);
            let k = xv.dim(1);
            let scale = g.item() / T::from_usize(labels.len()).unwrap();
            let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
            for (row, &y) in labels.iter().enumerate() {
                d[row * k + y] -= scale;
            }
            accumulate(nodes, grads, *x, Tensor::new(xv.shape().to_vec(), d)?)?;
        }
    }
    Ok(())
}

fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Gradients produced by one backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    bound: HashMap<(u64, usize), usize>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf node (inputs and parameters).
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Option<&Tensor<T>> {
        let node = *self.bound.get(&(store.uid(), id.index()))?;
        self.grads[node].as_ref()
    }

    /// Largest absolute gradient entry over the parameters of `store`.
    pub fn max_abs_for(&self, store: &ParamStore<T>) -> T {
        store
            .ids()
            .filter_map(|id| self.param(store, id))
            .fold(T::zero(), |m, g| m.max(g.max_abs()))
    }
}

impl<'g, T: Real> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.req(self.id)
    }

    /// Copy of the value, detached from the tape.
    pub fn to_tensor(&self) -> Tensor<T> {
        (*self.value()).clone()
    }

    fn emit(&self, value: Tensor<T>, op: Op<T>, req: bool) -> Var<'g, T> {
        self.graph.push(value, op, req)
    }

    fn same_graph(&self, other: &Var<'g, T>, op: &'static str) -> Result<()> {
        if !std::ptr::eq(self.graph, other.graph) {
            return shape_err(op, "operands belong to different graphs");
        }
        Ok(())
    }

    pub fn add(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.same_graph(&other, "add")?;
        let v = self.value().zip_map(&other.value(), |a, b| a + b)?;
        let req = self.requires_grad() || other.requires_grad();
        Ok(self.emit(v, Op::Add(self.id, other.id), req))
    }

    pub fn sub(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.same_graph(&other, "sub")?;
        let v = self.value().zip_map(&other.value(), |a, b| a - b)?;
        let req = self.requires_grad() || other.requires_grad();
        Ok(self.emit(v, Op::Sub(self.id, other.id), req))
    }

    pub fn mul(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.same_graph(&other, "mul")?;
        let v = self.value().zip_map(&other.value(), |a, b| a * b)?;
        let req = self.requires_grad() || other.requires_grad();
        Ok(self.emit(v, Op::Mul(self.id, other.id), req))
    }

    pub fn scale(&self, c: f64) -> Var<'g, T> {
        let c = T::from_f64_lossy(c);
        self.emit(self.value().scale(c), Op::Scale(self.id, c), self.requires_grad())
    }

    /// Adds a per-channel bias along dimension 1.
    pub fn bias_add(&self, bias: Var<'g, T>) -> Result<Var<'g, T>> {
        let (xv, bv) = (self.value(), bias.value());
        if xv.rank() < 2 || bv.shape() != [xv.dim(1)] {
            return shape_err("bias_add", format!("{:?} + {:?}", xv.shape(), bv.shape()));
        }
        let (n, c, s) = ncs(xv.shape());
        let mut data = xv.data().to_vec();
        for b in 0..n {
            for ch in 0..c {
                let bb = bv.data()[ch];
                for v in &mut data[(b * c + ch) * s..(b * c + ch + 1) * s] {
                    *v += bb;
                }
            }
        }
        let req = self.requires_grad() || bias.requires_grad();
        Ok(self.emit(Tensor::new(xv.shape().to_vec(), data)?, Op::BiasAdd { x: self.id, b: bias.id }, req))
    }

    /// `x (n, in) * w^T` with `w (out, in)`.
    pub fn linear(&self, w: Var<'g, T>) -> Result<Var<'g, T>> {
        let (xv, wv) = (self.value(), w.value());
        if xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1) {
            return shape_err("linear", format!("{:?} x {:?}^T", xv.shape(), wv.shape()));
        }
        let (n, fin, fout) = (xv.dim(0), xv.dim(1), wv.dim(0));
        let mut y = vec![T::zero(); n * fout];
        gemm(false, true, n, fout, fin, T::one(), xv.data(), wv.data(), T::zero(), &mut y);
        let req = self.requires_grad() || w.requires_grad();
        Ok(self.emit(Tensor::new([n, fout], y)?, Op::Linear { x: self.id, w: w.id }, req))
    }

    /// 2-D convolution of `(n, c, h, w)` with a `(o, c, kh, kw)` kernel.
    pub fn conv2d(&self, w: Var<'g, T>, stride: usize, pad: usize) -> Result<Var<'g, T>> {
        let (xv, wv) = (self.value(), w.value());
        if xv.rank() != 4 || wv.rank() != 4 || xv.dim(1) != wv.dim(1) || xv.dim(0) == 0 {
            return shape_err("conv2d", format!("input {:?} kernel {:?}", xv.shape(), wv.shape()));
        }
        let geom = ConvGeom::forward(xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(2), wv.dim(3), stride, pad)
            .ok_or_else(|| crate::NnError::Shape {
                op: "conv2d",
                msg: format!("kernel {:?} does not fit input {:?}", wv.shape(), xv.shape()),
            })?;
        let (n, o) = (xv.dim(0), wv.dim(0));
        let y = kernels::conv2d_forward(&geom, n, o, xv.data(), wv.data());
        let req = self.requires_grad() || w.requires_grad();
        let shape = [n, o, geom.oh, geom.ow];
        Ok(self.emit(Tensor::new(shape, y)?, Op::Conv2d { x: self.id, w: w.id, geom }, req))
    }

    /// Transposed convolution with a `(cin, cout, kh, kw)` kernel.
    pub fn conv_transpose2d(&self, w: Var<'g, T>, stride: usize, pad: usize) -> Result<Var<'g, T>> {
        let (xv, wv) = (self.value(), w.value());
        if xv.rank() != 4 || wv.rank() != 4 || xv.dim(1) != wv.dim(0) || xv.dim(0) == 0 {
            return shape_err("conv_transpose2d", format!("input {:?} kernel {:?}", xv.shape(), wv.shape()));
        }
        let geom = ConvGeom::transposed(wv.dim(1), xv.dim(2), xv.dim(3), wv.dim(2), wv.dim(3), stride, pad)
            .ok_or_else(|| crate::NnError::Shape {
                op: "conv_transpose2d",
                msg: format!("kernel {:?} with input {:?}", wv.shape(), xv.shape()),
            })?;
        let (n, cin) = (xv.dim(0), xv.dim(1));
        let y = kernels::conv_transpose2d_forward(&geom, n, cin, xv.data(), wv.data());
        let req = self.requires_grad() || w.requires_grad();
        let shape = [n, geom.c, geom.h, geom.w];
        Ok(self.emit(Tensor::new(shape, y)?, Op::ConvTranspose2d { x: self.id, w: w.id, geom }, req))
    }

    /// Batch normalization along dimension 1. With `running == None` the
    /// statistics of this batch are used and returned as `(mean, biased var)`.
    pub fn batch_norm(
        &self,
        gamma: Var<'g, T>,
        beta: Var<'g, T>,
        running: Option<(&Tensor<T>, &Tensor<T>)>,
        eps: f64,
    ) -> Result<(Var<'g, T>, Vec<T>, Vec<T>)> {
        let xv = self.value();
        if xv.rank() < 2 || xv.dim(0) == 0 {
            return shape_err("batch_norm", format!("input {:?}", xv.shape()));
        }
        let (n, c, s) = ncs(xv.shape());
        let (gv, bv) = (gamma.value(), beta.value());
        if gv.shape() != [c] || bv.shape() != [c] {
            return shape_err("batch_norm", format!("affine {:?} for input {:?}", gv.shape(), xv.shape()));
        }
        let (mean, var) = match running {
            None => kernels::channel_mean_var(xv.data(), n, c, s),
            Some((m, v)) => (m.data().to_vec(), v.data().to_vec()),
        };
        let eps = T::from_f64_lossy(eps);
        let invstd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut y = xv.data().to_vec();
        for b in 0..n {
            for ch in 0..c {
                let (mu, is, ga, be) = (mean[ch], invstd[ch], gv.data()[ch], bv.data()[ch]);
                for v in &mut y[(b * c + ch) * s..(b * c + ch + 1) * s] {
                    *v = ga * (*v - mu) * is + be;
                }
            }
        }
        let req = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        let op = Op::BatchNorm {
            x: self.id,
            gamma: gamma.id,
            beta: beta.id,
            mean: mean.clone(),
            invstd,
            batch_stats: running.is_none(),
        };
        let out = self.emit(Tensor::new(xv.shape().to_vec(), y)?, op, req);
        Ok((out, mean, var))
    }

    pub fn relu(&self) -> Var<'g, T> {
        let v = self.value().map(|x| x.max(T::zero()));
        self.emit(v, Op::Relu(self.id), self.requires_grad())
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'g, T> {
        let s = T::from_f64_lossy(slope);
        let v = self.value().map(|x| if x > T::zero() { x } else { x * s });
        self.emit(v, Op::LeakyRelu(self.id, s), self.requires_grad())
    }

    pub fn tanh(&self) -> Var<'g, T> {
        let v = self.value().map(|x| x.tanh());
        self.emit(v, Op::Tanh(self.id), self.requires_grad())
    }

    pub fn sigmoid(&self) -> Var<'g, T> {
        let v = self.value().map(sigmoid);
        self.emit(v, Op::Sigmoid(self.id), self.requires_grad())
    }

    fn pool_dims(&self, op: &'static str) -> Result<(Arc<Tensor<T>>, usize, usize, usize)> {
        let xv = self.value();
        if xv.rank() != 4 || xv.dim(2) < 2 || xv.dim(3) < 2 {
            return shape_err(op, format!("input {:?}", xv.shape()));
        }
        let (n, c, h, w) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
        Ok((xv, n * c, h, w))
    }

    /// 2x2 average pooling with stride 2 (trailing odd rows/cols dropped).
    pub fn avg_pool2(&self) -> Result<Var<'g, T>> {
        let (xv, planes, h, w) = self.pool_dims("avg_pool2")?;
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::from_f64_lossy(0.25);
        let x = xv.data();
        let mut y = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            for r in 0..oh {
                for c in 0..ow {
                    let i = (p * h + 2 * r) * w + 2 * c;
                    y.push((x[i] + x[i + 1] + x[i + w] + x[i + w + 1]) * quarter);
                }
            }
        }
        let shape = [xv.dim(0), xv.dim(1), oh, ow];
        Ok(self.emit(Tensor::new(shape, y)?, Op::AvgPool2(self.id), self.requires_grad()))
    }

    /// 2x2 max pooling with stride 2.
    pub fn max_pool2(&self) -> Result<Var<'g, T>> {
        let (xv, planes, h, w) = self.pool_dims("max_pool2")?;
        let (oh, ow) = (h / 2, w / 2);
        let x = xv.data();
        let mut y = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            for r in 0..oh {
                for c in 0..ow {
                    let i = (p * h + 2 * r) * w + 2 * c;
                    let mut best = i;
                    for j in [i + 1, i + w, i + w + 1] {
                        if x[j] > x[best] {
                            best = j;
                        }
                    }
                    y.push(x[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let shape = [xv.dim(0), xv.dim(1), oh, ow];
        Ok(self.emit(Tensor::new(shape, y)?, Op::MaxPool2 { x: self.id, argmax }, self.requires_grad()))
    }

    /// Mean over all spatial positions: `(n, c, h, w) -> (n, c)`.
    pub fn global_avg_pool(&self) -> Result<Var<'g, T>> {
        let xv = self.value();
        if xv.rank() != 4 {
            return shape_err("global_avg_pool", format!("input {:?}", xv.shape()));
        }
        let (n, c, s) = ncs(xv.shape());
        let inv = T::one() / T::from_usize(s).unwrap();
        let y = xv.data().chunks(s).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        Ok(self.emit(Tensor::new([n, c], y)?, Op::GlobalAvgPool(self.id), self.requires_grad()))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g, T>> {
        let v = self.value().reshape(shape.to_vec())?;
        Ok(self.emit(v, Op::Reshape(self.id), self.requires_grad()))
    }

    /// `(n, ...) -> (n, rest)`.
    pub fn flatten(&self) -> Result<Var<'g, T>> {
        let shape = self.shape();
        if shape.is_empty() {
            return shape_err("flatten", "scalar input");
        }
        let rest: usize = shape[1..].iter().product();
        self.reshape(&[shape[0], rest])
    }

    pub fn narrow0(&self, start: usize, len: usize) -> Result<Var<'g, T>> {
        let v = self.value().narrow0(start, len)?;
        Ok(self.emit(v, Op::Narrow0 { x: self.id, start }, self.requires_grad()))
    }

    /// Row lookup in a `(rows, dim)` table, as used by embeddings.
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Var<'g, T>> {
        let v = self.value().select0(rows)?;
        Ok(self.emit(v, Op::Gather0 { table: self.id, rows: rows.to_vec() }, self.requires_grad()))
    }

    /// Sum of squared elementwise differences; a scalar.
    pub fn sum_sq_diff(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.same_graph(&other, "sum_sq_diff")?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return shape_err("sum_sq_diff", format!("{:?} vs {:?}", a.shape(), b.shape()));
        }
        let s: T = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let req = self.requires_grad() || other.requires_grad();
        Ok(self.emit(Tensor::scalar(s), Op::SumSqDiff(self.id, other.id), req))
    }

    pub fn sum_all(&self) -> Var<'g, T> {
        let s = self.value().sum();
        self.emit(Tensor::scalar(s), Op::SumAll(self.id), self.requires_grad())
    }

    /// Mean binary cross-entropy of logits against `targets`.
    pub fn bce_with_logits(&self, targets: &[T]) -> Result<Var<'g, T>> {
        let xv = self.value();
        if xv.numel() != targets.len() || targets.is_empty() {
            return shape_err("bce_with_logits", format!("{} logits, {} targets", xv.numel(), targets.len()));
        }
        let total: T = xv
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (T::one() + (-z.abs()).exp()).ln())
            .sum();
        let loss = total / T::from_usize(targets.len()).unwrap();
        let op = Op::BceWithLogits { x: self.id, target: targets.to_vec() };
        Ok(self.emit(Tensor::scalar(loss), op, self.requires_grad()))
    }

    /// Mean softmax cross-entropy of `(n, k)` logits against class labels.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Var<'g, T>> {
        let xv = self.value();
        if xv.rank() != 2 || xv.dim(0) != labels.len() || labels.is_empty() {
            return shape_err("cross_entropy", format!("logits {:?}, {} labels", xv.shape(), labels.len()));
        }
        let k = xv.dim(1);
        let mut probs = Vec::with_capacity(xv.numel());
        let mut total = T::zero();
        for (row, &y) in xv.data().chunks(k).zip(labels) {
            if y >= k {
                return shape_err("cross_entropy", format!("label {} with {} classes", y, k));
            }
            let mx = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let z: T = row.iter().map(|&v| (v - mx).exp()).sum();
            total += z.ln() + mx - row[y];
            probs.extend(row.iter().map(|&v| (v - mx).exp() / z));
        }
        let loss = total / T::from_usize(labels.len()).unwrap();
        let op = Op::CrossEntropy { x: self.id, labels: labels.to_vec(), probs };
        Ok(self.emit(Tensor::scalar(loss), op, self.requires_grad()))
    }
}
