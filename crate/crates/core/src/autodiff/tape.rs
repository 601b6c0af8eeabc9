//! Wengert-list tape. Nodes are appended in evaluation order, so node ids
//! are already a topological order and backward is a single reverse sweep.

use std::cell::RefCell;
use std::rc::Rc;

use rayon::prelude::*;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-6;
const PAR_MATMUL_WORK: usize = 1 << 16;

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Scale(usize, T),
    Softmax(usize),
    LogSoftmax(usize),
    LayerNorm {
        x: usize,
        affine: Option<(usize, usize)>,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu(usize),
    Sum(usize),
    Mean(usize),
    MeanRows(usize),
    Reshape(usize),
    Transpose(usize),
    SliceCols { x: usize, start: usize },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows { x: usize, idx: Vec<usize> },
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording context for one forward/backward pass.
pub struct Tape<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    checked: bool,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real = f32> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch { op, left: a.to_vec(), right: b.to_vec() }
}

fn matmul_kernel<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    let row = |(i, out_row): (usize, &mut [T])| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    };
    if m * k * n >= PAR_MATMUL_WORK && m > 1 {
        out.par_chunks_mut(n.max(1)).enumerate().for_each(row);
    } else {
        out.chunks_mut(n.max(1)).enumerate().for_each(row);
    }
    out
}

fn transpose_data<T: Real>(a: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn gelu_parts<T: Real>(x: T) -> (T, T) {
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let c = T::lit(0.044715);
    let half = T::lit(0.5);
    let one = T::one();
    let u = k * (x + c * x * x * x);
    let th = u.tanh();
    let y = half * x * (one + th);
    let dy = half * (one + th) + half * x * (one - th * th) * k * (one + T::lit(3.0) * c * x * x);
    (y, dy)
}

impl<T: Real> Tape<T> {
    /// Tape with checked mode on: every op rejects non-finite results.
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), checked: true }
    }

    pub fn unchecked() -> Self {
        Self { nodes: RefCell::new(Vec::new()), checked: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op: Op::Leaf, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn push(&self, op_name: &'static str, value: Tensor<T>, op: Op<T>, parents: &[usize]) -> Result<Var<'_, T>> {
        if self.checked && !value.all_finite() {
            return Err(Error::NonFinite(op_name));
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Ok(Var { tape: self, id: nodes.len() - 1 })
    }

    /// Reverse sweep from a scalar `loss`. Gradients of fan-out nodes are summed.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let loss_value = &nodes[loss.id].value;
        if loss_value.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::full(loss_value.shape(), T::one()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (parent, contrib) in backward_op(&nodes, node, &g)? {
                if !nodes[parent].requires_grad {
                    continue;
                }
                match &mut grads[parent] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn backward_op<T: Real>(nodes: &[Node<T>], node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(usize, Tensor<T>)>> {
    let val = |id: usize| -> &Tensor<T> { &nodes[id].value };
    let gd = g.data();
    Ok(match &node.op {
        Op::Leaf => Vec::new(),
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).dims2()?;
            let n = val(*b).dims2()?.1;
            let bt = transpose_data(val(*b).data(), k, n);
            let at = transpose_data(val(*a).data(), m, k);
            vec![
                (*a, Tensor::new(vec![m, k], matmul_kernel(gd, &bt, m, n, k))?),
                (*b, Tensor::new(vec![k, n], matmul_kernel(&at, gd, k, m, n))?),
            ]
        }
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let ga = Tensor::new(g.shape().to_vec(), gd.iter().zip(bv.data()).map(|(&x, &y)| x * y).collect())?;
            let gb = Tensor::new(g.shape().to_vec(), gd.iter().zip(av.data()).map(|(&x, &y)| x * y).collect())?;
            vec![(*a, ga), (*b, gb)]
        }
        Op::AddBias(x, b) => {
            let d = val(*b).numel();
            let mut gb = vec![T::zero(); d];
            for row in gd.chunks(d) {
                for (acc, &v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            vec![(*x, g.clone()), (*b, Tensor::new(val(*b).shape().to_vec(), gb)?)]
        }
        Op::Scale(x, c) => vec![(*x, g.map(|v| v * *c))],
        Op::Softmax(x) => {
            let y = node.value.data();
            let d = *node.value.shape().last().unwrap_or(&1);
            let mut out = vec![T::zero(); y.len()];
            for ((o, yr), gr) in out.chunks_mut(d).zip(y.chunks(d)).zip(gd.chunks(d)) {
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for ((ov, &yv), &gv) in o.iter_mut().zip(yr).zip(gr) {
                    *ov = yv * (gv - dot);
                }
            }
            vec![(*x, Tensor::new(val(*x).shape().to_vec(), out)?)]
        }
        Op::LogSoftmax(x) => {
            let y = node.value.data();
            let d = *node.value.shape().last().unwrap_or(&1);
            let mut out = vec![T::zero(); y.len()];
            for ((o, yr), gr) in out.chunks_mut(d).zip(y.chunks(d)).zip(gd.chunks(d)) {
                let gsum: T = gr.iter().copied().sum();
                for ((ov, &yv), &gv) in o.iter_mut().zip(yr).zip(gr) {
                    *ov = gv - yv.exp() * gsum;
                }
            }
            vec![(*x, Tensor::new(val(*x).shape().to_vec(), out)?)]
        }
        Op::LayerNorm { x, affine, xhat, inv_std } => {
            let d = *val(*x).shape().last().unwrap_or(&1);
            let gamma: Option<&[T]> = affine.map(|(gm, _)| nodes[gm].value.data());
            let mut dx = vec![T::zero(); xhat.len()];
            let mut dgamma = vec![T::zero(); d];
            let mut dbeta = vec![T::zero(); d];
            let inv_d = T::lit(1.0 / d as f64);
            for (r, ((dxr, xr), gr)) in dx.chunks_mut(d).zip(xhat.chunks(d)).zip(gd.chunks(d)).enumerate() {
                let mut dxhat = vec![T::zero(); d];
                for j in 0..d {
                    dxhat[j] = gr[j] * gamma.map_or(T::one(), |gm| gm[j]);
                    dgamma[j] += gr[j] * xr[j];
                    dbeta[j] += gr[j];
                }
                let mean_d: T = dxhat.iter().copied().sum::<T>() * inv_d;
                let mean_dx: T = dxhat.iter().zip(xr).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
                for j in 0..d {
                    dxr[j] = inv_std[r] * (dxhat[j] - mean_d - xr[j] * mean_dx);
                }
            }
            let mut out = vec![(*x, Tensor::new(val(*x).shape().to_vec(), dx)?)];
            if let Some((gm, bt)) = affine {
                out.push((*gm, Tensor::new(val(*gm).shape().to_vec(), dgamma)?));
                out.push((*bt, Tensor::new(val(*bt).shape().to_vec(), dbeta)?));
            }
            out
        }
        Op::Gelu(x) => {
            let xv = val(*x);
            let data = xv.data().iter().zip(gd).map(|(&a, &gv)| gv * gelu_parts(a).1).collect();
            vec![(*x, Tensor::new(xv.shape().to_vec(), data)?)]
        }
        Op::Sum(x) => vec![(*x, Tensor::full(val(*x).shape(), g.item()))],
        Op::Mean(x) => {
            let n = T::lit(val(*x).numel() as f64);
            vec![(*x, Tensor::full(val(*x).shape(), g.item() / n))]
        }
        Op::MeanRows(x) => {
            let (r, c) = val(*x).dims2()?;
            let inv = T::lit(1.0 / r as f64);
            let data = (0..r * c).map(|i| gd[i % c] * inv).collect();
            vec![(*x, Tensor::new(vec![r, c], data)?)]
        }
        Op::Reshape(x) => vec![(*x, g.reshape(val(*x).shape())?)],
        Op::Transpose(x) => {
            let (r, c) = val(*x).dims2()?;
            vec![(*x, Tensor::new(vec![r, c], transpose_data(gd, c, r))?)]
        }
        Op::SliceCols { x, start } => {
            let (r, c) = val(*x).dims2()?;
            let w = g.dims2()?.1;
            let mut out = vec![T::zero(); r * c];
            for i in 0..r {
                out[i * c + start..i * c + start + w].copy_from_slice(&gd[i * w..(i + 1) * w]);
            }
            vec![(*x, Tensor::new(vec![r, c], out)?)]
        }
        Op::ConcatCols(parts) => {
            let total = g.dims2()?.1;
            let mut offset = 0;
            let mut out = Vec::with_capacity(parts.len());
            for &p in parts {
                let (r, c) = val(p).dims2()?;
                let mut d = Vec::with_capacity(r * c);
                for i in 0..r {
                    d.extend_from_slice(&gd[i * total + offset..i * total + offset + c]);
                }
                offset += c;
                out.push((p, Tensor::new(vec![r, c], d)?));
            }
            out
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            let mut out = Vec::with_capacity(parts.len());
            for &p in parts {
                let n = val(p).numel();
                out.push((p, Tensor::new(val(p).shape().to_vec(), gd[offset..offset + n].to_vec())?));
                offset += n;
            }
            out
        }
        Op::GatherRows { x, idx } => {
            let (r, c) = val(*x).dims2()?;
            let mut out = vec![T::zero(); r * c];
            for (k, &i) in idx.iter().enumerate() {
                for j in 0..c {
                    out[i * c + j] += gd[k * c + j];
                }
            }
            vec![(*x, Tensor::new(vec![r, c], out)?)]
        }
    })
}

/// Gradients from one backward sweep, indexed by node.
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: Var<'_, T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.value().shape()))
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> T {
        self.value().item()
    }

    fn same_tape(&self, other: &Var<'t, T>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        let (m, k) = a.dims2()?;
        let (k2, n) = b.dims2()?;
        if k != k2 {
            return Err(mismatch("matmul", a.shape(), b.shape()));
        }
        let out = Tensor::new(vec![m, n], matmul_kernel(a.data(), b.data(), m, k, n))?;
        self.tape.push("matmul", out, Op::MatMul(self.id, other.id), &[self.id, other.id])
    }

    fn zip(&self, other: &Var<'t, T>, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(mismatch(name, a.shape(), b.shape()));
        }
        Tensor::new(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.zip(other, "add", |x, y| x + y)?;
        self.tape.push("add", out, Op::Add(self.id, other.id), &[self.id, other.id])
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.zip(other, "sub", |x, y| x - y)?;
        self.tape.push("sub", out, Op::Sub(self.id, other.id), &[self.id, other.id])
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.zip(other, "mul", |x, y| x * y)?;
        self.tape.push("mul", out, Op::Mul(self.id, other.id), &[self.id, other.id])
    }

    /// `[n, d] + [d]`, the only broadcast the engine supports.
    pub fn add_bias(&self, bias: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(bias);
        let (x, b) = (self.value(), bias.value());
        let d = b.numel();
        if b.shape().len() != 1 || x.shape().last() != Some(&d) {
            return Err(mismatch("add_bias", x.shape(), b.shape()));
        }
        let data = x.data().iter().enumerate().map(|(i, &v)| v + b.data()[i % d]).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.tape.push("add_bias", out, Op::AddBias(self.id, bias.id), &[self.id, bias.id])
    }

    pub fn scale(&self, c: T) -> Result<Var<'t, T>> {
        let out = self.value().map(|v| v * c);
        self.tape.push("scale", out, Op::Scale(self.id, c), &[self.id])
    }

    fn last_dim(&self) -> Result<usize> {
        let s = self.shape();
        match s.last() {
            Some(&d) if d > 0 => Ok(d),
            _ => Err(Error::InvalidArgument(format!("op needs a non-empty last axis, got {s:?}"))),
        }
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Var<'t, T>> {
        let d = self.last_dim()?;
        let x = self.value();
        let mut out = Vec::with_capacity(x.numel());
        for row in x.data().chunks(d) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let e: Vec<T> = row.iter().map(|&v| (v - mx).exp()).collect();
            let s: T = e.iter().copied().sum();
            out.extend(e.into_iter().map(|v| v / s));
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        self.tape.push("softmax", out, Op::Softmax(self.id), &[self.id])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Result<Var<'t, T>> {
        let d = self.last_dim()?;
        let x = self.value();
        let mut out = Vec::with_capacity(x.numel());
        for row in x.data().chunks(d) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            out.extend(row.iter().map(|&v| v - lse));
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        self.tape.push("log_softmax", out, Op::LogSoftmax(self.id), &[self.id])
    }

    /// Layer normalization over the last axis (eps 1e-6), with optional
    /// affine `gamma`/`beta` of shape `[d]`.
    pub fn layer_norm(&self, affine: Option<(&Var<'t, T>, &Var<'t, T>)>) -> Result<Var<'t, T>> {
        let d = self.last_dim()?;
        if let Some((g, b)) = affine {
            self.same_tape(g);
            self.same_tape(b);
            if g.shape() != [d] || b.shape() != [d] {
                return Err(mismatch("layer_norm", &self.shape(), &g.shape()));
            }
        }
        let x = self.value();
        let gamma = affine.map(|(g, _)| g.value());
        let beta = affine.map(|(_, b)| b.value());
        let eps = T::lit(LAYER_NORM_EPS);
        let inv_d = T::lit(1.0 / d as f64);
        let mut xhat = Vec::with_capacity(x.numel());
        let mut inv_std = Vec::with_capacity(x.numel() / d);
        let mut out = Vec::with_capacity(x.numel());
        for row in x.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(match (&gamma, &beta) {
                    (Some(g), Some(b)) => h * g.data()[j] + b.data()[j],
                    _ => h,
                });
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        let (parents, aff) = match affine {
            Some((g, b)) => (vec![self.id, g.id, b.id], Some((g.id, b.id))),
            None => (vec![self.id], None),
        };
        self.tape.push("layer_norm", out, Op::LayerNorm { x: self.id, affine: aff, xhat, inv_std }, &parents)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Result<Var<'t, T>> {
        let out = self.value().map(|v| gelu_parts(v).0);
        self.tape.push("gelu", out, Op::Gelu(self.id), &[self.id])
    }

    pub fn sum(&self) -> Result<Var<'t, T>> {
        let s: T = self.value().data().iter().copied().sum();
        self.tape.push("sum", Tensor::scalar(s), Op::Sum(self.id), &[self.id])
    }

    pub fn mean(&self) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.numel() == 0 {
            return Err(Error::InvalidArgument("mean of an empty tensor".into()));
        }
        let s: T = x.data().iter().copied().sum::<T>() / T::lit(x.numel() as f64);
        self.tape.push("mean", Tensor::scalar(s), Op::Mean(self.id), &[self.id])
    }

    /// Column means of a rank-2 tensor, shape `[1, cols]`.
    pub fn mean_rows(&self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (r, c) = x.dims2()?;
        if r == 0 {
            return Err(Error::InvalidArgument("mean_rows of zero rows".into()));
        }
        let mut out = vec![T::zero(); c];
        for row in x.data().chunks(c) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = T::lit(1.0 / r as f64);
        let out = Tensor::new(vec![1, c], out.into_iter().map(|v| v * inv).collect())?;
        self.tape.push("mean_rows", out, Op::MeanRows(self.id), &[self.id])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let out = self.value().reshape(shape)?;
        self.tape.push("reshape", out, Op::Reshape(self.id), &[self.id])
    }

    pub fn transpose(&self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (r, c) = x.dims2()?;
        let out = Tensor::new(vec![c, r], transpose_data(x.data(), r, c))?;
        self.tape.push("transpose", out, Op::Transpose(self.id), &[self.id])
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (r, c) = x.dims2()?;
        if start + len > c {
            return Err(mismatch("slice_cols", x.shape(), &[start, len]));
        }
        let mut out = Vec::with_capacity(r * len);
        for row in x.data().chunks(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let out = Tensor::new(vec![r, len], out)?;
        self.tape.push("slice_cols", out, Op::SliceCols { x: self.id, start }, &[self.id])
    }

    /// Rows `idx` of a rank-2 tensor, repeats allowed.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let (r, c) = x.dims2()?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(mismatch("gather_rows", x.shape(), &[bad]));
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&x.data()[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(vec![idx.len(), c], out)?;
        self.tape.push("gather_rows", out, Op::GatherRows { x: self.id, idx: idx.to_vec() }, &[self.id])
    }
}

/// Column-wise concatenation of rank-2 tensors with equal row counts.
pub fn concat_cols<'t, T: Real>(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let first = parts.first().ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
    let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
    let r = values[0].dims2()?.0;
    let mut widths = Vec::with_capacity(parts.len());
    for v in &values {
        let (vr, vc) = v.dims2()?;
        if vr != r {
            return Err(mismatch("concat_cols", values[0].shape(), v.shape()));
        }
        widths.push(vc);
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(r * total);
    for i in 0..r {
        for (v, &w) in values.iter().zip(&widths) {
            out.extend_from_slice(&v.data()[i * w..(i + 1) * w]);
        }
    }
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let out = Tensor::new(vec![r, total], out)?;
    first.tape.push("concat_cols", out, Op::ConcatCols(ids.clone()), &ids)
}

/// Row-wise concatenation of rank-2 tensors with equal column counts.
pub fn concat_rows<'t, T: Real>(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let first = parts.first().ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
    let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
    let c = values[0].dims2()?.1;
    let mut rows = 0;
    let mut out = Vec::new();
    for v in &values {
        let (vr, vc) = v.dims2()?;
        if vc != c {
            return Err(mismatch("concat_rows", values[0].shape(), v.shape()));
        }
        rows += vr;
        out.extend_from_slice(v.data());
    }
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let out = Tensor::new(vec![rows, c], out)?;
    first.tape.push("concat_rows", out, Op::ConcatRows(ids.clone()), &ids)
}
