//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every forward operation in execution order. Nodes are
//! appended only after their inputs exist, so the node list is already a
//! topological order and [`Tape::backward`] is a single reverse sweep.
//!
//! Parameters live outside the tape in a borrowed [`ParamStore`]; reading a
//! parameter never copies it, and gradients for parameters are written into
//! a [`ParamGrads`] buffer. Sparse reads (embedding gather, factor-row and
//! bias lookups) scatter their gradients straight into that buffer.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::KernelError;
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tensor::{self, Tensor};

/// A node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradient rules that can be deliberately perturbed, used to prove the
/// gradient checker catches broken rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultRule {
    /// Adds the offset to every filter-gradient coordinate of `conv1d`.
    Conv1dFilters,
    /// Adds the offset to the left-operand gradient of `matmul`.
    MatMulLeft,
    /// Adds the offset to the first-operand gradient of `hadamard`.
    Hadamard,
    /// Adds the offset to every scattered embedding-row gradient.
    Gather,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fault {
    pub rule: FaultRule,
    pub offset: f64,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    /// Columns of a `D×T` matrix taken from rows of a `V×D` parameter.
    GatherColumns { param: ParamId, rows: Vec<u32> },
    ParamRow { param: ParamId, row: usize },
    ParamElem { param: ParamId, index: usize },
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Conv1d(Var, Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    WeightedSum(Var, Var),
    Concat(Var, Var),
    Hadamard(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Stack(Vec<Var>),
    Mse(Var, Var),
}

#[derive(Debug, Clone)]
enum Value {
    Owned(Tensor),
    Param(ParamId),
}

#[derive(Debug, Clone)]
struct Node {
    value: Value,
    op: Op,
}

static NO_PARAMS: ParamStore = ParamStore::new();

/// Records forward operations for one backward pass.
#[derive(Debug)]
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    relu_margin: f64,
    fault: Option<Fault>,
}

/// Result of a backward pass: parameter gradients plus adjoints of every
/// non-parameter leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: ParamGrads,
    leaves: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Adjoint of a leaf created with [`Tape::leaf`]; zeros if the loss does
    /// not depend on it.
    pub fn wrt(&self, tape: &Tape<'_>, v: Var) -> Tensor {
        match self.leaves.get(v.0).and_then(Option::as_ref) {
            Some(t) => t.clone(),
            None => Tensor::zeros(tape.value(v).shape()),
        }
    }
}

impl Tape<'static> {
    /// A tape with no parameters, for standalone tensor computations.
    pub fn detached() -> Self {
        Tape::new(&NO_PARAMS)
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            relu_margin: f64::INFINITY,
            fault: None,
        }
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = Some(fault);
        self
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest `|x|` seen at any ReLU input so far.
    pub fn relu_margin(&self) -> f64 {
        self.relu_margin
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(p) => self.params.get(*p),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var, KernelError> {
        let value = value.check_finite(name)?;
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A differentiable input that is not a stored parameter.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var, KernelError> {
        self.push(value, Op::Leaf, "leaf")
    }

    /// Same as [`Tape::leaf`]; named for inputs that are never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, KernelError> {
        self.leaf(value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// `D×T` matrix whose column `t` is row `rows[t]` of parameter `table`.
    pub fn gather_columns(&mut self, table: ParamId, rows: &[u32]) -> Result<Var, KernelError> {
        let e = self.params.get(table);
        if e.rank() != 2 {
            return Err(KernelError::ShapeMismatch {
                op: "gather_columns",
                left: e.shape().to_vec(),
                right: vec![0, 0],
            });
        }
        let (v, d) = (e.shape()[0], e.shape()[1]);
        let t = rows.len();
        let mut out = vec![0.0; d * t];
        for (col, &r) in rows.iter().enumerate() {
            let r = r as usize;
            if r >= v {
                return Err(KernelError::IndexOutOfRange {
                    op: "gather_columns",
                    index: r,
                    size: v,
                });
            }
            for (c, &x) in e.row(r).iter().enumerate() {
                out[c * t + col] = x;
            }
        }
        let value = Tensor::new(vec![d, t], out)?;
        self.push(
            value,
            Op::GatherColumns {
                param: table,
                rows: rows.to_vec(),
            },
            "gather_columns",
        )
    }

    /// Row `row` of a parameter matrix, as a vector.
    pub fn param_row(&mut self, param: ParamId, row: usize) -> Result<Var, KernelError> {
        let t = self.params.get(param);
        if row >= t.shape()[0] {
            return Err(KernelError::IndexOutOfRange {
                op: "param_row",
                index: row,
                size: t.shape()[0],
            });
        }
        let value = Tensor::vector(t.row(row).to_vec());
        self.push(value, Op::ParamRow { param, row }, "param_row")
    }

    /// Element `index` of a parameter vector, as a one-element tensor.
    pub fn param_elem(&mut self, param: ParamId, index: usize) -> Result<Var, KernelError> {
        let t = self.params.get(param);
        if index >= t.len() {
            return Err(KernelError::IndexOutOfRange {
                op: "param_elem",
                index,
                size: t.len(),
            });
        }
        let value = Tensor::scalar(t.data()[index]);
        self.push(value, Op::ParamElem { param, index }, "param_elem")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        self.push(value, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, KernelError> {
        let value = tensor::transpose(self.value(a))?;
        self.push(value, Op::Transpose(a), "transpose")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, KernelError> {
        let value = self.value(a).clone().reshape(shape)?;
        self.push(value, Op::Reshape(a), "reshape")
    }

    pub fn conv1d(&mut self, input: Var, filters: Var, bias: Var) -> Result<Var, KernelError> {
        let value = tensor::conv1d(self.value(input), self.value(filters), self.value(bias))?;
        self.push(value, Op::Conv1d(input, filters, bias), "conv1d")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, KernelError> {
        let x = self.value(a);
        let margin = x
            .data()
            .iter()
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min);
        let value = x.map(tensor::relu);
        self.relu_margin = self.relu_margin.min(margin);
        self.push(value, Op::Relu(a), "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, KernelError> {
        let value = self.value(a).map(tensor::sigmoid);
        self.push(value, Op::Sigmoid(a), "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, KernelError> {
        let value = self.value(a).map(tensor::tanh);
        self.push(value, Op::Tanh(a), "tanh")
    }

    /// Softmax over a vector. Positions with `mask[i] == false` get exactly
    /// zero weight and zero gradient.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var, KernelError> {
        let value = tensor::softmax(self.value(a), mask)?;
        self.push(value, Op::Softmax(a), "softmax")
    }

    pub fn weighted_sum(&mut self, weights: Var, vectors: Var) -> Result<Var, KernelError> {
        let value = tensor::weighted_sum(self.value(weights), self.value(vectors))?;
        self.push(value, Op::WeightedSum(weights, vectors), "weighted_sum")
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rank() != 1 || y.rank() != 1 {
            return Err(KernelError::ShapeMismatch {
                op: "concat",
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
        let mut data = x.data().to_vec();
        data.extend_from_slice(y.data());
        self.push(Tensor::vector(data), Op::Concat(a, b), "concat")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), KernelError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(KernelError::ShapeMismatch {
                op,
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.same_shape("hadamard", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push(value, Op::Hadamard(a, b), "hadamard")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(value, Op::Add(a, b), "add")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, KernelError> {
        let value = self.value(a).map(|v| v * factor);
        self.push(value, Op::Scale(a, factor), "scale")
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var, KernelError> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    /// Stacks equally shaped tensors along a new leading dimension.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var, KernelError> {
        let first = parts.first().ok_or_else(|| {
            KernelError::Invalid(alloc::string::String::from("stack of zero tensors"))
        })?;
        let shape = self.value(*first).shape().to_vec();
        let mut data = Vec::with_capacity(parts.len() * self.value(*first).len());
        for &p in parts {
            let t = self.value(p);
            if t.shape() != shape.as_slice() {
                return Err(KernelError::ShapeMismatch {
                    op: "stack",
                    left: shape,
                    right: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.data());
        }
        let mut out_shape = vec![parts.len()];
        out_shape.extend_from_slice(&shape);
        let value = Tensor::new(out_shape, data)?;
        self.push(value, Op::Stack(parts.to_vec()), "stack")
    }

    /// Mean squared error between two equally shaped tensors.
    pub fn mse(&mut self, predictions: Var, targets: Var) -> Result<Var, KernelError> {
        self.same_shape("mse", predictions, targets)?;
        let (p, t) = (self.value(predictions), self.value(targets));
        if p.is_empty() {
            return Err(KernelError::Invalid(alloc::string::String::from(
                "mse over zero elements",
            )));
        }
        let n = p.len() as f64;
        let s: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        self.push(Tensor::scalar(s / n), Op::Mse(predictions, targets), "mse")
    }

    /// Backward pass from a scalar `loss`, returning fresh gradient buffers.
    pub fn backward(&self, loss: Var) -> Result<Gradients, KernelError> {
        let mut params = ParamGrads::zeros_like(self.params);
        let leaves = self.backward_impl(loss, &mut params, true)?;
        params.mask_frozen(self.params);
        Ok(Gradients { params, leaves })
    }

    /// Backward pass from a scalar `loss`, adding parameter gradients into
    /// `grads`. Frozen coordinates are not masked here; callers mask once
    /// after accumulation.
    pub fn backward_into(&self, loss: Var, grads: &mut ParamGrads) -> Result<(), KernelError> {
        self.backward_impl(loss, grads, false).map(|_| ())
    }

    fn backward_impl(
        &self,
        loss: Var,
        grads: &mut ParamGrads,
        keep_leaves: bool,
    ) -> Result<Vec<Option<Tensor>>, KernelError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(KernelError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        let mut leaves: Vec<Option<Tensor>> = Vec::new();
        if keep_leaves {
            leaves = vec![None; loss.0 + 1];
        }
        let fault = |rule: FaultRule| match self.fault {
            Some(f) if f.rule == rule => f.offset,
            _ => 0.0,
        };

        for idx in (0..=loss.0).rev() {
            let g = match adj[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    if keep_leaves {
                        leaves[idx] = Some(g);
                    }
                }
                Op::Param(p) => grads.get_mut(*p).add_assign(&g),
                Op::GatherColumns { param, rows } => {
                    let t = rows.len();
                    let off = fault(FaultRule::Gather);
                    let dst = grads.get_mut(*param);
                    for (col, &r) in rows.iter().enumerate() {
                        let row = dst.row_mut(r as usize);
                        for (c, slot) in row.iter_mut().enumerate() {
                            *slot += g.data()[c * t + col] + off;
                        }
                    }
                }
                Op::ParamRow { param, row } => {
                    let dst = grads.get_mut(*param).row_mut(*row);
                    for (d, s) in dst.iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
                Op::ParamElem { param, index } => {
                    grads.get_mut(*param).data_mut()[*index] += g.item();
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut da = tensor::matmul(&g, &tensor::transpose(bv)?)?;
                    let off = fault(FaultRule::MatMulLeft);
                    if off != 0.0 {
                        da.data_mut().iter_mut().for_each(|v| *v += off);
                    }
                    let db = tensor::matmul(&tensor::transpose(av)?, &g)?;
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Transpose(a) => accumulate(&mut adj, *a, tensor::transpose(&g)?),
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut adj, *a, g.reshape(&shape)?);
                }
                Op::Conv1d(x, f, b) => {
                    let (dx, mut df, db) =
                        conv1d_backward(self.value(*x), self.value(*f), &g);
                    let off = fault(FaultRule::Conv1dFilters);
                    if off != 0.0 {
                        df.data_mut().iter_mut().for_each(|v| *v += off);
                    }
                    accumulate(&mut adj, *x, dx);
                    accumulate(&mut adj, *f, df);
                    accumulate(&mut adj, *b, db);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let data = x
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *a, Tensor::new(x.shape().to_vec(), data)?);
                }
                Op::Sigmoid(a) => {
                    let y = self.value(Var(idx));
                    let data = y
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&yv, &gv)| gv * yv * (1.0 - yv))
                        .collect();
                    accumulate(&mut adj, *a, Tensor::new(y.shape().to_vec(), data)?);
                }
                Op::Tanh(a) => {
                    let y = self.value(Var(idx));
                    let data = y
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&yv, &gv)| gv * (1.0 - yv * yv))
                        .collect();
                    accumulate(&mut adj, *a, Tensor::new(y.shape().to_vec(), data)?);
                }
                Op::Softmax(a) => {
                    let y = self.value(Var(idx));
                    let dot: f64 = y.data().iter().zip(g.data()).map(|(p, q)| p * q).sum();
                    let data = y
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&yv, &gv)| yv * (gv - dot))
                        .collect();
                    accumulate(&mut adj, *a, Tensor::new(y.shape().to_vec(), data)?);
                }
                Op::WeightedSum(w, vs) => {
                    let (wv, vv) = (self.value(*w), self.value(*vs));
                    let k = vv.shape()[1];
                    let dw: Vec<f64> = (0..wv.len())
                        .map(|j| vv.row(j).iter().zip(g.data()).map(|(a, b)| a * b).sum())
                        .collect();
                    let mut dv = Vec::with_capacity(vv.len());
                    for &wj in wv.data() {
                        dv.extend(g.data().iter().map(|&gv| wj * gv));
                    }
                    accumulate(&mut adj, *w, Tensor::vector(dw));
                    accumulate(&mut adj, *vs, Tensor::new(vec![wv.len(), k], dv)?);
                }
                Op::Concat(a, b) => {
                    let p = self.value(*a).len();
                    let (ga, gb) = g.data().split_at(p);
                    accumulate(&mut adj, *a, Tensor::vector(ga.to_vec()));
                    accumulate(&mut adj, *b, Tensor::vector(gb.to_vec()));
                }
                Op::Hadamard(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let off = fault(FaultRule::Hadamard);
                    let da = bv.data().iter().zip(g.data()).map(|(y, gv)| y * gv + off);
                    let db = av.data().iter().zip(g.data()).map(|(x, gv)| x * gv);
                    let da = Tensor::new(av.shape().to_vec(), da.collect())?;
                    let db = Tensor::new(bv.shape().to_vec(), db.collect())?;
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Scale(a, factor) => accumulate(&mut adj, *a, g.map(|v| v * factor)),
                Op::Sum(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut adj, *a, Tensor::full(&shape, g.item()));
                }
                Op::Stack(parts) => {
                    let chunk = g.len() / parts.len();
                    for (i, &p) in parts.iter().enumerate() {
                        let shape = self.value(p).shape().to_vec();
                        let piece = g.data()[i * chunk..(i + 1) * chunk].to_vec();
                        accumulate(&mut adj, p, Tensor::new(shape, piece)?);
                    }
                }
                Op::Mse(p, t) => {
                    let (pv, tv) = (self.value(*p), self.value(*t));
                    let scale = 2.0 * g.item() / pv.len() as f64;
                    let dp: Vec<f64> = pv
                        .data()
                        .iter()
                        .zip(tv.data())
                        .map(|(a, b)| scale * (a - b))
                        .collect();
                    let dt = dp.iter().map(|v| -v).collect();
                    accumulate(&mut adj, *p, Tensor::new(pv.shape().to_vec(), dp)?);
                    accumulate(&mut adj, *t, Tensor::new(tv.shape().to_vec(), dt)?);
                }
            }
        }
        if !grads.all_finite() {
            return Err(KernelError::NonFinite { op: "backward" });
        }
        Ok(leaves)
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of `conv1d` with respect to input, filters and bias.
fn conv1d_backward(input: &Tensor, filters: &Tensor, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (d, t) = (input.shape()[0], input.shape()[1]);
    let (k, w) = (filters.shape()[0], filters.shape()[2]);
    let half = w / 2;
    let mut dx = vec![0.0; d * t];
    let mut df = vec![0.0; k * d * w];
    let mut db = vec![0.0; k];
    for j in 0..k {
        let grow = &g.data()[j * t..(j + 1) * t];
        db[j] = grow.iter().sum();
        for c in 0..d {
            let irow = &input.data()[c * t..(c + 1) * t];
            let base = (j * d + c) * w;
            for o in 0..w {
                let fv = filters.data()[base + o];
                let lo = half.saturating_sub(o);
                let hi = (t + half).saturating_sub(o).min(t).max(lo);
                let mut acc = 0.0;
                for tt in lo..hi {
                    let src = tt + o - half;
                    acc += grow[tt] * irow[src];
                    dx[c * t + src] += grow[tt] * fv;
                }
                df[base + o] += acc;
            }
        }
    }
    (
        Tensor::new(vec![d, t], dx).expect("conv input grad shape"),
        Tensor::new(vec![k, d, w], df).expect("conv filter grad shape"),
        Tensor::vector(db),
    )
}
