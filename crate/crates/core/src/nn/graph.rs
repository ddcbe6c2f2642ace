//! Tape-style computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and `backward` simply walks it in reverse. Every builder
//! method computes the forward value immediately and validates shapes.
//!
//! Batched layouts: convolutions take `[N, C, H, W]` (or a single `[C, H, W]`),
//! dense layers take `[N, n]` (or a single `[n]`).

use super::params::{Gradients, NetworkParams};
use super::tensor::{Scalar, Tensor};
use crate::error::NnError;

pub type NodeId = usize;

#[derive(Debug)]
enum Op<T: Scalar> {
    Input,
    Param(usize),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        /// im2col buffer `[C*k*k, N*H*W]` saved for the backward pass.
        cols: Vec<T>,
        dims: ConvDims,
    },
    Dense {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Relu(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    /// `[N, A] + [N, 1]` broadcast along the last axis.
    AddColumn {
        matrix: NodeId,
        column: NodeId,
    },
    /// Mean over the last axis, `[N, A] -> [N, 1]`.
    MeanLast(NodeId),
    /// Concatenation along the last axis of 2-D inputs.
    Concat(Vec<NodeId>),
    Reshape(NodeId),
    /// Picks one entry per row, `[N, A] -> [N, 1]`.
    Gather {
        input: NodeId,
        indices: Vec<usize>,
    },
    Sum(NodeId),
    /// `mean_i(w_i * huber(pred_i - target_i))`.
    Huber {
        pred: NodeId,
        target: Vec<T>,
        weights: Vec<T>,
        kappa: T,
    },
    /// `mean_i((pred_i - target_i)^2)`.
    Mse {
        pred: NodeId,
        target: Vec<T>,
    },
}

#[derive(Clone, Copy, Debug)]
struct ConvDims {
    batch: usize,
    channels: usize,
    filters: usize,
    height: usize,
    width: usize,
    k: usize,
}

#[derive(Debug)]
struct Node<T: Scalar> {
    op: Op<T>,
    /// `None` for parameter nodes, whose value lives in the parameter store.
    value: Option<Tensor<T>>,
    requires_grad: bool,
}

/// A forward pass recorded for differentiation.
pub struct Graph<'p, T: Scalar = f32> {
    params: Option<&'p NetworkParams<T>>,
    param_nodes: Vec<Option<NodeId>>,
    nodes: Vec<Node<T>>,
}

/// Result of [`Graph::backward`].
pub struct Backward<T: Scalar> {
    node_grads: Vec<Option<Tensor<T>>>,
    params: Gradients<T>,
}

impl<T: Scalar> Backward<T> {
    pub fn params(&self) -> &Gradients<T> {
        &self.params
    }

    pub fn into_params(self) -> Gradients<T> {
        self.params
    }

    /// Gradient w.r.t. a node created with [`Graph::variable`] (or any other node).
    pub fn node(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.node_grads.get(id).and_then(|g| g.as_ref())
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p NetworkParams<T>) -> Self {
        Self { params: Some(params), param_nodes: vec![None; params.len()], nodes: Vec::new() }
    }

    /// A graph with no parameter store; useful for op-level checks.
    pub fn detached() -> Self {
        Self { params: None, param_nodes: Vec::new(), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        let node = &self.nodes[id];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(i)) => self.params.expect("param node without store").value(*i),
            _ => unreachable!("node {id} has no value"),
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value: Some(value), requires_grad });
        self.nodes.len() - 1
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    /// A constant input (no gradient).
    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.push(Op::Input, t, false)
    }

    /// An input whose gradient is reported by `backward`.
    pub fn variable(&mut self, t: Tensor<T>) -> NodeId {
        self.push(Op::Input, t, true)
    }

    pub fn param(&mut self, name: &str) -> Result<NodeId, NnError> {
        let params = self.params.ok_or_else(|| NnError::UnknownParam(name.to_string()))?;
        let index = params
            .index_of(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))?;
        Ok(self.param_at(index))
    }

    pub fn param_at(&mut self, index: usize) -> NodeId {
        if let Some(id) = self.param_nodes[index] {
            return id;
        }
        self.nodes.push(Node { op: Op::Param(index), value: None, requires_grad: true });
        let id = self.nodes.len() - 1;
        self.param_nodes[index] = Some(id);
        id
    }

    /// Stride-1 convolution with zero "same" padding and an odd square kernel.
    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId, NnError> {
        let xs = self.value(input).shape().to_vec();
        let ks = self.value(kernel).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        let (batched, batch, c, h, w) = match xs.as_slice() {
            [c, h, w] => (false, 1, *c, *h, *w),
            [n, c, h, w] => (true, *n, *c, *h, *w),
            _ => return Err(NnError::Shape(format!("conv2d input must be [N,C,H,W] or [C,H,W], got {xs:?}"))),
        };
        let [f, kc, kh, kw] = ks.as_slice() else {
            return Err(NnError::Shape(format!("conv2d kernel must be [F,C,k,k], got {ks:?}")));
        };
        if *kc != c || kh != kw || kh % 2 == 0 {
            return Err(NnError::Shape(format!(
                "conv2d kernel {ks:?} incompatible with {c} input channels (need odd square kernel)"
            )));
        }
        if bs != [*f] {
            return Err(NnError::Shape(format!("conv2d bias must be [{f}], got {bs:?}")));
        }
        let dims = ConvDims { batch, channels: c, filters: *f, height: h, width: w, k: *kh };
        let cols = im2col(self.value(input).data(), &dims);
        let hw = h * w;
        let ckk = c * dims.k * dims.k;
        let nhw = batch * hw;
        let mut tmp = vec![T::zero(); dims.filters * nhw];
        T::gemm(
            dims.filters,
            ckk,
            nhw,
            T::one(),
            self.value(kernel).data(),
            ckk as isize,
            1,
            &cols,
            nhw as isize,
            1,
            T::zero(),
            &mut tmp,
            nhw as isize,
            1,
        );
        let bias_v = self.value(bias).data();
        let mut out = vec![T::zero(); batch * dims.filters * hw];
        for n in 0..batch {
            for fi in 0..dims.filters {
                let src = &tmp[fi * nhw + n * hw..fi * nhw + (n + 1) * hw];
                let dst = &mut out[(n * dims.filters + fi) * hw..(n * dims.filters + fi + 1) * hw];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = *s + bias_v[fi];
                }
            }
        }
        let shape = if batched { vec![batch, dims.filters, h, w] } else { vec![dims.filters, h, w] };
        let rg = self.rg(input) || self.rg(kernel) || self.rg(bias);
        Ok(self.push(
            Op::Conv2d { input, kernel, bias, cols, dims },
            Tensor::new(shape, out)?,
            rg,
        ))
    }

    /// `out[b, i] = dot(weight[i], input[b]) + bias[i]`.
    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId, NnError> {
        let xs = self.value(input).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        let (batched, batch, n) = match xs.as_slice() {
            [n] => (false, 1, *n),
            [b, n] => (true, *b, *n),
            _ => return Err(NnError::Shape(format!("dense input must be [n] or [N,n], got {xs:?}"))),
        };
        let [m, wn] = ws.as_slice() else {
            return Err(NnError::Shape(format!("dense weight must be [m,n], got {ws:?}")));
        };
        if *wn != n || bs != [*m] {
            return Err(NnError::Shape(format!(
                "dense weight {ws:?} / bias {bs:?} incompatible with input {xs:?}"
            )));
        }
        let m = *m;
        let mut out = Vec::with_capacity(batch * m);
        for _ in 0..batch {
            out.extend_from_slice(self.value(bias).data());
        }
        T::gemm(
            batch,
            n,
            m,
            T::one(),
            self.value(input).data(),
            n as isize,
            1,
            self.value(weight).data(),
            1,
            n as isize,
            T::one(),
            &mut out,
            m as isize,
            1,
        );
        let shape = if batched { vec![batch, m] } else { vec![m] };
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(Op::Dense { input, weight, bias }, Tensor::new(shape, out)?, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| if a > T::zero() { a } else { T::zero() }).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(Op::Relu(x), t, rg)
    }

    fn zip_same(&mut self, a: NodeId, b: NodeId, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, NnError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(NnError::Shape(format!("{name}: {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), t, rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Sub(a, b), t, rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), t, rg))
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> NodeId {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| a * factor).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(Op::Scale(x, factor), t, rg)
    }

    fn rows_cols(shape: &[usize], name: &str) -> Result<(usize, usize), NnError> {
        match shape {
            [a] => Ok((1, *a)),
            [n, a] => Ok((*n, *a)),
            _ => Err(NnError::Shape(format!("{name} expects [A] or [N,A], got {shape:?}"))),
        }
    }

    pub fn add_column(&mut self, matrix: NodeId, column: NodeId) -> Result<NodeId, NnError> {
        let ms = self.value(matrix).shape().to_vec();
        let cs = self.value(column).shape().to_vec();
        let (rows, cols) = Self::rows_cols(&ms, "add_column")?;
        let (crows, ccols) = Self::rows_cols(&cs, "add_column")?;
        if crows != rows || ccols != 1 || ms.len() != cs.len() {
            return Err(NnError::Shape(format!("add_column: {ms:?} + {cs:?}")));
        }
        let mv = self.value(matrix).data();
        let cv = self.value(column).data();
        let data = (0..rows * cols).map(|i| mv[i] + cv[i / cols]).collect();
        let rg = self.rg(matrix) || self.rg(column);
        Ok(self.push(Op::AddColumn { matrix, column }, Tensor::new(ms, data)?, rg))
    }

    pub fn mean_last(&mut self, x: NodeId) -> Result<NodeId, NnError> {
        let xs = self.value(x).shape().to_vec();
        let (rows, cols) = Self::rows_cols(&xs, "mean_last")?;
        let v = self.value(x).data();
        let n = T::from_f64(cols as f64);
        // offsets from the first entry keep a constant row's mean exact
        let data: Vec<T> = (0..rows)
            .map(|r| {
                let row = &v[r * cols..(r + 1) * cols];
                row[0] + row.iter().fold(T::zero(), |acc, &a| acc + (a - row[0])) / n
            })
            .collect();
        let shape = if xs.len() == 1 { vec![1] } else { vec![rows, 1] };
        let rg = self.rg(x);
        Ok(self.push(Op::MeanLast(x), Tensor::new(shape, data)?, rg))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, NnError> {
        if parts.is_empty() {
            return Err(NnError::Shape("concat of nothing".into()));
        }
        let first = self.value(parts[0]).shape().to_vec();
        let (rows, _) = Self::rows_cols(&first, "concat")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape().to_vec();
            let (r, c) = Self::rows_cols(&s, "concat")?;
            if r != rows || s.len() != first.len() {
                return Err(NnError::Shape(format!("concat: {first:?} vs {s:?}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let shape = if first.len() == 1 { vec![total] } else { vec![rows, total] };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::new(shape, data)?, rg))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, NnError> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(Op::Reshape(x), t, rg))
    }

    /// Flattens everything after the leading batch axis.
    pub fn flatten_batch(&mut self, x: NodeId) -> Result<NodeId, NnError> {
        let s = self.value(x).shape().to_vec();
        let batch = s[0];
        let rest: usize = s[1..].iter().product();
        self.reshape(x, &[batch, rest])
    }

    pub fn gather(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId, NnError> {
        let xs = self.value(x).shape().to_vec();
        let [rows, cols] = xs.as_slice() else {
            return Err(NnError::Shape(format!("gather expects [N,A], got {xs:?}")));
        };
        if indices.len() != *rows || indices.iter().any(|&i| i >= *cols) {
            return Err(NnError::Shape(format!("gather indices invalid for {xs:?}")));
        }
        let v = self.value(x).data();
        let data = indices.iter().enumerate().map(|(r, &i)| v[r * cols + i]).collect();
        let rg = self.rg(x);
        Ok(self.push(Op::Gather { input: x, indices: indices.to_vec() }, Tensor::new(vec![*rows, 1], data)?, rg))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().fold(T::zero(), |a, &b| a + b);
        let rg = self.rg(x);
        self.push(Op::Sum(x), Tensor::scalar(s), rg)
    }

    /// Importance-weighted mean Huber loss over the entries of `pred`.
    pub fn huber_loss(&mut self, pred: NodeId, target: &[T], weights: &[T], kappa: T) -> Result<NodeId, NnError> {
        let p = self.value(pred).data();
        if target.len() != p.len() || weights.len() != p.len() {
            return Err(NnError::Shape(format!(
                "huber: {} predictions, {} targets, {} weights",
                p.len(),
                target.len(),
                weights.len()
            )));
        }
        let n = T::from_f64(p.len() as f64);
        let total = p
            .iter()
            .zip(target)
            .zip(weights)
            .fold(T::zero(), |acc, ((&a, &t), &w)| acc + w * huber(a - t, kappa));
        let rg = self.rg(pred);
        Ok(self.push(
            Op::Huber { pred, target: target.to_vec(), weights: weights.to_vec(), kappa },
            Tensor::scalar(total / n),
            rg,
        ))
    }

    pub fn mse_loss(&mut self, pred: NodeId, target: &[T]) -> Result<NodeId, NnError> {
        let p = self.value(pred).data();
        if target.len() != p.len() {
            return Err(NnError::Shape(format!("mse: {} predictions, {} targets", p.len(), target.len())));
        }
        let n = T::from_f64(p.len() as f64);
        let total = p.iter().zip(target).fold(T::zero(), |acc, (&a, &t)| acc + (a - t) * (a - t));
        let rg = self.rg(pred);
        Ok(self.push(Op::Mse { pred, target: target.to_vec() }, Tensor::scalar(total / n), rg))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Backward<T>, NnError> {
        let ls = self.value(loss).shape();
        if self.value(loss).numel() != 1 {
            return Err(NnError::NonScalarLoss(ls.to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Tensor::filled(ls, T::one()));
        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        let mut per_param = vec![None; self.params.map_or(0, |p| p.len())];
        for (index, node) in self.param_nodes.iter().enumerate() {
            if let Some(id) = node {
                per_param[index] = grads[*id].clone();
            }
        }
        Ok(Backward { node_grads: grads, params: Gradients::from_tensors(per_param) })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, delta: Tensor<T>) {
        if !self.nodes[id].requires_grad {
            return;
        }
        match &mut grads[id] {
            Some(existing) => {
                for (a, b) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *a = *a + *b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn like(&self, id: NodeId, data: Vec<T>) -> Tensor<T> {
        Tensor::new(self.value(id).shape().to_vec(), data).expect("gradient shape mirrors value")
    }

    fn propagate(&self, id: NodeId, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<(), NnError> {
        let gd = g.data();
        match &self.nodes[id].op {
            Op::Input | Op::Param(_) => {}
            Op::Conv2d { input, kernel, bias, cols, dims } => {
                let ConvDims { batch, channels, filters, height, width, k, .. } = *dims;
                let hw = height * width;
                let nhw = batch * hw;
                let ckk = channels * k * k;
                // [N, F, HW] -> [F, N*HW]
                let mut g_t = vec![T::zero(); filters * nhw];
                for n in 0..batch {
                    for f in 0..filters {
                        g_t[f * nhw + n * hw..f * nhw + (n + 1) * hw]
                            .copy_from_slice(&gd[(n * filters + f) * hw..(n * filters + f + 1) * hw]);
                    }
                }
                if self.rg(*bias) {
                    let db = (0..filters)
                        .map(|f| g_t[f * nhw..(f + 1) * nhw].iter().fold(T::zero(), |a, &b| a + b))
                        .collect();
                    self.accumulate(grads, *bias, self.like(*bias, db));
                }
                if self.rg(*kernel) {
                    let mut dk = vec![T::zero(); filters * ckk];
                    T::gemm(filters, nhw, ckk, T::one(), &g_t, nhw as isize, 1, cols, 1, nhw as isize, T::zero(), &mut dk, ckk as isize, 1);
                    self.accumulate(grads, *kernel, self.like(*kernel, dk));
                }
                if self.rg(*input) {
                    let mut dcols = vec![T::zero(); ckk * nhw];
                    T::gemm(
                        ckk,
                        filters,
                        nhw,
                        T::one(),
                        self.value(*kernel).data(),
                        1,
                        ckk as isize,
                        &g_t,
                        nhw as isize,
                        1,
                        T::zero(),
                        &mut dcols,
                        nhw as isize,
                        1,
                    );
                    let dx = col2im(&dcols, dims);
                    self.accumulate(grads, *input, self.like(*input, dx));
                }
            }
            Op::Dense { input, weight, bias } => {
                let xs = self.value(*input);
                let n = *xs.shape().last().unwrap();
                let batch = xs.numel() / n;
                let m = self.value(*bias).numel();
                if self.rg(*bias) {
                    let mut db = vec![T::zero(); m];
                    for b in 0..batch {
                        for i in 0..m {
                            db[i] = db[i] + gd[b * m + i];
                        }
                    }
                    self.accumulate(grads, *bias, self.like(*bias, db));
                }
                if self.rg(*weight) {
                    let mut dw = vec![T::zero(); m * n];
                    T::gemm(m, batch, n, T::one(), gd, 1, m as isize, xs.data(), n as isize, 1, T::zero(), &mut dw, n as isize, 1);
                    self.accumulate(grads, *weight, self.like(*weight, dw));
                }
                if self.rg(*input) {
                    let mut dx = vec![T::zero(); batch * n];
                    T::gemm(batch, m, n, T::one(), gd, m as isize, 1, self.value(*weight).data(), n as isize, 1, T::zero(), &mut dx, n as isize, 1);
                    self.accumulate(grads, *input, self.like(*input, dx));
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let dx = xv.iter().zip(gd).map(|(&a, &g)| if a > T::zero() { g } else { T::zero() }).collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, self.like(*b, gd.iter().map(|&v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    self.accumulate(grads, *a, self.like(*a, gd.iter().zip(vb).map(|(&g, &y)| g * y).collect()));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, self.like(*b, gd.iter().zip(va).map(|(&g, &x)| g * x).collect()));
                }
            }
            Op::Scale(x, factor) => {
                self.accumulate(grads, *x, self.like(*x, gd.iter().map(|&v| v * *factor).collect()));
            }
            Op::AddColumn { matrix, column } => {
                self.accumulate(grads, *matrix, g.clone());
                if self.rg(*column) {
                    let rows = self.value(*column).numel();
                    let cols = gd.len() / rows;
                    let dc = (0..rows)
                        .map(|r| gd[r * cols..(r + 1) * cols].iter().fold(T::zero(), |a, &b| a + b))
                        .collect();
                    self.accumulate(grads, *column, self.like(*column, dc));
                }
            }
            Op::MeanLast(x) => {
                let rows = gd.len();
                let cols = self.value(*x).numel() / rows;
                let inv = T::one() / T::from_f64(cols as f64);
                let dx = (0..rows * cols).map(|i| gd[i / cols] * inv).collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Concat(parts) => {
                let total = *self.value(id).shape().last().unwrap();
                let rows = gd.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let w = *self.value(p).shape().last().unwrap();
                    if self.rg(p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(grads, p, self.like(p, dp));
                    }
                    offset += w;
                }
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, self.like(*x, gd.to_vec()));
            }
            Op::Gather { input, indices } => {
                let cols = self.value(*input).shape()[1];
                let mut dx = vec![T::zero(); self.value(*input).numel()];
                for (r, &i) in indices.iter().enumerate() {
                    dx[r * cols + i] = gd[r];
                }
                self.accumulate(grads, *input, self.like(*input, dx));
            }
            Op::Sum(x) => {
                let numel = self.value(*x).numel();
                self.accumulate(grads, *x, self.like(*x, vec![gd[0]; numel]));
            }
            Op::Huber { pred, target, weights, kappa } => {
                let p = self.value(*pred).data();
                let n = T::from_f64(p.len() as f64);
                let dx = p
                    .iter()
                    .zip(target)
                    .zip(weights)
                    .map(|((&a, &t), &w)| gd[0] * w * huber_grad(a - t, *kappa) / n)
                    .collect();
                self.accumulate(grads, *pred, self.like(*pred, dx));
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred).data();
                let n = T::from_f64(p.len() as f64);
                let two = T::from_f64(2.0);
                let dx = p.iter().zip(target).map(|(&a, &t)| gd[0] * two * (a - t) / n).collect();
                self.accumulate(grads, *pred, self.like(*pred, dx));
            }
        }
        Ok(())
    }
}

/// `0.5 δ²` inside `[-κ, κ]`, linear `κ(|δ| - κ/2)` outside.
pub fn huber<T: Scalar>(delta: T, kappa: T) -> T {
    let a = delta.abs();
    let half = T::from_f64(0.5);
    if a <= kappa {
        half * delta * delta
    } else {
        kappa * (a - half * kappa)
    }
}

fn huber_grad<T: Scalar>(delta: T, kappa: T) -> T {
    delta.max(-kappa).min(kappa)
}

/// Valid output column range `[lo, hi)` for kernel offset `kx` on a row of width `w`.
fn span(offset: usize, pad: usize, w: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(offset);
    let hi = (w + pad).saturating_sub(offset).min(w);
    (lo, hi.max(lo))
}

fn im2col<T: Scalar>(x: &[T], d: &ConvDims) -> Vec<T> {
    let (h, w, k) = (d.height, d.width, d.k);
    let pad = k / 2;
    let hw = h * w;
    let nhw = d.batch * hw;
    let mut cols = vec![T::zero(); d.channels * k * k * nhw];
    for c in 0..d.channels {
        for ky in 0..k {
            let (y0, y1) = span(ky, pad, h);
            for kx in 0..k {
                let (x0, x1) = span(kx, pad, w);
                let row = (c * k + ky) * k + kx;
                let dst_row = &mut cols[row * nhw..(row + 1) * nhw];
                for n in 0..d.batch {
                    let src = &x[(n * d.channels + c) * hw..(n * d.channels + c + 1) * hw];
                    for y in y0..y1 {
                        let s = (y + ky - pad) * w + kx + x0 - pad;
                        let t = n * hw + y * w;
                        dst_row[t + x0..t + x1].copy_from_slice(&src[s..s + (x1 - x0)]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], d: &ConvDims) -> Vec<T> {
    let (h, w, k) = (d.height, d.width, d.k);
    let pad = k / 2;
    let hw = h * w;
    let nhw = d.batch * hw;
    let mut x = vec![T::zero(); d.batch * d.channels * hw];
    for c in 0..d.channels {
        for ky in 0..k {
            let (y0, y1) = span(ky, pad, h);
            for kx in 0..k {
                let (x0, x1) = span(kx, pad, w);
                let row = (c * k + ky) * k + kx;
                let src_row = &cols[row * nhw..(row + 1) * nhw];
                for n in 0..d.batch {
                    let dst = &mut x[(n * d.channels + c) * hw..(n * d.channels + c + 1) * hw];
                    for y in y0..y1 {
                        let s = (y + ky - pad) * w + kx + x0 - pad;
                        let t = n * hw + y * w;
                        for (a, &b) in dst[s..s + (x1 - x0)].iter_mut().zip(&src_row[t + x0..t + x1]) {
                            *a = *a + b;
                        }
                    }
                }
            }
        }
    }
    x
}
