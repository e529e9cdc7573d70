//! Wengert list over batched tensors.
//!
//! Nodes are appended in evaluation order, so every node's parents precede
//! it and the backward pass is a single reverse sweep. Forward values are
//! computed eagerly as nodes are added, which lets callers read intermediate
//! values (nearest neighbours, centroids) while the graph is being built.

use std::borrow::Cow;
use std::f64::consts::PI;

use super::param::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Affine { x: NodeId, w: ParamId, b: ParamId },
    Relu(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    PosEnc { x: NodeId, degree: usize, include_input: bool },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Square(NodeId),
    LogFloor(NodeId, f64),
    Column(NodeId, usize),
    SliceRows(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    RowSumSq(NodeId),
    RowDot(NodeId, NodeId),
    CosSq(NodeId, NodeId),
    Area2(NodeId, NodeId),
    SubScalar(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    MinSqDist { a: NodeId, b: NodeId, argmin: Vec<usize> },
    Bilinear { uv: NodeId, grid: ParamId, res: usize },
}

#[derive(Debug)]
struct Node<R> {
    op: Op,
    value: Tensor<R>,
    needs_grad: bool,
}

/// Floor applied to the product of norms inside [`Graph::cos_sq`].
pub const COSINE_FLOOR: f64 = 1e-12;

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<R> {
    /// Per-parameter gradients in store order; `None` for untouched params.
    pub params: Vec<Option<Vec<f64>>>,
    inputs: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    /// Gradient of the output wrt an input created with [`Graph::input_with_grad`].
    pub fn wrt(&self, node: NodeId) -> Option<&Tensor<R>> {
        self.inputs.get(node.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }
}

pub struct Graph<'p, R: Real> {
    store: &'p ParamStore,
    cache: Vec<Option<Cow<'p, [R]>>>,
    nodes: Vec<Node<R>>,
}

impl<'p, R: Real> Graph<'p, R> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            cache: (0..store.len()).map(|_| None).collect(),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<R> {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.shape(), (1, 1), "node {} is not a scalar", id.0);
        v.data[0].as_f64()
    }

    fn ensure_cached(&mut self, id: ParamId) {
        let store = self.store;
        self.cache[id.0].get_or_insert_with(|| R::from_f32_slice(&store.get(id).values));
    }

    fn cached(&self, id: ParamId) -> &[R] {
        self.cache[id.0].as_deref().expect("parameter values cached")
    }

    fn push(&mut self, op: Op, value: Tensor<R>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn map(&mut self, x: NodeId, op: Op, f: impl Fn(R) -> R) -> NodeId {
        let src = self.value(x);
        let data = src.data.iter().map(|&v| f(v).flush()).collect();
        let value = Tensor::from_vec(src.rows, src.cols, data);
        let ng = self.ng(x);
        self.push(op, value, ng)
    }

    fn zip(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(R, R) -> R) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_vec(va.rows, va.cols, data);
        let ng = self.ng(a) || self.ng(b);
        self.push(op, value, ng)
    }

    /// Row-wise reduction of two equally shaped tensors into an `N x 1` column.
    fn rowwise(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(&[R], &[R]) -> f64) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "row-wise shape mismatch");
        let data = (0..va.rows)
            .map(|r| R::from_f64(f(va.row(r), vb.row(r))))
            .collect();
        let value = Tensor::from_vec(va.rows, 1, data);
        let ng = self.ng(a) || self.ng(b);
        self.push(op, value, ng)
    }

    // ---- leaves ----

    pub fn input(&mut self, t: Tensor<R>) -> NodeId {
        self.push(Op::Input, t, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input_with_grad(&mut self, t: Tensor<R>) -> NodeId {
        self.push(Op::Input, t, true)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        let (rows, cols) = {
            let p = self.store.get(id);
            (p.rows, p.cols)
        };
        self.ensure_cached(id);
        let data = self.cached(id).to_vec();
        self.push(Op::Param(id), Tensor::from_vec(rows, cols, data), true)
    }

    // ---- dense layers and activations ----

    /// `x W + b` with `W: in x out` and `b: 1 x out`.
    pub fn affine(&mut self, x: NodeId, w: ParamId, b: ParamId) -> NodeId {
        let (n, d_in) = self.value(x).shape();
        let (w_rows, d_out) = {
            let p = self.store.get(w);
            (p.rows, p.cols)
        };
        assert_eq!(w_rows, d_in, "affine input width mismatch");
        assert_eq!(self.store.get(b).len(), d_out, "affine bias width mismatch");
        self.ensure_cached(w);
        self.ensure_cached(b);
        let (wv, bv) = (self.cached(w), self.cached(b));
        let mut out = Tensor::zeros(n, d_out);
        R::matmul(n, d_in, d_out, &self.value(x).data, false, wv, false, &mut out.data, false);
        for row in out.data.chunks_mut(d_out) {
            for (o, &bias) in row.iter_mut().zip(bv) {
                *o = *o + bias;
            }
        }
        self.push(Op::Affine { x, w, b }, out, true)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Relu(x), |v| if v > R::zero() { v } else { R::zero() })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Sigmoid(x), |v| R::one() / (R::one() + (-v).exp()))
    }

    pub fn sin(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Sin(x), R::sin)
    }

    pub fn cos(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Cos(x), R::cos)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let src = self.value(x);
        let mut out = Tensor::zeros(src.rows, src.cols);
        for (dst, row) in out.data.chunks_mut(src.cols.max(1)).zip(src.data.chunks(src.cols.max(1))) {
            let max = row.iter().fold(R::neg_infinity(), |m, &v| m.max(v));
            let mut total = 0.0f64;
            for (d, &v) in dst.iter_mut().zip(row) {
                *d = (v - max).exp();
                total += d.as_f64();
            }
            let inv = R::from_f64(1.0 / total);
            dst.iter_mut().for_each(|d| *d = (*d * inv).flush());
        }
        let ng = self.ng(x);
        self.push(Op::Softmax(x), out, ng)
    }

    /// Per component `c`: `[x_c, sin(2^j pi x_c), cos(2^j pi x_c)]` for `j < degree`.
    pub fn positional_encoding(&mut self, x: NodeId, degree: usize, include_input: bool) -> NodeId {
        let src = self.value(x);
        let per = 2 * degree + usize::from(include_input);
        let mut out = Tensor::zeros(src.rows, src.cols * per);
        for r in 0..src.rows {
            for c in 0..src.cols {
                let v = src.at(r, c).as_f64();
                let base = r * out.cols + c * per;
                let mut k = base;
                if include_input {
                    out.data[k] = R::from_f64(v);
                    k += 1;
                }
                for j in 0..degree {
                    let a = (1u64 << j) as f64 * PI;
                    out.data[k] = R::from_f64((a * v).sin());
                    out.data[k + 1] = R::from_f64((a * v).cos());
                    k += 2;
                }
            }
        }
        let ng = self.ng(x);
        self.push(
            Op::PosEnc {
                x,
                degree,
                include_input,
            },
            out,
            ng,
        )
    }

    // ---- elementwise arithmetic ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let f = R::from_f64(factor);
        self.map(x, Op::Scale(x, factor), move |v| v * f)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Square(x), |v| v * v)
    }

    /// `ln(max(x, floor))`.
    pub fn log_floor(&mut self, x: NodeId, floor: f64) -> NodeId {
        let fl = R::from_f64(floor);
        self.map(x, Op::LogFloor(x, floor), move |v| v.max(fl).ln())
    }

    /// `a - s` for a `1 x 1` node `s`, broadcast over every element of `a`.
    pub fn sub_scalar(&mut self, a: NodeId, s: NodeId) -> NodeId {
        assert_eq!(self.value(s).shape(), (1, 1), "sub_scalar expects a scalar");
        let sv = self.value(s).data[0];
        let src = self.value(a);
        let value = Tensor::from_vec(src.rows, src.cols, src.data.iter().map(|&v| v - sv).collect());
        let ng = self.ng(a) || self.ng(s);
        self.push(Op::SubScalar(a, s), value, ng)
    }

    // ---- structural ----

    pub fn column(&mut self, x: NodeId, j: usize) -> NodeId {
        let src = self.value(x);
        assert!(j < src.cols, "column {j} out of range");
        let data = (0..src.rows).map(|r| src.at(r, j)).collect();
        let value = Tensor::from_vec(src.rows, 1, data);
        let ng = self.ng(x);
        self.push(Op::Column(x, j), value, ng)
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let src = self.value(x);
        assert!(start + len <= src.rows, "row slice out of range");
        let data = src.data[start * src.cols..(start + len) * src.cols].to_vec();
        let value = Tensor::from_vec(len, src.cols, data);
        let ng = self.ng(x);
        self.push(Op::SliceRows(x, start), value, ng)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols, cols, "concat column mismatch");
            data.extend_from_slice(&v.data);
            rows += v.rows;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Op::ConcatRows(parts.to_vec()), Tensor::from_vec(rows, cols, data), ng)
    }

    // ---- row-wise reductions ----

    pub fn row_sum_sq(&mut self, x: NodeId) -> NodeId {
        let src = self.value(x);
        let data = (0..src.rows)
            .map(|r| R::from_f64(src.row(r).iter().map(|v| v.as_f64().powi(2)).sum()))
            .collect();
        let value = Tensor::from_vec(src.rows, 1, data);
        let ng = self.ng(x);
        self.push(Op::RowSumSq(x), value, ng)
    }

    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.rowwise(a, b, Op::RowDot(a, b), |x, y| {
            x.iter().zip(y).map(|(p, q)| p.as_f64() * q.as_f64()).sum()
        })
    }

    /// Squared cosine of the angle between matching rows, with the product of
    /// norms floored at [`COSINE_FLOOR`].
    pub fn cos_sq(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.rowwise(a, b, Op::CosSq(a, b), |x, y| {
            let (s, aa, bb) = dot3(x, y);
            s * s / (aa * bb).max(COSINE_FLOOR * COSINE_FLOOR)
        })
    }

    /// Area of the parallelogram spanned by two 2D rows.
    pub fn parallelogram_area(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).cols, 2, "parallelogram area needs 2D rows");
        self.rowwise(a, b, Op::Area2(a, b), |x, y| cross2(x, y).abs())
    }

    // ---- full reductions ----

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.value(x).data.iter().map(|v| v.as_f64()).sum();
        let ng = self.ng(x);
        self.push(Op::Sum(x), Tensor::scalar(total), ng)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        assert!(!v.is_empty(), "mean of empty tensor");
        let total: f64 = v.data.iter().map(|v| v.as_f64()).sum::<f64>() / v.len() as f64;
        let ng = self.ng(x);
        self.push(Op::Mean(x), Tensor::scalar(total), ng)
    }

    /// For each row of `a`, the squared distance to its nearest row of `b`
    /// (ties resolved to the lowest index). The selection is not
    /// differentiated; gradients flow through the selected pair.
    pub fn min_sq_dist(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols, vb.cols, "min_sq_dist dimension mismatch");
        assert!(vb.rows > 0, "min_sq_dist against empty set");
        let mut argmin = Vec::with_capacity(va.rows);
        let mut data = Vec::with_capacity(va.rows);
        for r in 0..va.rows {
            let pa = va.row(r);
            let mut best = (f64::INFINITY, 0);
            for k in 0..vb.rows {
                let d: f64 = pa
                    .iter()
                    .zip(vb.row(k))
                    .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
                    .sum();
                if d < best.0 {
                    best = (d, k);
                }
            }
            argmin.push(best.1);
            data.push(R::from_f64(best.0));
        }
        let value = Tensor::from_vec(va.rows, 1, data);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::MinSqDist { a, b, argmin }, value, ng)
    }

    /// Bilinear lookup of a `res x res` texel grid (stored as `res*res` rows)
    /// at `uv` rows in `[0,1]^2`. Texel `(ix, iy)` is centred at
    /// `((ix + 0.5) / res, (iy + 0.5) / res)`; lookups clamp at the edges.
    pub fn bilinear(&mut self, uv: NodeId, grid: ParamId, res: usize) -> NodeId {
        let (g_rows, ch) = {
            let p = self.store.get(grid);
            (p.rows, p.cols)
        };
        assert_eq!(g_rows, res * res, "grid does not match resolution");
        assert_eq!(self.value(uv).cols, 2, "bilinear lookup needs 2D coordinates");
        self.ensure_cached(grid);
        let texels = self.cached(grid);
        let src = self.value(uv);
        let mut out = Tensor::zeros(src.rows, ch);
        for r in 0..src.rows {
            let s = BilinearStencil::new(src.at(r, 0).as_f64(), src.at(r, 1).as_f64(), res);
            for (idx, w) in s.taps() {
                for c in 0..ch {
                    let o = &mut out.data[r * ch + c];
                    *o = *o + R::from_f64(w) * texels[idx * ch + c];
                }
            }
        }
        let ng = true;
        self.push(Op::Bilinear { uv, grid, res }, out, ng)
    }

    // ---- backward ----

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: NodeId) -> Result<Gradients<R>> {
        let out = &self.nodes[output.0];
        if out.value.shape() != (1, 1) {
            return Err(Error::contract(format!(
                "backward from non-scalar node {} of shape {:?}",
                output.0,
                out.value.shape()
            )));
        }
        if let Some(node) = self.nodes[..=output.0]
            .iter()
            .position(|n| n.value.first_non_finite().is_some())
        {
            return Err(Error::NumericFault { node });
        }

        let mut grads: Vec<Option<Tensor<R>>> = (0..=output.0).map(|_| None).collect();
        let mut params: Vec<Option<Vec<f64>>> = vec![None; self.store.len()];
        grads[output.0] = Some(Tensor::scalar(1.0));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Input) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(node, &dy, &mut grads, &mut params);
        }

        let inputs = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| match self.nodes[i].op {
                Op::Input if self.nodes[i].needs_grad => g,
                _ => None,
            })
            .collect();
        Ok(Gradients { params, inputs })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<R>>], id: NodeId, g: Tensor<R>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_param(&self, params: &mut [Option<Vec<f64>>], id: ParamId, g: impl Iterator<Item = (usize, f64)>) {
        let len = self.store.get(id).len();
        let acc = params[id.0].get_or_insert_with(|| vec![0.0; len]);
        for (k, v) in g {
            acc[k] += v;
        }
    }

    fn backprop_node(
        &self,
        node: &Node<R>,
        dy: &Tensor<R>,
        grads: &mut [Option<Tensor<R>>],
        params: &mut [Option<Vec<f64>>],
    ) {
        let y = &node.value;
        let elementwise = |x: NodeId, f: &dyn Fn(R, R, R) -> R| {
            let xv = self.value(x);
            let data = xv
                .data
                .iter()
                .zip(&y.data)
                .zip(&dy.data)
                .map(|((&x, &y), &g)| f(x, y, g).flush())
                .collect();
            Tensor::from_vec(xv.rows, xv.cols, data)
        };
        match &node.op {
            Op::Input => {}
            Op::Param(id) => {
                self.accumulate_param(params, *id, dy.data.iter().map(|v| v.as_f64()).enumerate());
            }
            Op::Affine { x, w, b } => {
                let xv = self.value(*x);
                let (n, d_in) = xv.shape();
                let d_out = dy.cols;
                let wv = self.cached(*w);
                if self.ng(*x) {
                    let mut dx = Tensor::zeros(n, d_in);
                    R::matmul(n, d_out, d_in, &dy.data, false, wv, true, &mut dx.data, false);
                    self.accumulate(grads, *x, dx);
                }
                let mut dw = vec![R::zero(); d_in * d_out];
                R::matmul(d_in, n, d_out, &xv.data, true, &dy.data, false, &mut dw, false);
                self.accumulate_param(params, *w, dw.iter().map(|v| v.as_f64()).enumerate());
                let mut db = vec![0.0f64; d_out];
                for row in dy.data.chunks(d_out) {
                    for (acc, v) in db.iter_mut().zip(row) {
                        *acc += v.as_f64();
                    }
                }
                self.accumulate_param(params, *b, db.into_iter().enumerate());
            }
            Op::Relu(x) => {
                let g = elementwise(*x, &|x, _, g| if x > R::zero() { g } else { R::zero() });
                self.accumulate(grads, *x, g);
            }
            Op::Sigmoid(x) => {
                let g = elementwise(*x, &|_, y, g| g * y * (R::one() - y));
                self.accumulate(grads, *x, g);
            }
            Op::Sin(x) => {
                let g = elementwise(*x, &|x, _, g| g * x.cos());
                self.accumulate(grads, *x, g);
            }
            Op::Cos(x) => {
                let g = elementwise(*x, &|x, _, g| -g * x.sin());
                self.accumulate(grads, *x, g);
            }
            Op::Softmax(x) => {
                let mut g = Tensor::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let (yr, gr) = (y.row(r), dy.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                    for c in 0..y.cols {
                        g.data[r * y.cols + c] = R::from_f64(yr[c].as_f64() * (gr[c].as_f64() - dot)).flush();
                    }
                }
                self.accumulate(grads, *x, g);
            }
            Op::PosEnc {
                x,
                degree,
                include_input,
            } => {
                let xv = self.value(*x);
                let per = 2 * degree + usize::from(*include_input);
                let mut g = Tensor::zeros(xv.rows, xv.cols);
                for r in 0..xv.rows {
                    for c in 0..xv.cols {
                        let v = xv.at(r, c).as_f64();
                        let mut k = r * y.cols + c * per;
                        let mut acc = 0.0;
                        if *include_input {
                            acc += dy.data[k].as_f64();
                            k += 1;
                        }
                        for j in 0..*degree {
                            let a = (1u64 << j) as f64 * PI;
                            acc += a * (dy.data[k].as_f64() * (a * v).cos()
                                - dy.data[k + 1].as_f64() * (a * v).sin());
                            k += 2;
                        }
                        g.data[r * xv.cols + c] = R::from_f64(acc);
                    }
                }
                self.accumulate(grads, *x, g);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                let neg = dy.data.iter().map(|&v| -v).collect();
                self.accumulate(grads, *b, Tensor::from_vec(dy.rows, dy.cols, neg));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let d = vb.data.iter().zip(&dy.data).map(|(&q, &g)| q * g).collect();
                    self.accumulate(grads, *a, Tensor::from_vec(dy.rows, dy.cols, d));
                }
                if self.ng(*b) {
                    let d = va.data.iter().zip(&dy.data).map(|(&p, &g)| p * g).collect();
                    self.accumulate(grads, *b, Tensor::from_vec(dy.rows, dy.cols, d));
                }
            }
            Op::Scale(x, f) => {
                let f = R::from_f64(*f);
                let d = dy.data.iter().map(|&g| g * f).collect();
                self.accumulate(grads, *x, Tensor::from_vec(dy.rows, dy.cols, d));
            }
            Op::Square(x) => {
                let two = R::from_f64(2.0);
                let g = elementwise(*x, &|x, _, g| two * x * g);
                self.accumulate(grads, *x, g);
            }
            Op::LogFloor(x, floor) => {
                let fl = R::from_f64(*floor);
                let g = elementwise(*x, &|x, _, g| if x > fl { g / x } else { R::zero() });
                self.accumulate(grads, *x, g);
            }
            Op::SubScalar(a, s) => {
                self.accumulate(grads, *a, dy.clone());
                let total: f64 = dy.data.iter().map(|v| v.as_f64()).sum();
                self.accumulate(grads, *s, Tensor::scalar(-total));
            }
            Op::Column(x, j) => {
                let xv = self.value(*x);
                let mut g = Tensor::zeros(xv.rows, xv.cols);
                for r in 0..xv.rows {
                    g.data[r * xv.cols + j] = dy.data[r];
                }
                self.accumulate(grads, *x, g);
            }
            Op::SliceRows(x, start) => {
                let xv = self.value(*x);
                let mut g = Tensor::zeros(xv.rows, xv.cols);
                g.data[start * xv.cols..start * xv.cols + dy.len()].copy_from_slice(&dy.data);
                self.accumulate(grads, *x, g);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let len = pv.len();
                    if self.ng(p) {
                        let d = dy.data[offset..offset + len].to_vec();
                        self.accumulate(grads, p, Tensor::from_vec(pv.rows, pv.cols, d));
                    }
                    offset += len;
                }
            }
            Op::RowSumSq(x) => {
                let xv = self.value(*x);
                let mut g = Tensor::zeros(xv.rows, xv.cols);
                for r in 0..xv.rows {
                    let two_g = R::from_f64(2.0) * dy.data[r];
                    for c in 0..xv.cols {
                        g.data[r * xv.cols + c] = two_g * xv.at(r, c);
                    }
                }
                self.accumulate(grads, *x, g);
            }
            Op::RowDot(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut ga = Tensor::zeros(va.rows, va.cols);
                let mut gb = Tensor::zeros(vb.rows, vb.cols);
                for r in 0..va.rows {
                    for c in 0..va.cols {
                        ga.data[r * va.cols + c] = dy.data[r] * vb.at(r, c);
                        gb.data[r * va.cols + c] = dy.data[r] * va.at(r, c);
                    }
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::CosSq(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut ga = Tensor::zeros(va.rows, va.cols);
                let mut gb = Tensor::zeros(vb.rows, vb.cols);
                let floor2 = COSINE_FLOOR * COSINE_FLOOR;
                for r in 0..va.rows {
                    let (x, z) = (va.row(r), vb.row(r));
                    let (s, aa, bb) = dot3(x, z);
                    let g = dy.data[r].as_f64();
                    let unclamped = aa * bb > floor2;
                    let d = (aa * bb).max(floor2);
                    for c in 0..va.cols {
                        let (xc, zc) = (x[c].as_f64(), z[c].as_f64());
                        let mut da = 2.0 * s * zc / d;
                        let mut db = 2.0 * s * xc / d;
                        if unclamped {
                            da -= 2.0 * s * s * bb * xc / (d * d);
                            db -= 2.0 * s * s * aa * zc / (d * d);
                        }
                        ga.data[r * va.cols + c] = R::from_f64(g * da);
                        gb.data[r * va.cols + c] = R::from_f64(g * db);
                    }
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Area2(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut ga = Tensor::zeros(va.rows, 2);
                let mut gb = Tensor::zeros(vb.rows, 2);
                for r in 0..va.rows {
                    let (x, z) = (va.row(r), vb.row(r));
                    let sign = cross2(x, z).signum_or_zero();
                    let g = sign * dy.data[r].as_f64();
                    ga.data[2 * r] = R::from_f64(g * z[1].as_f64());
                    ga.data[2 * r + 1] = R::from_f64(-g * z[0].as_f64());
                    gb.data[2 * r] = R::from_f64(-g * x[1].as_f64());
                    gb.data[2 * r + 1] = R::from_f64(g * x[0].as_f64());
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Sum(x) | Op::Mean(x) => {
                let xv = self.value(*x);
                let mut g = dy.data[0].as_f64();
                if matches!(node.op, Op::Mean(_)) {
                    g /= xv.len() as f64;
                }
                let t = Tensor::from_vec(xv.rows, xv.cols, vec![R::from_f64(g); xv.len()]);
                self.accumulate(grads, *x, t);
            }
            Op::MinSqDist { a, b, argmin } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let d = va.cols;
                let mut ga = Tensor::zeros(va.rows, d);
                let mut gb = Tensor::zeros(vb.rows, d);
                for (r, &k) in argmin.iter().enumerate() {
                    let g = 2.0 * dy.data[r].as_f64();
                    for c in 0..d {
                        let diff = g * (va.at(r, c).as_f64() - vb.at(k, c).as_f64());
                        ga.data[r * d + c] = R::from_f64(diff);
                        gb.data[k * d + c] = gb.data[k * d + c] - R::from_f64(diff);
                    }
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Bilinear { uv, grid, res } => {
                let uvv = self.value(*uv);
                let texels = self.cached(*grid);
                let ch = dy.cols;
                let mut dtex = vec![0.0f64; texels.len()];
                let mut duv = Tensor::zeros(uvv.rows, 2);
                for r in 0..uvv.rows {
                    let s = BilinearStencil::new(uvv.at(r, 0).as_f64(), uvv.at(r, 1).as_f64(), *res);
                    let gr = dy.row(r);
                    for (idx, w) in s.taps() {
                        for c in 0..ch {
                            dtex[idx * ch + c] += w * gr[c].as_f64();
                        }
                    }
                    let tex = |ix: usize, iy: usize, c: usize| texels[(iy * res + ix) * ch + c].as_f64();
                    let (mut du, mut dv) = (0.0, 0.0);
                    for (c, g) in gr.iter().enumerate() {
                        let g = g.as_f64();
                        if s.x_free {
                            let top = tex(s.x1, s.y0, c) - tex(s.x0, s.y0, c);
                            let bot = tex(s.x1, s.y1, c) - tex(s.x0, s.y1, c);
                            du += g * (*res as f64) * ((1.0 - s.wy) * top + s.wy * bot);
                        }
                        if s.y_free {
                            let left = tex(s.x0, s.y1, c) - tex(s.x0, s.y0, c);
                            let right = tex(s.x1, s.y1, c) - tex(s.x1, s.y0, c);
                            dv += g * (*res as f64) * ((1.0 - s.wx) * left + s.wx * right);
                        }
                    }
                    duv.data[2 * r] = R::from_f64(du);
                    duv.data[2 * r + 1] = R::from_f64(dv);
                }
                self.accumulate_param(params, *grid, dtex.into_iter().enumerate());
                self.accumulate(grads, *uv, duv);
            }
        }
    }
}

fn dot3<R: Real>(x: &[R], y: &[R]) -> (f64, f64, f64) {
    x.iter().zip(y).fold((0.0, 0.0, 0.0), |(s, a, b), (p, q)| {
        let (p, q) = (p.as_f64(), q.as_f64());
        (s + p * q, a + p * p, b + q * q)
    })
}

fn cross2<R: Real>(x: &[R], y: &[R]) -> f64 {
    x[0].as_f64() * y[1].as_f64() - x[1].as_f64() * y[0].as_f64()
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

/// The four texels and weights of one bilinear lookup.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BilinearStencil {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub wx: f64,
    pub wy: f64,
    res: usize,
    /// false when the lookup is clamped along that axis (zero derivative)
    x_free: bool,
    y_free: bool,
}

impl BilinearStencil {
    pub fn new(u: f64, v: f64, res: usize) -> Self {
        let axis = |t: f64| {
            let raw = t * res as f64 - 0.5;
            let hi = (res - 1) as f64;
            let f = raw.clamp(0.0, hi);
            let i0 = (f.floor() as usize).min(res - 1);
            let i1 = (i0 + 1).min(res - 1);
            (i0, i1, f - i0 as f64, raw > 0.0 && raw < hi)
        };
        let (x0, x1, wx, x_free) = axis(u);
        let (y0, y1, wy, y_free) = axis(v);
        Self {
            x0,
            x1,
            y0,
            y1,
            wx,
            wy,
            res,
            x_free,
            y_free,
        }
    }

    pub fn taps(&self) -> [(usize, f64); 4] {
        let r = self.res;
        [
            (self.y0 * r + self.x0, (1.0 - self.wx) * (1.0 - self.wy)),
            (self.y0 * r + self.x1, self.wx * (1.0 - self.wy)),
            (self.y1 * r + self.x0, (1.0 - self.wx) * self.wy),
            (self.y1 * r + self.x1, self.wx * self.wy),
        ]
    }
}
