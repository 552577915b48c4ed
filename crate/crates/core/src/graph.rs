//! Tape-based reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] records every operation as a node. Parameter leaves borrow
//! their values from a [`ParamSet`] so building a graph never copies weights.
//! [`Graph::backward`] walks the tape in reverse from a scalar node and
//! accumulates gradients into every reachable node; gradients from repeated
//! calls add up until [`Graph::zero_grad`].

use std::borrow::Cow;

use crate::attention::{attention_forward, check_attention_dims, AttentionMask};
use crate::error::{contract, shape, Result};
use crate::kernels;
use crate::tensor::{matrix_dims, GradBuffer, ParamId, ParamSet, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    /// Elementwise map with its derivative evaluated during the forward pass.
    Pointwise { x: Var, deriv: Vec<f64> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<f64> },
    LogSoftmax(Var),
    Sum(Var),
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, idx: Vec<usize> },
    GridAdd(Var, Var),
    /// Scalar whose gradient with respect to `x` was computed with the value.
    ScalarWithGrad { x: Var, dx: Vec<f64> },
}

struct Node<'p> {
    shape: Vec<usize>,
    value: Cow<'p, [f64]>,
    op: Op,
}

/// A recorded computation. See the module docs.
pub struct Graph<'p> {
    params: Option<&'p ParamSet>,
    nodes: Vec<Node<'p>>,
    grads: Vec<Option<Vec<f64>>>,
    /// One leaf per parameter, created on first use.
    param_vars: Vec<Option<Var>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self { params: None, nodes: Vec::new(), grads: Vec::new(), param_vars: Vec::new() }
    }

    pub fn with_params(params: &'p ParamSet) -> Self {
        Self { params: Some(params), nodes: Vec::new(), grads: Vec::new(), param_vars: vec![None; params.len()] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'p, [f64]>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn owned(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        self.push(shape, Cow::Owned(value), op)
    }

    /// Constant or leaf input; gradients are still tracked for it.
    pub fn input(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.owned(shape, t.into_data(), Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let params = self.params.expect("graph built without a parameter set");
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let t = params.get(id);
        let v = self.push(t.shape().to_vec(), Cow::Borrowed(t.data()), Op::Param(id));
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        matrix_dims(self.shape(v))
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape(format!("matmul {m}×{k} by {k2}×{n}")));
        }
        let out = kernels::matmul(self.value(a), self.value(b), m, k, n);
        Ok(self.owned(vec![m, n], out, Op::MatMul(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape(format!(
                "{what} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        self.owned(shape, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds the vector `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(b).len() != c {
            return Err(shape(format!("row bias of {} for {c} columns", self.value(b).len())));
        }
        let bv = self.value(b);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(c) {
            row.iter_mut().zip(bv).for_each(|(o, b)| *o += b);
        }
        Ok(self.owned(vec![r, c], out, Op::AddRow(x, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * s).collect();
        let shape = self.shape(x).to_vec();
        self.owned(shape, out, Op::Scale(x, s))
    }

    /// Elementwise `f` with derivative `df`. The derivative is trusted as given.
    pub fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Var {
        let xv = self.value(x);
        let out = xv.iter().map(|&v| f(v)).collect();
        let deriv = xv.iter().map(|&v| df(v)).collect();
        let shape = self.shape(x).to_vec();
        self.owned(shape, out, Op::Pointwise { x, deriv })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.value(x).iter().map(|v| v.tanh()).collect();
        let deriv = out.iter().map(|y| 1.0 - y * y).collect();
        let shape = self.shape(x).to_vec();
        self.owned(shape, out, Op::Pointwise { x, deriv })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.value(x).iter().map(|&v| kernels::sigmoid(v)).collect();
        let deriv = out.iter().map(|y| y * (1.0 - y)).collect();
        let shape = self.shape(x).to_vec();
        self.owned(shape, out, Op::Pointwise { x, deriv })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), |v| if v > 0.0 { 1.0 } else { 0.0 })
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(shape(format!("layer norm parameters do not match {c} columns")));
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut out = vec![0.0; r * c];
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        Ok(self.owned(vec![r, c], out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }))
    }

    /// Multi-head masked scaled dot-product attention.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        mask: &AttentionMask,
        heads: usize,
    ) -> Result<Var> {
        let (n, m, d) =
            check_attention_dims(self.shape(q), self.shape(k), self.shape(v), mask, heads)?;
        let (out, probs) =
            attention_forward(self.value(q), self.value(k), self.value(v), n, m, d, heads, mask);
        Ok(self.owned(vec![n, d], out, Op::Attention { q, k, v, heads, probs }))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let mut out = vec![0.0; r * c];
        for (o, row) in out.chunks_mut(c).zip(self.value(x).chunks(c)) {
            kernels::log_softmax_row(row, o);
        }
        self.owned(vec![r, c], out, Op::LogSoftmax(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.owned(vec![], vec![s], Op::Sum(x))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(shape("concatenating zero matrices"));
        };
        let c = self.dims(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, pc) = self.dims(p);
            if pc != c {
                return Err(shape(format!("concat rows of width {pc} and {c}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        Ok(self.owned(vec![rows, c], out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + len > r {
            return Err(shape(format!("rows {start}..{} of {r}", start + len)));
        }
        let out = self.value(x)[start * c..(start + len) * c].to_vec();
        Ok(self.owned(vec![len, c], out, Op::SliceRows { x, start }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + len > c {
            return Err(shape(format!("cols {start}..{} of {c}", start + len)));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for row in xv.chunks(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        Ok(self.owned(vec![r, len], out, Op::SliceCols { x, start }))
    }

    /// Row lookup, e.g. an embedding table indexed by token ids.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(x);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(shape(format!("row {i} of {r}")));
            }
            out.extend_from_slice(&xv[i * c..(i + 1) * c]);
        }
        Ok(self.owned(vec![idx.len(), c], out, Op::GatherRows { x, idx: idx.to_vec() }))
    }

    /// Outer sum over rows: `out[i·m + j] = a[i] + b[j]` for `a: [n×c]`, `b: [m×c]`.
    pub fn grid_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, c) = self.dims(a);
        let (m, c2) = self.dims(b);
        if c != c2 {
            return Err(shape(format!("grid add of widths {c} and {c2}")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(n * m * c);
        for i in 0..n {
            let ar = &av[i * c..(i + 1) * c];
            for j in 0..m {
                out.extend(ar.iter().zip(&bv[j * c..(j + 1) * c]).map(|(x, y)| x + y));
            }
        }
        Ok(self.owned(vec![n * m, c], out, Op::GridAdd(a, b)))
    }

    /// Records a scalar computed outside the graph together with its gradient
    /// with respect to `x`; used for fused losses.
    pub fn scalar_with_grad(&mut self, x: Var, value: f64, dx: Vec<f64>) -> Result<Var> {
        if dx.len() != self.value(x).len() {
            return Err(shape("fused loss gradient does not match its input"));
        }
        Ok(self.owned(vec![], vec![value], Op::ScalarWithGrad { x, dx }))
    }

    /// Back-propagates from the scalar `loss`, adding into existing gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(contract(format!(
                "backward from a non-scalar node of shape {:?}",
                self.shape(loss)
            )));
        }
        let mut g: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        g[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gi) = g[i].take() else { continue };
            self.propagate(i, &gi, &mut g);
            match &mut self.grads[i] {
                Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(gi),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, gi: &[f64], g: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let len = self.nodes[v.0].value.len();
            let slot = g[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |ga| kernels::matmul_acc_bt(gi, bv, m, n, k, ga));
                acc(*b, &mut |gb| kernels::matmul_acc_at(av, gi, m, k, n, gb));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, gi));
                acc(*b, &mut |gb| add_into(gb, gi));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, gi));
                acc(*b, &mut |gb| gb.iter_mut().zip(gi).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |ga| {
                    for ((x, y), w) in ga.iter_mut().zip(gi).zip(bv) {
                        *x += y * w;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((x, y), w) in gb.iter_mut().zip(gi).zip(av) {
                        *x += y * w;
                    }
                });
            }
            Op::AddRow(x, b) => {
                let c = self.dims(*x).1;
                acc(*x, &mut |gx| add_into(gx, gi));
                acc(*b, &mut |gb| {
                    for row in gi.chunks(c) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Scale(x, s) => acc(*x, &mut |gx| {
                gx.iter_mut().zip(gi).for_each(|(a, b)| *a += s * b);
            }),
            Op::Pointwise { x, deriv } => acc(*x, &mut |gx| {
                for ((a, b), d) in gx.iter_mut().zip(gi).zip(deriv) {
                    *a += b * d;
                }
            }),
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let (r, c) = self.dims(*x);
                let gv = self.value(*gamma);
                acc(*gamma, &mut |gg| {
                    for (gr, hr) in gi.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                });
                acc(*beta, &mut |gb| {
                    for gr in gi.chunks(c) {
                        add_into(gb, gr);
                    }
                });
                acc(*x, &mut |gx| {
                    let cf = c as f64;
                    for row in 0..r {
                        let gr = &gi[row * c..(row + 1) * c];
                        let hr = &xhat[row * c..(row + 1) * c];
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..c {
                            let dh = gr[j] * gv[j];
                            s1 += dh;
                            s2 += dh * hr[j];
                        }
                        for j in 0..c {
                            let dh = gr[j] * gv[j];
                            gx[row * c + j] += inv_std[row] * (dh - s1 / cf - hr[j] * s2 / cf);
                        }
                    }
                });
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (n, d) = self.dims(*q);
                let m = self.dims(*k).0;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let mut gq = vec![0.0; n * d];
                let mut gk = vec![0.0; m * d];
                let mut gvv = vec![0.0; m * d];
                let mut dp = vec![0.0; m];
                for h in 0..*heads {
                    let off = h * dh;
                    for i in 0..n {
                        let p = &probs[(h * n + i) * m..(h * n + i + 1) * m];
                        let go = &gi[i * d + off..i * d + off + dh];
                        let mut s = 0.0;
                        for j in 0..m {
                            if p[j] == 0.0 {
                                dp[j] = 0.0;
                                continue;
                            }
                            let vj = &vv[j * d + off..j * d + off + dh];
                            dp[j] = kernels::dot(go, vj);
                            s += p[j] * dp[j];
                            let gvj = &mut gvv[j * d + off..j * d + off + dh];
                            for (a, &b) in gvj.iter_mut().zip(go) {
                                *a += p[j] * b;
                            }
                        }
                        for j in 0..m {
                            if p[j] == 0.0 {
                                continue;
                            }
                            let ds = p[j] * (dp[j] - s) * scale;
                            for c in 0..dh {
                                gq[i * d + off + c] += ds * kv[j * d + off + c];
                                gk[j * d + off + c] += ds * qv[i * d + off + c];
                            }
                        }
                    }
                }
                acc(*q, &mut |x| add_into(x, &gq));
                acc(*k, &mut |x| add_into(x, &gk));
                acc(*v, &mut |x| add_into(x, &gvv));
            }
            Op::LogSoftmax(x) => {
                let c = self.dims(*x).1;
                let out = &node.value;
                acc(*x, &mut |gx| {
                    for ((gxr, gr), yr) in gx.chunks_mut(c).zip(gi.chunks(c)).zip(out.chunks(c)) {
                        let s: f64 = gr.iter().sum();
                        for j in 0..c {
                            gxr[j] += gr[j] - yr[j].exp() * s;
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|a| *a += gi[0])),
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    acc(p, &mut |gp| add_into(gp, &gi[off..off + len]));
                    off += len;
                }
            }
            Op::SliceRows { x, start } => {
                let c = self.dims(*x).1;
                acc(*x, &mut |gx| add_into(&mut gx[start * c..start * c + gi.len()], gi));
            }
            Op::SliceCols { x, start } => {
                let c = self.dims(*x).1;
                let len = node.shape[1];
                acc(*x, &mut |gx| {
                    for (gxr, gr) in gx.chunks_mut(c).zip(gi.chunks(len)) {
                        add_into(&mut gxr[*start..start + len], gr);
                    }
                });
            }
            Op::GatherRows { x, idx } => {
                let c = self.dims(*x).1;
                acc(*x, &mut |gx| {
                    for (k, &r) in idx.iter().enumerate() {
                        add_into(&mut gx[r * c..(r + 1) * c], &gi[k * c..(k + 1) * c]);
                    }
                });
            }
            Op::GridAdd(a, b) => {
                let (n, c) = self.dims(*a);
                let m = self.dims(*b).0;
                acc(*a, &mut |ga| {
                    for i in 0..n {
                        for j in 0..m {
                            let src = &gi[(i * m + j) * c..(i * m + j + 1) * c];
                            add_into(&mut ga[i * c..(i + 1) * c], src);
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..n {
                        for j in 0..m {
                            let src = &gi[(i * m + j) * c..(i * m + j + 1) * c];
                            add_into(&mut gb[j * c..(j + 1) * c], src);
                        }
                    }
                });
            }
            Op::ScalarWithGrad { x, dx } => acc(*x, &mut |gx| {
                gx.iter_mut().zip(dx).for_each(|(a, b)| *a += gi[0] * b);
            }),
        }
    }

    /// Sums the gradients of every parameter leaf into a buffer aligned with
    /// the graph's parameter set.
    pub fn param_grads(&self) -> GradBuffer {
        let params = self.params.expect("graph built without a parameter set");
        let mut buf = GradBuffer::zeros_like(params);
        for (node, grad) in self.nodes.iter().zip(&self.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, grad) {
                add_into(&mut buf.grads[id.index()], g);
            }
        }
        buf
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}
