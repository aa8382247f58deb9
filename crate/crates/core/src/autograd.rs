//! Tape-based reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles. Leaves
//! are constants (no gradient), inputs (gradient reported by handle) or
//! parameters (gradient reported by [`ParamKey`]). [`Graph::detach`] copies a
//! value into a fresh constant, which is the only way to stop gradient flow.
//!
//! The graph is single-use: build it for one forward pass, call
//! [`Graph::backward`] once, then drop it.

use std::collections::HashMap;

use crate::params::{ParamId, ParamKey, ParamStore};
use crate::tensor::{strides, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Input,
    Param(ParamKey),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBcast(Var, Var),
    MulBcast(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    MatMul(Var, Var),
    Bmm { a: Var, b: Var, trans_b: bool },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Narrow { x: Var, axis: usize, start: usize },
    BroadcastBatch(Var),
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    AdaptivePool(Var),
    SumLast(Var),
    NormLast(Var),
    MeanAll(Var),
    SumAll(Var),
    SmoothL1 { a: Var, b: Var, delta: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamKey, Var>,
}

/// Gradients produced by [`Graph::backward`].
///
/// Only leaves reached by the backward sweep appear; an absent parameter
/// received no gradient at all.
#[derive(Debug, Default)]
pub struct Gradients {
    params: HashMap<ParamKey, Tensor>,
    inputs: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn param(&self, key: ParamKey) -> Option<&Tensor> {
        self.params.get(&key)
    }

    pub fn input(&self, var: Var) -> Option<&Tensor> {
        self.inputs.get(&var)
    }

    pub fn params(&self) -> impl Iterator<Item = (&ParamKey, &Tensor)> {
        self.params.iter()
    }

    pub fn take_param(&mut self, key: ParamKey) -> Option<Tensor> {
        self.params.remove(&key)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let tracked = parents.iter().any(|p| self.nodes[p.0].tracked);
        let op = if tracked { op } else { Op::Constant };
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Constant, tracked: false });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is reported through [`Gradients::input`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Input, tracked: true });
        Var(self.nodes.len() - 1)
    }

    /// Inserts a parameter leaf; repeated requests return the same handle.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let key = store.key(id);
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        self.nodes.push(Node { value: store.get(id).clone(), op: Op::Param(key), tracked: true });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(key, v);
        v
    }

    /// Copies the value into a new constant leaf; gradient stops here.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.clone();
        self.constant(value)
    }

    fn binary_same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value(a);
        let bv = self.value(b);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "add");
        let v = self.zip_map(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "sub");
        let v = self.zip_map(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "mul");
        let v = self.zip_map(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "div");
        let v = self.zip_map(a, b, |x, y| x / y);
        self.push(v, Op::Div(a, b), &[a, b])
    }

    fn check_suffix(&self, x: Var, b: Var, what: &str) -> usize {
        let xs = self.shape(x);
        let bs = self.shape(b);
        assert!(
            bs.len() <= xs.len() && xs[xs.len() - bs.len()..] == *bs,
            "{what}: {:?} is not a suffix of {:?}",
            bs,
            xs
        );
        bs.iter().product()
    }

    /// `x + b` where the shape of `b` is a trailing suffix of the shape of `x`.
    pub fn add_bcast(&mut self, x: Var, b: Var) -> Var {
        let nb = self.check_suffix(x, b, "add_bcast");
        let bv = self.value(b).data();
        let xv = self.value(x);
        let data = xv.data().iter().enumerate().map(|(i, &v)| v + bv[i % nb]).collect();
        let v = Tensor::new(xv.shape().to_vec(), data);
        self.push(v, Op::AddBcast(x, b), &[x, b])
    }

    /// `x * b` where the shape of `b` is a trailing suffix of the shape of `x`.
    pub fn mul_bcast(&mut self, x: Var, b: Var) -> Var {
        let nb = self.check_suffix(x, b, "mul_bcast");
        let bv = self.value(b).data();
        let xv = self.value(x);
        let data = xv.data().iter().enumerate().map(|(i, &v)| v * bv[i % nb]).collect();
        let v = Tensor::new(xv.shape().to_vec(), data);
        self.push(v, Op::MulBcast(x, b), &[x, b])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|t| t * c);
        self.push(v, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|t| t + c);
        self.push(v, Op::AddScalar(x), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(gelu);
        self.push(v, Op::Gelu(x), &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = *xv.shape().last().expect("softmax of a scalar");
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let v = Tensor::new(xv.shape().to_vec(), out);
        self.push(v, Op::Softmax(x), &[x])
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let n = *xv.shape().last().expect("layer_norm of a scalar");
        assert_eq!(self.value(gamma).len(), n);
        assert_eq!(self.value(beta).len(), n);
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let rows = xv.len() / n;
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * gv[j] + bv[j];
            }
        }
        let v = Tensor::new(xv.shape().to_vec(), out);
        self.push(v, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta])
    }

    /// `x [.., k] @ w [k, n] -> [.., n]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(ws.len(), 2, "matmul weight must be 2-D, got {ws:?}");
        let k = *xs.last().unwrap();
        assert_eq!(k, ws[0], "matmul: {xs:?} @ {ws:?}");
        let n = ws[1];
        let m = self.value(x).len() / k;
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(x).data(), false, self.value(w).data(), false, &mut out, 0.0);
        let mut shape = xs;
        *shape.last_mut().unwrap() = n;
        self.push(Tensor::new(shape, out), Op::MatMul(x, w), &[x, w])
    }

    /// Batched product `a [B, m, k] @ b [B, k, n]`, or `a @ b^T` for
    /// `b [B, n, k]` when `trans_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let as_ = self.shape(a).to_vec();
        let bs = self.shape(b).to_vec();
        assert!(as_.len() == 3 && bs.len() == 3 && as_[0] == bs[0], "bmm: {as_:?} {bs:?}");
        let (batch, m, k) = (as_[0], as_[1], as_[2]);
        let n = if trans_b {
            assert_eq!(bs[2], k, "bmm: {as_:?} @ {bs:?}^T");
            bs[1]
        } else {
            assert_eq!(bs[1], k, "bmm: {as_:?} @ {bs:?}");
            bs[2]
        };
        let mut out = vec![0.0; batch * m * n];
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &ad[i * m * k..(i + 1) * m * k],
                false,
                &bd[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        self.push(Tensor::new([batch, m, n], out), Op::Bmm { a, b, trans_b }, &[a, b])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self.value(x).clone().reshape(shape.to_vec());
        self.push(v, Op::Reshape(x), &[x])
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Var {
        let xv = self.value(x);
        let (shape, data) = permute_data(xv.data(), xv.shape(), perm);
        self.push(Tensor::new(shape, data), Op::Permute(x, perm.to_vec()), &[x])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = self.shape(parts[0]).to_vec();
        let outer: usize = first[..axis].iter().product();
        let rest: usize = first[axis + 1..].iter().product();
        let mut total_axis = 0;
        for p in parts {
            let s = self.shape(*p);
            assert_eq!(s.len(), first.len(), "concat rank mismatch");
            assert!(
                s[..axis] == first[..axis] && s[axis + 1..] == first[axis + 1..],
                "concat: {:?} vs {:?} on axis {axis}",
                s,
                first
            );
            total_axis += s[axis];
        }
        let mut out = Vec::with_capacity(outer * total_axis * rest);
        for o in 0..outer {
            for p in parts {
                let pv = self.value(*p);
                let inner = pv.shape()[axis] * rest;
                out.extend_from_slice(&pv.data()[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total_axis;
        self.push(Tensor::new(shape, out), Op::Concat(parts.to_vec(), axis), parts)
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let xs = self.shape(x).to_vec();
        assert!(start + len <= xs[axis], "narrow {start}+{len} out of {:?} axis {axis}", xs);
        let outer: usize = xs[..axis].iter().product();
        let rest: usize = xs[axis + 1..].iter().product();
        let in_inner = xs[axis] * rest;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * rest);
        for o in 0..outer {
            let base = o * in_inner + start * rest;
            out.extend_from_slice(&xd[base..base + len * rest]);
        }
        let mut shape = xs;
        shape[axis] = len;
        self.push(Tensor::new(shape, out), Op::Narrow { x, axis, start }, &[x])
    }

    /// Repeats `x` `n` times along a new leading axis.
    pub fn broadcast_batch(&mut self, x: Var, n: usize) -> Var {
        let xv = self.value(x);
        let mut data = Vec::with_capacity(xv.len() * n);
        for _ in 0..n {
            data.extend_from_slice(xv.data());
        }
        let mut shape = vec![n];
        shape.extend_from_slice(xv.shape());
        self.push(Tensor::new(shape, data), Op::BroadcastBatch(x), &[x])
    }

    /// 2-D convolution, `x [N, C, H, W]`, `w [O, C, KH, KW]`, `b [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert!(xs.len() == 4 && ws.len() == 4 && xs[1] == ws[1], "conv2d: {xs:?} * {ws:?}");
        let geo = ConvGeometry::new(&xs, &ws, stride, pad);
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let bd = self.value(b).data();
        assert_eq!(bd.len(), geo.o);
        let hw = geo.ho * geo.wo;
        let mut cols = vec![0.0; geo.ckk() * hw];
        let mut out = vec![0.0; geo.n * geo.o * hw];
        for n in 0..geo.n {
            geo.im2col(&xd[n * geo.in_size()..(n + 1) * geo.in_size()], &mut cols);
            let on = &mut out[n * geo.o * hw..(n + 1) * geo.o * hw];
            for (o, row) in on.chunks_mut(hw).enumerate() {
                row.fill(bd[o]);
            }
            gemm(geo.o, geo.ckk(), hw, wd, false, &cols, false, on, 1.0);
        }
        let v = Tensor::new([geo.n, geo.o, geo.ho, geo.wo], out);
        self.push(v, Op::Conv2d { x, w, b, stride, pad }, &[x, w, b])
    }

    /// Adaptive average pooling of `[N, C, H, W]` to `[N, C, oh, ow]` with the
    /// usual floor/ceil bin edges.
    pub fn adaptive_avg_pool2d(&mut self, x: Var, oh: usize, ow: usize) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 4);
        let (h, w) = (xs[2], xs[3]);
        let planes = xs[0] * xs[1];
        let xd = self.value(x).data();
        let mut out = vec![0.0; planes * oh * ow];
        for p in 0..planes {
            let plane = &xd[p * h * w..(p + 1) * h * w];
            for i in 0..oh {
                let (r0, r1) = pool_bin(i, h, oh);
                for j in 0..ow {
                    let (c0, c1) = pool_bin(j, w, ow);
                    let mut s = 0.0;
                    for r in r0..r1 {
                        for c in c0..c1 {
                            s += plane[r * w + c];
                        }
                    }
                    out[p * oh * ow + i * ow + j] = s / ((r1 - r0) * (c1 - c0)) as f64;
                }
            }
        }
        let v = Tensor::new([xs[0], xs[1], oh, ow], out);
        self.push(v, Op::AdaptivePool(x), &[x])
    }

    /// Sum over the last axis.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = *xv.shape().last().unwrap();
        let data: Vec<f64> = xv.data().chunks(n).map(|r| r.iter().sum()).collect();
        let v = Tensor::new(reduced_shape(xv.shape()), data);
        self.push(v, Op::SumLast(x), &[x])
    }

    /// Euclidean norm over the last axis. The gradient at a zero row is zero.
    pub fn norm_last(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = *xv.shape().last().unwrap();
        let data: Vec<f64> =
            xv.data().chunks(n).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let v = Tensor::new(reduced_shape(xv.shape()), data);
        self.push(v, Op::NormLast(x), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let v = Tensor::scalar(xv.sum() / xv.len() as f64);
        self.push(v, Op::MeanAll(x), &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::SumAll(x), &[x])
    }

    /// Element-wise smooth L1 (Huber) of `a - b` with transition `delta`.
    pub fn smooth_l1(&mut self, a: Var, b: Var, delta: f64) -> Var {
        self.binary_same_shape(a, b, "smooth_l1");
        let v = self.zip_map(a, b, |x, y| huber(x - y, delta));
        self.push(v, Op::SmoothL1 { a, b, delta }, &[a, b])
    }

    /// Reverse sweep from the single-element `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        let mut out = Gradients::default();
        if !self.nodes[loss.0].tracked {
            return out;
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Input => {
                    out.inputs.insert(Var(i), Tensor::new(node.value.shape().to_vec(), g));
                }
                Op::Param(key) => {
                    out.params.insert(*key, Tensor::new(node.value.shape().to_vec(), g));
                }
                op => self.backward_op(op, i, &g, &mut grads),
            }
        }
        out
    }

    fn buf<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].tracked {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backward_op(&self, op: &Op, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        match op {
            Op::Constant | Op::Input | Op::Param(_) => unreachable!(),
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(ga) = self.buf(grads, v) {
                        axpy(ga, g, 1.0);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.buf(grads, *a) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gb) = self.buf(grads, *b) {
                    axpy(gb, g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if let Some(ga) = self.buf(grads, *a) {
                    for k in 0..g.len() {
                        ga[k] += g[k] * bv[k];
                    }
                }
                if let Some(gb) = self.buf(grads, *b) {
                    for k in 0..g.len() {
                        gb[k] += g[k] * av[k];
                    }
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if let Some(ga) = self.buf(grads, *a) {
                    for k in 0..g.len() {
                        ga[k] += g[k] / bv[k];
                    }
                }
                if let Some(gb) = self.buf(grads, *b) {
                    for k in 0..g.len() {
                        gb[k] -= g[k] * av[k] / (bv[k] * bv[k]);
                    }
                }
            }
            Op::AddBcast(x, b) => {
                if let Some(gx) = self.buf(grads, *x) {
                    axpy(gx, g, 1.0);
                }
                if let Some(gb) = self.buf(grads, *b) {
                    let nb = gb.len();
                    for (k, &gk) in g.iter().enumerate() {
                        gb[k % nb] += gk;
                    }
                }
            }
            Op::MulBcast(x, b) => {
                let (xv, bv) = (val(*x), val(*b));
                let nb = bv.len();
                if let Some(gx) = self.buf(grads, *x) {
                    for (k, &gk) in g.iter().enumerate() {
                        gx[k] += gk * bv[k % nb];
                    }
                }
                if let Some(gb) = self.buf(grads, *b) {
                    for (k, &gk) in g.iter().enumerate() {
                        gb[k % nb] += gk * xv[k];
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = self.buf(grads, *x) {
                    axpy(gx, g, *c);
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                if let Some(gx) = self.buf(grads, *x) {
                    axpy(gx, g, 1.0);
                }
            }
            Op::Gelu(x) => {
                let xv = val(*x);
                if let Some(gx) = self.buf(grads, *x) {
                    for k in 0..g.len() {
                        gx[k] += g[k] * gelu_grad(xv[k]);
                    }
                }
            }
            Op::Softmax(x) => {
                let y = self.nodes[i].value.data();
                let n = *self.nodes[i].value.shape().last().unwrap();
                if let Some(gx) = self.buf(grads, *x) {
                    for r in 0..y.len() / n {
                        let ys = &y[r * n..(r + 1) * n];
                        let gs = &g[r * n..(r + 1) * n];
                        let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            gx[r * n + j] += ys[j] * (gs[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let gam = val(*gamma);
                let n = gam.len();
                let rows = rstd.len();
                if let Some(gg) = self.buf(grads, *gamma) {
                    for r in 0..rows {
                        for j in 0..n {
                            gg[j] += g[r * n + j] * xhat[r * n + j];
                        }
                    }
                }
                if let Some(gb) = self.buf(grads, *beta) {
                    for r in 0..rows {
                        for j in 0..n {
                            gb[j] += g[r * n + j];
                        }
                    }
                }
                if let Some(gx) = self.buf(grads, *x) {
                    let mut gh = vec![0.0; n];
                    for r in 0..rows {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..n {
                            gh[j] = g[r * n + j] * gam[j];
                            m1 += gh[j];
                            m2 += gh[j] * xhat[r * n + j];
                        }
                        m1 /= n as f64;
                        m2 /= n as f64;
                        for j in 0..n {
                            gx[r * n + j] += rstd[r] * (gh[j] - m1 - xhat[r * n + j] * m2);
                        }
                    }
                }
            }
            Op::MatMul(x, w) => {
                let ws = self.nodes[w.0].value.shape();
                let (k, n) = (ws[0], ws[1]);
                let m = g.len() / n;
                let (xv, wv) = (val(*x), val(*w));
                if let Some(gx) = self.buf(grads, *x) {
                    gemm(m, n, k, g, false, wv, true, gx, 1.0);
                }
                if let Some(gw) = self.buf(grads, *w) {
                    gemm(k, m, n, xv, true, g, false, gw, 1.0);
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let as_ = self.nodes[a.0].value.shape();
                let (batch, m, k) = (as_[0], as_[1], as_[2]);
                let n = g.len() / (batch * m);
                let (av, bv) = (val(*a), val(*b));
                if let Some(ga) = self.buf(grads, *a) {
                    for t in 0..batch {
                        let gi = &g[t * m * n..(t + 1) * m * n];
                        let bi = &bv[t * k * n..(t + 1) * k * n];
                        // trans_b: ga = g b ; otherwise ga = g b^T
                        gemm(m, n, k, gi, false, bi, !*trans_b, &mut ga[t * m * k..(t + 1) * m * k], 1.0);
                    }
                }
                if let Some(gb) = self.buf(grads, *b) {
                    for t in 0..batch {
                        let gi = &g[t * m * n..(t + 1) * m * n];
                        let ai = &av[t * m * k..(t + 1) * m * k];
                        let gbi = &mut gb[t * k * n..(t + 1) * k * n];
                        if *trans_b {
                            gemm(n, m, k, gi, true, ai, false, gbi, 1.0);
                        } else {
                            gemm(k, m, n, ai, true, gi, false, gbi, 1.0);
                        }
                    }
                }
            }
            Op::Permute(x, perm) => {
                if let Some(gx) = self.buf(grads, *x) {
                    let mut inv = vec![0; perm.len()];
                    for (o, &p) in perm.iter().enumerate() {
                        inv[p] = o;
                    }
                    let (_, back) = permute_data(g, self.nodes[i].value.shape(), &inv);
                    axpy(gx, &back, 1.0);
                }
            }
            Op::Concat(parts, axis) => {
                let shape = self.nodes[i].value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let rest: usize = shape[axis + 1..].iter().product();
                let out_inner = shape[*axis] * rest;
                let mut offset = 0;
                for p in parts {
                    let inner = self.nodes[p.0].value.shape()[*axis] * rest;
                    if let Some(gp) = self.buf(grads, *p) {
                        for o in 0..outer {
                            let src = &g[o * out_inner + offset..o * out_inner + offset + inner];
                            axpy(&mut gp[o * inner..(o + 1) * inner], src, 1.0);
                        }
                    }
                    offset += inner;
                }
            }
            Op::Narrow { x, axis, start } => {
                let xs = self.nodes[x.0].value.shape();
                let len = self.nodes[i].value.shape()[*axis];
                let outer: usize = xs[..*axis].iter().product();
                let rest: usize = xs[axis + 1..].iter().product();
                let in_inner = xs[*axis] * rest;
                if let Some(gx) = self.buf(grads, *x) {
                    for o in 0..outer {
                        let base = o * in_inner + start * rest;
                        axpy(&mut gx[base..base + len * rest], &g[o * len * rest..(o + 1) * len * rest], 1.0);
                    }
                }
            }
            Op::BroadcastBatch(x) => {
                if let Some(gx) = self.buf(grads, *x) {
                    let n = gx.len();
                    for chunk in g.chunks(n) {
                        axpy(gx, chunk, 1.0);
                    }
                }
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let geo = ConvGeometry::new(
                    self.nodes[x.0].value.shape(),
                    self.nodes[w.0].value.shape(),
                    *stride,
                    *pad,
                );
                let hw = geo.ho * geo.wo;
                let (xv, wv) = (val(*x), val(*w));
                if let Some(gb) = self.buf(grads, *b) {
                    for n in 0..geo.n {
                        for o in 0..geo.o {
                            let base = (n * geo.o + o) * hw;
                            gb[o] += g[base..base + hw].iter().sum::<f64>();
                        }
                    }
                }
                let need_w = self.nodes[w.0].tracked;
                let need_x = self.nodes[x.0].tracked;
                let mut cols = vec![0.0; geo.ckk() * hw];
                if need_w {
                    let gw = self.buf(grads, *w).unwrap();
                    for n in 0..geo.n {
                        geo.im2col(&xv[n * geo.in_size()..(n + 1) * geo.in_size()], &mut cols);
                        let gn = &g[n * geo.o * hw..(n + 1) * geo.o * hw];
                        gemm(geo.o, hw, geo.ckk(), gn, false, &cols, true, gw, 1.0);
                    }
                }
                if need_x {
                    let gx = self.buf(grads, *x).unwrap();
                    for n in 0..geo.n {
                        let gn = &g[n * geo.o * hw..(n + 1) * geo.o * hw];
                        gemm(geo.ckk(), geo.o, hw, wv, true, gn, false, &mut cols, 0.0);
                        geo.col2im_add(&cols, &mut gx[n * geo.in_size()..(n + 1) * geo.in_size()]);
                    }
                }
            }
            Op::AdaptivePool(x) => {
                let xs = self.nodes[x.0].value.shape();
                let os = self.nodes[i].value.shape();
                let (h, w, oh, ow) = (xs[2], xs[3], os[2], os[3]);
                if let Some(gx) = self.buf(grads, *x) {
                    for p in 0..xs[0] * xs[1] {
                        for a in 0..oh {
                            let (r0, r1) = pool_bin(a, h, oh);
                            for c in 0..ow {
                                let (c0, c1) = pool_bin(c, w, ow);
                                let share = g[p * oh * ow + a * ow + c] / ((r1 - r0) * (c1 - c0)) as f64;
                                for r in r0..r1 {
                                    for cc in c0..c1 {
                                        gx[p * h * w + r * w + cc] += share;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::SumLast(x) => {
                let n = *self.nodes[x.0].value.shape().last().unwrap();
                if let Some(gx) = self.buf(grads, *x) {
                    for (k, v) in gx.iter_mut().enumerate() {
                        *v += g[k / n];
                    }
                }
            }
            Op::NormLast(x) => {
                let xv = val(*x);
                let n = *self.nodes[x.0].value.shape().last().unwrap();
                let norms = self.nodes[i].value.data();
                if let Some(gx) = self.buf(grads, *x) {
                    for (k, v) in gx.iter_mut().enumerate() {
                        let r = k / n;
                        if norms[r] > 0.0 {
                            *v += g[r] * xv[k] / norms[r];
                        }
                    }
                }
            }
            Op::MeanAll(x) => {
                if let Some(gx) = self.buf(grads, *x) {
                    let s = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|v| *v += s);
                }
            }
            Op::SumAll(x) => {
                if let Some(gx) = self.buf(grads, *x) {
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::SmoothL1 { a, b, delta } => {
                let (av, bv) = (val(*a), val(*b));
                let d: Vec<f64> = (0..g.len()).map(|k| g[k] * huber_grad(av[k] - bv[k], *delta)).collect();
                if let Some(ga) = self.buf(grads, *a) {
                    axpy(ga, &d, 1.0);
                }
                if let Some(gb) = self.buf(grads, *b) {
                    axpy(gb, &d, -1.0);
                }
            }
        }
    }
}

fn reduced_shape(shape: &[usize]) -> Vec<usize> {
    if shape.len() <= 1 {
        vec![1]
    } else {
        shape[..shape.len() - 1].to_vec()
    }
}

fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    debug_assert_eq!(y.len(), x.len());
    if a == 1.0 {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += xi;
        }
    } else {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += a * xi;
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Smooth L1 with transition `delta`: `r^2 / (2 delta)` inside, `|r| - delta / 2` outside.
pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a < delta {
        0.5 * r * r / delta
    } else {
        a - 0.5 * delta
    }
}

fn huber_grad(r: f64, delta: f64) -> f64 {
    if r.abs() < delta {
        r / delta
    } else {
        r.signum()
    }
}

fn pool_bin(i: usize, size: usize, out: usize) -> (usize, usize) {
    let start = (i * size) / out;
    let end = ((i + 1) * size).div_ceil(out);
    (start, end)
}

fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    assert_eq!(perm.len(), shape.len(), "permute rank mismatch");
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let rank = shape.len();
    if data.is_empty() {
        return (out_shape, out);
    }
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    loop {
        out.push(data[src]);
        let mut ax = rank;
        loop {
            if ax == 0 {
                return (out_shape, out);
            }
            ax -= 1;
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    fn new(xs: &[usize], ws: &[usize], stride: usize, pad: usize) -> Self {
        let (h, w, kh, kw) = (xs[2], xs[3], ws[2], ws[3]);
        assert!(h + 2 * pad >= kh && w + 2 * pad >= kw, "conv2d kernel larger than padded input");
        Self {
            n: xs[0],
            c: xs[1],
            h,
            w,
            o: ws[0],
            kh,
            kw,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
            stride,
            pad,
        }
    }

    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn in_size(&self) -> usize {
        self.c * self.h * self.w
    }

    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let hw = self.ho * self.wo;
        for c in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    for oi in 0..self.ho {
                        let ii = (oi * self.stride + ki) as isize - self.pad as isize;
                        if ii < 0 || ii >= self.h as isize {
                            continue;
                        }
                        for oj in 0..self.wo {
                            let jj = (oj * self.stride + kj) as isize - self.pad as isize;
                            if jj < 0 || jj >= self.w as isize {
                                continue;
                            }
                            f(row * hw + oi * self.wo + oj, (c * self.h + ii as usize) * self.w + jj as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        cols.fill(0.0);
        self.for_each_tap(|ci, xi| cols[ci] = x[xi]);
    }

    fn col2im_add(&self, cols: &[f64], gx: &mut [f64]) {
        self.for_each_tap(|ci, xi| gx[xi] += cols[ci]);
    }
}

/// `c = a' b' + beta c` on row-major buffers, where `a'` is `m x k` and `b'` is
/// `k x n`; the `*_t` flags say the stored buffer holds the transpose.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_t { (1, k) } else { (n, 1) };
    // SAFETY: the slices are at least as long as the strided extents above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
