//! Reverse-mode tape.
//!
//! Every op appends a node holding its forward value plus whatever the
//! backward pass needs. Nodes are only ever appended after their inputs, so
//! walking the node list backwards is a valid reverse topological order.

use std::sync::Arc;

use super::counter::{self, FlopKind};
use super::kernels::{self, AttnGeom, AttnGrads, ConvGeom, MatRef};
use super::ops::{self, Activation, ConvSpec};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise penalty averaged over all elements by [`Graph::penalty`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Penalty {
    Abs,
    Square,
    Charbonnier(f64),
}

impl Penalty {
    pub fn value(self, d: f64) -> f64 {
        match self {
            Penalty::Abs => d.abs(),
            Penalty::Square => d * d,
            Penalty::Charbonnier(eps) => (d * d + eps * eps).sqrt(),
        }
    }

    pub fn derivative(self, d: f64) -> f64 {
        match self {
            Penalty::Abs => {
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Penalty::Square => 2.0 * d,
            Penalty::Charbonnier(eps) => d / (d * d + eps * eps).sqrt(),
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    Gather {
        x: Var,
        idx: Arc<[usize]>,
        row_len: usize,
    },
    Transpose(Var),
    Reshape(Var),
    Conv {
        x: Var,
        w: Var,
        b: Var,
        spec: ConvSpec,
        geom: ConvGeom,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Var,
        spec: ConvSpec,
        geom: ConvGeom,
    },
    Concat(Var, Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        bias: Option<Var>,
        geom: AttnGeom,
        probs: Vec<f64>,
    },
    Penalty {
        pred: Var,
        target: Arc<Tensor>,
        kind: Penalty,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of forward ops.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar (or seeded) output with respect to every node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when nothing flowed into it.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient shape"))
    }

    /// Gradient for `v`, zeros when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }

    pub fn slice(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
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

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// Adds `b` (length = last extent of `x`) to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.last_dim();
        if self.value(b).shape() != [n] {
            return Err(Error::Dimension {
                op: "add_row_bias",
                left: xv.shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        let mut out = xv.clone();
        let bias = self.value(b).data().to_vec();
        for row in out.data_mut().chunks_exact_mut(n) {
            row.iter_mut().zip(&bias).for_each(|(v, bv)| *v += bv);
        }
        Ok(self.push(out, Op::AddRowBias(x, b), &[x, b]))
    }

    /// `x·w + b` on the rows of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Var {
        let out = ops::activation(kind, self.value(x));
        let op = match kind {
            Activation::Sigmoid => Op::Sigmoid(x),
            Activation::Gelu => Op::Gelu(x),
        };
        self.push(out, op, &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (out, xhat, inv_std) =
            ops::layer_norm_full(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let out = ops::softmax_lastdim(self.value(x));
        self.push(out, Op::Softmax(x), &[x])
    }

    /// Output row `i` (of `row_len` values) is input row `idx[i]`. Repeated
    /// indices are allowed; their gradients accumulate.
    pub fn gather(&mut self, x: Var, idx: Arc<[usize]>, row_len: usize, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let rows = xv.len() / row_len;
        if row_len == 0 || xv.len() % row_len != 0 || idx.iter().any(|&r| r >= rows) {
            return Err(Error::Shape(format!(
                "gather of {} rows of {row_len} from {:?} is out of range",
                idx.len(),
                xv.shape()
            )));
        }
        let mut out = Vec::with_capacity(idx.len() * row_len);
        for &r in idx.iter() {
            out.extend_from_slice(&xv.data()[r * row_len..(r + 1) * row_len]);
        }
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, Op::Gather { x, idx, row_len }, &[x]))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2("transpose")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let out = Tensor::new([c, r], out)?;
        Ok(self.push(out, Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn conv2d(&mut self, x: Var, spec: ConvSpec, w: Var, b: Var) -> Result<Var> {
        let geom = spec.geometry(self.value(x))?;
        let out = ops::conv2d(self.value(x), &spec, self.value(w), self.value(b))?;
        Ok(self.push(out, Op::Conv { x, w, b, spec, geom }, &[x, w, b]))
    }

    pub fn transposed_conv2d(&mut self, x: Var, spec: ConvSpec, w: Var, b: Var) -> Result<Var> {
        let geom = spec.transposed_geometry(self.value(x))?;
        let out = ops::transposed_conv2d(self.value(x), &spec, self.value(w), self.value(b))?;
        Ok(self.push(out, Op::ConvTranspose { x, w, b, spec, geom }, &[x, w, b]))
    }

    /// Concatenation along the first axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != bv.rank() || av.shape()[1..] != bv.shape()[1..] {
            return Err(Error::Dimension {
                op: "concat",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut shape = av.shape().to_vec();
        shape[0] += bv.shape()[0];
        let mut data = av.data().to_vec();
        data.extend_from_slice(bv.data());
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Concat(a, b), &[a, b]))
    }

    /// Multi-head attention within consecutive groups of `group_len` rows.
    ///
    /// `q`, `k`, `v` are `[groups·group_len × C]`, head `h` owning columns
    /// `h·d..(h+1)·d` with `d = C/heads`. Per group and head the output is
    /// `softmax(Q Kᵀ/√d + B)·V`, where `B` is the optional `[heads × L × L]`
    /// bias. The result keeps the input layout, i.e. heads concatenated on
    /// the feature axis.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        bias: Option<Var>,
        group_len: usize,
        heads: usize,
    ) -> Result<Var> {
        let (rows, c) = self.value(q).dims2("attention")?;
        for other in [k, v] {
            if self.value(other).shape() != [rows, c] {
                return Err(Error::Dimension {
                    op: "attention q/k/v",
                    left: vec![rows, c],
                    right: self.value(other).shape().to_vec(),
                });
            }
        }
        if heads == 0 || c % heads != 0 {
            return Err(Error::Config(format!("{c} channels cannot be split into {heads} heads")));
        }
        if group_len == 0 || rows % group_len != 0 {
            return Err(Error::Shape(format!("{rows} tokens do not split into groups of {group_len}")));
        }
        if let Some(b) = bias {
            let expected = [heads, group_len, group_len];
            if self.value(b).shape() != expected {
                return Err(Error::Config(format!(
                    "attention bias has shape {:?}, expected {expected:?}",
                    self.value(b).shape()
                )));
            }
        }
        let geom = AttnGeom {
            groups: rows / group_len,
            len: group_len,
            channels: c,
            heads,
        };
        let (out, probs) = kernels::attention_forward(
            &geom,
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            bias.map(|b| self.value(b).data()),
        );
        let pairs = (geom.groups * heads * group_len * group_len) as u64;
        counter::add(FlopKind::AttentionScores, pairs * geom.head_dim() as u64);
        counter::add(FlopKind::Softmax, pairs);
        counter::add(FlopKind::AttentionMix, pairs * geom.head_dim() as u64);
        let out = Tensor::new([rows, c], out)?;
        let mut inputs = vec![q, k, v];
        inputs.extend(bias);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                bias,
                geom,
                probs,
            },
            &inputs,
        ))
    }

    /// Mean of `kind(pred − target)` over all elements, as a 1-element node.
    pub fn penalty(&mut self, pred: Var, target: Arc<Tensor>, kind: Penalty) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::Dimension {
                op: "loss",
                left: p.shape().to_vec(),
                right: target.shape().to_vec(),
            });
        }
        let n = p.len() as f64;
        let mean = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| kind.value(a - b))
            .sum::<f64>()
            / n;
        Ok(self.push(Tensor::scalar(mean), Op::Penalty { pred, target, kind }, &[pred]))
    }

    /// Reverse pass seeded with ones (the usual choice for a scalar output).
    pub fn backward(&self, out: Var) -> Gradients {
        let seed = Tensor::full(self.value(out).shape(), 1.0);
        self.backward_with(out, &seed).expect("seed matches output shape")
    }

    /// Reverse pass seeded with an arbitrary cotangent for `out`.
    pub fn backward_with(&self, out: Var, seed: &Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(out).shape() {
            return Err(Error::Dimension {
                op: "backward seed",
                left: self.value(out).shape().to_vec(),
                right: seed.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed.data().to_vec());
        for i in (0..=out.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if self.wants(v) {
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
                f(buf);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                let gm = MatRef::new(g, m, n);
                acc(*a, &mut |da| kernels::gemm(gm, MatRef::new(self.value(*b).data(), k, n).t(), da, 1.0));
                acc(*b, &mut |db| kernels::gemm(MatRef::new(self.value(*a).data(), m, k).t(), gm, db, 1.0));
            }
            Op::AddRowBias(x, b) => {
                acc(*x, &mut |dx| add_into(dx, g));
                let n = self.value(*b).len();
                acc(*b, &mut |db| {
                    for row in g.chunks_exact(n) {
                        add_into(db, row);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| add_into(db, g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |da| {
                    for ((d, gi), bi) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                });
                acc(*b, &mut |db| {
                    for ((d, gi), ai) in db.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                });
            }
            Op::Scale(x, s) => acc(*x, &mut |dx| {
                for (d, gi) in dx.iter_mut().zip(g) {
                    *d += s * gi;
                }
            }),
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, &mut |dx| {
                    for ((d, gi), yi) in dx.iter_mut().zip(g).zip(y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |dx| {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv) {
                        *d += gi * kernels::gelu_grad(*xi);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = self.value(*gamma).len();
                let gam = self.value(*gamma).data();
                acc(*gamma, &mut |dg| {
                    for (gr, xr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for ((d, gi), xi) in dg.iter_mut().zip(gr).zip(xr) {
                            *d += gi * xi;
                        }
                    }
                });
                acc(*beta, &mut |db| {
                    for gr in g.chunks_exact(c) {
                        add_into(db, gr);
                    }
                });
                acc(*x, &mut |dx| {
                    let mut dxhat = vec![0.0; c];
                    for (r, ((gr, xr), dr)) in g
                        .chunks_exact(c)
                        .zip(xhat.chunks_exact(c))
                        .zip(dx.chunks_exact_mut(c))
                        .enumerate()
                    {
                        for ((o, gi), gm) in dxhat.iter_mut().zip(gr).zip(gam) {
                            *o = gi * gm;
                        }
                        let sum: f64 = dxhat.iter().sum();
                        let dot: f64 = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum();
                        let scale = inv_std[r] / c as f64;
                        for ((d, dh), xi) in dr.iter_mut().zip(&dxhat).zip(xr) {
                            *d += scale * (c as f64 * dh - sum - xi * dot);
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let l = node.value.last_dim();
                acc(*x, &mut |dx| kernels::softmax_rows_backward(y, g, l, dx));
            }
            Op::Gather { x, idx, row_len } => acc(*x, &mut |dx| {
                for (dst, &src) in idx.iter().enumerate() {
                    add_into(
                        &mut dx[src * row_len..(src + 1) * row_len],
                        &g[dst * row_len..(dst + 1) * row_len],
                    );
                }
            }),
            Op::Transpose(x) => {
                let (r, c) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                acc(*x, &mut |dx| {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |dx| add_into(dx, g)),
            Op::Conv { x, w, b, spec, geom } => {
                let plane = geom.out_h * geom.out_w;
                acc(*b, &mut |db| {
                    for (d, chan) in db.iter_mut().zip(g.chunks_exact(plane)) {
                        *d += chan.iter().sum::<f64>();
                    }
                });
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                if spec.depthwise {
                    let mut dx_buf = self.wants(*x).then(|| vec![0.0; xv.len()]);
                    let mut dw_buf = self.wants(*w).then(|| vec![0.0; wv.len()]);
                    kernels::depthwise_backward(geom, xv, wv, g, dx_buf.as_deref_mut(), dw_buf.as_deref_mut());
                    if let Some(d) = dx_buf {
                        acc(*x, &mut |dx| add_into(dx, &d));
                    }
                    if let Some(d) = dw_buf {
                        acc(*w, &mut |dw| add_into(dw, &d));
                    }
                } else {
                    let ck = geom.col_rows();
                    let gm = MatRef::new(g, spec.out_channels, plane);
                    if self.wants(*w) {
                        let cols = kernels::im2col(geom, xv);
                        acc(*w, &mut |dw| kernels::gemm(gm, MatRef::new(&cols, ck, plane).t(), dw, 1.0));
                    }
                    if self.wants(*x) {
                        let mut dcols = vec![0.0; ck * plane];
                        kernels::gemm(MatRef::new(wv, spec.out_channels, ck).t(), gm, &mut dcols, 0.0);
                        acc(*x, &mut |dx| kernels::col2im(geom, &dcols, dx));
                    }
                }
            }
            Op::ConvTranspose { x, w, b, spec, geom } => {
                let plane = geom.height * geom.width;
                acc(*b, &mut |db| {
                    for (d, chan) in db.iter_mut().zip(g.chunks_exact(plane)) {
                        *d += chan.iter().sum::<f64>();
                    }
                });
                let ck = geom.col_rows();
                let in_plane = geom.out_h * geom.out_w;
                let dcols = kernels::im2col(geom, g);
                let dcm = MatRef::new(&dcols, ck, in_plane);
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                acc(*x, &mut |dx| kernels::gemm(MatRef::new(wv, spec.in_channels, ck), dcm, dx, 1.0));
                acc(*w, &mut |dw| {
                    kernels::gemm(MatRef::new(xv, spec.in_channels, in_plane), dcm.t(), dw, 1.0)
                });
            }
            Op::Concat(a, b) => {
                let na = self.value(*a).len();
                acc(*a, &mut |da| add_into(da, &g[..na]));
                acc(*b, &mut |db| add_into(db, &g[na..]));
            }
            Op::Attention {
                q,
                k,
                v,
                bias,
                geom,
                probs,
            } => {
                let mut bufs: [Option<Vec<f64>>; 4] = Default::default();
                for (slot, var) in [Some(*q), Some(*k), Some(*v), *bias].into_iter().enumerate() {
                    if let Some(var) = var.filter(|&var| self.wants(var)) {
                        bufs[slot] = Some(vec![0.0; self.value(var).len()]);
                    }
                }
                let [dq, dk, dv, db] = &mut bufs;
                kernels::attention_backward(
                    geom,
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    g,
                    AttnGrads {
                        dq: dq.as_deref_mut(),
                        dk: dk.as_deref_mut(),
                        dv: dv.as_deref_mut(),
                        dbias: db.as_deref_mut(),
                    },
                );
                for (slot, var) in [Some(*q), Some(*k), Some(*v), *bias].into_iter().enumerate() {
                    if let (Some(var), Some(buf)) = (var, &bufs[slot]) {
                        acc(var, &mut |d| add_into(d, buf));
                    }
                }
            }
            Op::Penalty { pred, target, kind } => {
                let p = self.value(*pred).data();
                let scale = g[0] / p.len() as f64;
                acc(*pred, &mut |dp| {
                    for ((d, a), b) in dp.iter_mut().zip(p).zip(target.data()) {
                        *d += scale * kind.derivative(a - b);
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
